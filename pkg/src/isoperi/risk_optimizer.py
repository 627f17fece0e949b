"""Empirical risk, population risk, and the sup-gap optimizer.

The random variable every bound concerns is

    sup_{(w,b): ||w|| <= R_w, |b| <= R_b} ( R(w,b) - R_n(w,b) ),

with R_n the empirical risk on one dataset and R the population risk.

Population risk reduces to a bivariate Gaussian integral: with
S = <X, w> and T = <X, theta1>,

    R(w,b) = E[ g(T + theta0) * loss(S + b) + g(-(T + theta0)) * loss(-(S + b)) ],

and (S, T) is bivariate normal with means (<mu, w>, <mu, theta1>) and
covariance [[a, rho], [rho, sigma^2]] = [[wSw, wS theta1], [., theta1 S theta1]].
Whitening T = m_T + sigma*u1, S = m_S + c1*u1 + c2*u2 with c1 = rho/sigma and
c2 = sqrt(a - rho^2/sigma^2) turns R into a tensorized Gauss-Hermite sum.
For the hinge loss the inner (u2) integral is exact:

    E max(0, z - tau*V) = z*Phi(z/tau) + tau*phi(z/tau),   V ~ N(0,1),

so only the smooth outer integral is quadratured.  When the 2x2 covariance
is numerically singular (w aligned with theta1, w = 0, or theta1 = 0) the
exact rank-one conditional form is used instead.

Computing population risk by quadrature rather than a held-out Monte-Carlo
sample removes a second noise source from tail verification, so exceedance
counting tests only the concentration statement.

The sup over the ball is a difference-of-convex maximization (both R and
R_n are convex in (w,b) for convex losses), attacked by multi-start
projected (sub)gradient ascent with boundary-biased starts; a d <= 3
exhaustive grid oracle cross-checks it.  All trajectories for one call run
as one batched iteration, so restarts cost one vectorized evaluation each.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr

from .gaussian_analytics import gauss_hermite
from .model_core import ConstraintSet, Dataset, LossSpec, ModelSpec, SeedLike

__all__ = [
    "OptimizerConfig",
    "SupResult",
    "PopulationRisk",
    "empirical_risk",
    "population_risk",
    "gap",
    "sup_gap",
    "grid_oracle_sup",
    "gradient_check",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    # clipped: beyond 39 sigma the density underflows anyway
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(np.clip(x, -39.0, 39.0)))


def _psi_relu_gauss(z, tau):
    """E max(0, z + tau*V), V ~ N(0,1); smooth in both arguments for tau > 0."""
    t = np.maximum(tau, 1e-300)
    r = z / t
    return z * ndtr(r) + t * _phi(r)


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 24
    max_iters: int = 400
    step_init: float = 0.5
    step_decay: float = 0.97
    tol: float = 1e-7
    quad_order_2d: int = 60

    def __post_init__(self):
        if min(self.restarts, self.max_iters) < 1:
            raise ValueError("restarts and max_iters must be positive")
        if not (self.step_init > 0 and 0 < self.step_decay < 1):
            raise ValueError("need step_init > 0 and step_decay in (0,1)")
        if not (0 < self.tol < 1):
            raise ValueError("tol must be in (0,1)")
        if self.quad_order_2d < 1:
            raise ValueError("quad_order_2d must be positive")

    def to_json(self) -> dict:
        return {
            "restarts": self.restarts,
            "max_iters": self.max_iters,
            "step_init": self.step_init,
            "step_decay": self.step_decay,
            "tol": self.tol,
            "quad_order_2d": self.quad_order_2d,
        }

    @staticmethod
    def from_json(obj: dict) -> "OptimizerConfig":
        return OptimizerConfig(**obj)


@dataclass
class SupResult:
    value: float
    argmax_w: np.ndarray
    argmax_b: float
    starts_used: int
    converged: bool


# ---------------------------------------------------------------------------
# Population risk
# ---------------------------------------------------------------------------
class PopulationRisk:
    """Batched evaluator for R(w, b) and its gradient.

    Everything that does not depend on w is precomputed: the quadrature rule,
    the T-nodes t_i = m_T + sigma*u_i, and the conditional label weights
    gp_i = g(t_i + theta0), gm_i = 1 - gp_i.
    """

    def __init__(self, model: ModelSpec, loss: LossSpec, quad_order: int = 60):
        self.model = model
        self.loss = loss
        rule = gauss_hermite(quad_order)
        self.u = rule.nodes
        self.uw = rule.weights
        self.sigma2 = model.signal_variance
        self.sigma = math.sqrt(self.sigma2)
        self.m_t = float(model.mu @ model.theta1)
        self.s_theta1 = model.covariance.matvec(model.theta1)
        link, t0 = model.link, model.theta0
        if self.sigma > 0:
            t = self.m_t + self.sigma * self.u
            self.gp = np.asarray(link.value(t + t0))
            self.gm = np.asarray(link.value(-(t + t0)))
        else:
            self.gp = float(link.value(self.m_t + t0))
            self.gm = float(link.value(-(self.m_t + t0)))

    # -- geometry of (S, T) -------------------------------------------------
    def _quad_forms(self, W: np.ndarray):
        cov = self.model.covariance
        if cov.kind == "spherical":
            sw = cov.value * W
        elif cov.kind == "diagonal":
            sw = W * cov.value[None, :]
        else:
            sw = W @ cov.value
        a = np.einsum("kd,kd->k", W, sw)
        rho = W @ self.s_theta1
        m_s = W @ self.model.mu
        return m_s, a, rho, sw

    def _degenerate_mask(self, a, rho):
        det = a * self.sigma2 - rho**2
        return det < 1e-14 * (a + self.sigma2) ** 2

    # -- values --------------------------------------------------------------
    def value_batch(self, W: np.ndarray, B: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        B = np.atleast_1d(np.asarray(B, dtype=float))
        m_s, a, rho, _ = self._quad_forms(W)
        if self.sigma == 0.0:
            return self._value_nosig(m_s, a, B)
        c1 = rho / self.sigma
        c2sq = np.maximum(a - c1**2, 0.0)
        deg = self._degenerate_mask(a, rho)
        out = np.empty(len(B))
        full = ~deg
        if np.any(full):
            out[full] = self._value_full(m_s[full], c1[full],
                                         np.sqrt(c2sq[full]), B[full])
        if np.any(deg):
            out[deg] = self._value_rank1(m_s[deg], c1[deg], B[deg])
        return out

    def _value_nosig(self, m_s, a, B):
        # T constant: labels carry no input information
        sa = np.sqrt(np.maximum(a, 0.0))
        loss = self.loss
        if loss.tag == "hinge":
            zp = 1.0 - (m_s + B)
            zm = 1.0 + (m_s + B)
            return self.gp * _psi_relu_gauss(zp, sa) + self.gm * _psi_relu_gauss(zm, sa)
        args = m_s[:, None] + sa[:, None] * self.u[None, :] + B[:, None]
        return (self.gp * (loss.value(args) @ self.uw)
                + self.gm * (loss.value(-args) @ self.uw))

    def _value_rank1(self, m_s, c1, B):
        # S determined by T: exact 1-D conditional form
        s = m_s[:, None] + c1[:, None] * self.u[None, :] + B[:, None]
        lp = self.loss.value(s)
        lm = self.loss.value(-s)
        return (lp * (self.uw * self.gp)[None, :]).sum(axis=1) + \
               (lm * (self.uw * self.gm)[None, :]).sum(axis=1)

    def _value_full(self, m_s, c1, c2, B):
        s = m_s[:, None] + c1[:, None] * self.u[None, :] + B[:, None]  # (K, q)
        if self.loss.tag == "hinge":
            tau = c2[:, None]
            val = (self.gp[None, :] * _psi_relu_gauss(1.0 - s, tau)
                   + self.gm[None, :] * _psi_relu_gauss(1.0 + s, tau))
            return val @ self.uw
        if self.loss.tag == "logistic_loss":
            # loss(-x) = loss(x) + x: one softplus sweep; the linear part
            # integrates exactly (the u2 component is odd and drops out)
            args = s[:, :, None] + c2[:, None, None] * self.u[None, None, :]
            both = self.loss.value(args) @ self.uw
            lin = s @ (self.uw * self.gm)
            return (both * (self.uw * (self.gp + self.gm))[None, :]).sum(axis=1) + lin
        args = s[:, :, None] + c2[:, None, None] * self.u[None, None, :]
        lp = self.loss.value(args) @ self.uw
        lm = self.loss.value(-args) @ self.uw
        return ((self.gp * self.uw)[None, :] * lp).sum(axis=1) + \
               ((self.gm * self.uw)[None, :] * lm).sum(axis=1)

    # -- gradients -----------------------------------------------------------
    def grad_batch(self, W: np.ndarray, B: np.ndarray):
        """Analytic gradient of the quadrature-discretized risk.

        The chain runs through (m_S, a, rho) -> (c1, c2), so the finite
        difference of ``value_batch`` reproduces it to truncation error.
        """
        W = np.atleast_2d(np.asarray(W, dtype=float))
        B = np.atleast_1d(np.asarray(B, dtype=float))
        K, d = W.shape
        m_s, a, rho, sw = self._quad_forms(W)
        mu = self.model.mu
        gw = np.zeros((K, d))
        gb = np.zeros(K)
        if self.sigma == 0.0:
            e1, ev = self._channels_nosig(m_s, a, B)
            sa = np.sqrt(np.maximum(a, 0.0))
            gw = e1[:, None] * mu[None, :]
            ok = sa > 1e-150
            gw[ok] += (ev[ok] / sa[ok])[:, None] * sw[ok]
            return gw, e1
        c1 = rho / self.sigma
        c2sq = np.maximum(a - c1**2, 0.0)
        deg = self._degenerate_mask(a, rho)
        full = ~deg
        if np.any(full):
            idx = np.where(full)[0]
            e1, eu1, eu2 = self._channels_full(m_s[idx], c1[idx],
                                               np.sqrt(c2sq[idx]), B[idx])
            gb[idx] = e1
            c2 = np.sqrt(np.maximum(c2sq[idx], 1e-300))
            # dS/dw = mu + u1 * Sigma theta1 / sigma + u2 * grad(c2)
            ortho = sw[idx] - (rho[idx] / self.sigma2)[:, None] * self.s_theta1[None, :]
            gw[idx] = (e1[:, None] * mu[None, :]
                       + (eu1 / self.sigma)[:, None] * self.s_theta1[None, :]
                       + (eu2 / c2)[:, None] * ortho)
        if np.any(deg):
            idx = np.where(deg)[0]
            e1, eu1 = self._channels_rank1(m_s[idx], c1[idx], B[idx])
            gb[idx] = e1
            gw[idx] = (e1[:, None] * mu[None, :]
                       + (eu1 / self.sigma)[:, None] * self.s_theta1[None, :])
        return gw, gb

    def _channels_nosig(self, m_s, a, B):
        # returns (e1, ev): gradient is e1 * mu + (ev / sqrt(a)) * Sigma w
        sa = np.sqrt(np.maximum(a, 0.0))
        if self.loss.tag == "hinge":
            zp = 1.0 - (m_s + B)
            zm = 1.0 + (m_s + B)
            tau = np.maximum(sa, 1e-300)
            e1 = -self.gp * ndtr(zp / tau) + self.gm * ndtr(zm / tau)
            ev = self.gp * _phi(zp / tau) + self.gm * _phi(zm / tau)
            return e1, ev
        args = m_s[:, None] + sa[:, None] * self.u[None, :] + B[:, None]
        dp = self.loss.subgradient(args)
        dm = self.loss.subgradient(-args)
        core = self.gp * dp - self.gm * dm
        e1 = core @ self.uw
        ev = core @ (self.uw * self.u)
        return e1, ev

    def _channels_rank1(self, m_s, c1, B):
        s = m_s[:, None] + c1[:, None] * self.u[None, :] + B[:, None]
        dp = self.loss.subgradient(s)
        dm = self.loss.subgradient(-s)
        core = self.gp[None, :] * dp - self.gm[None, :] * dm
        e1 = core @ self.uw
        eu1 = core @ (self.uw * self.u)
        return e1, eu1

    def _channels_full(self, m_s, c1, c2, B):
        s = m_s[:, None] + c1[:, None] * self.u[None, :] + B[:, None]
        if self.loss.tag == "hinge":
            tau = np.maximum(c2, 1e-300)[:, None]
            rp = (1.0 - s) / tau
            rm = (1.0 + s) / tau
            # loss'(y(S+b)) integrated in u2: -Phi((1 - y s)/tau) times y-sign
            core = -self.gp[None, :] * ndtr(rp) + self.gm[None, :] * ndtr(rm)
            e1 = core @ self.uw
            eu1 = core @ (self.uw * self.u)
            # the u2 channel is d psi / d tau = phi at both label signs
            tchan = self.gp[None, :] * _phi(rp) + self.gm[None, :] * _phi(rm)
            eu2 = tchan @ self.uw
            return e1, eu1, eu2
        args = s[:, :, None] + c2[:, None, None] * self.u[None, None, :]
        dp = self.loss.subgradient(args)
        dm = self.loss.subgradient(-args)
        core = self.gp[None, :, None] * dp - self.gm[None, :, None] * dm
        e1 = np.einsum("kij,i,j->k", core, self.uw, self.uw)
        eu1 = np.einsum("kij,i,j->k", core, self.uw * self.u, self.uw)
        eu2 = np.einsum("kij,i,j->k", core, self.uw, self.uw * self.u)
        return e1, eu1, eu2

    # -- scalar front ends ---------------------------------------------------
    def value(self, w, b: float) -> float:
        return float(self.value_batch(np.asarray(w, dtype=float)[None, :],
                                      np.array([b]))[0])

    def grad(self, w, b: float):
        gw, gb = self.grad_batch(np.asarray(w, dtype=float)[None, :], np.array([b]))
        return gw[0], float(gb[0])

    # -- per-direction profile for the grid oracle ---------------------------
    def value_profile(self, unit: np.ndarray, r_grid: np.ndarray,
                      b_grid: np.ndarray) -> np.ndarray:
        """R(r * unit, b) on the (r, b) grid; (len(r), len(b)) array.

        For w = r*u all reduction coefficients are linear in r, so the
        quadrature nodes base_ij = m_S(u) + c1(u) u1_i + c2(u) u2_j are fixed
        per direction and the grid only rescales and shifts them.
        """
        unit = np.asarray(unit, dtype=float)
        m_su = float(unit @ self.model.mu)
        a_u = self.model.covariance.quad_form(unit)
        rho_u = self.model.covariance.cross_form(unit, self.model.theta1)
        loss = self.loss
        nb = len(b_grid)
        out = np.empty((len(r_grid), nb))
        if self.sigma == 0.0:
            sa = math.sqrt(max(a_u, 0.0))
            for ti, r in enumerate(r_grid):
                ms = r * m_su + b_grid
                if loss.tag == "hinge":
                    out[ti] = (self.gp * _psi_relu_gauss(1.0 - ms, abs(r) * sa)
                               + self.gm * _psi_relu_gauss(1.0 + ms, abs(r) * sa))
                else:
                    args = ms[:, None] + abs(r) * sa * self.u[None, :]
                    out[ti] = (self.gp * (loss.value(args) @ self.uw)
                               + self.gm * (loss.value(-args) @ self.uw))
            return out
        c1u = rho_u / self.sigma
        c2u = math.sqrt(max(a_u - c1u**2, 0.0))
        wgp = self.uw * self.gp
        wgm = self.uw * self.gm
        base1 = m_su + c1u * self.u  # (q,)
        if loss.tag == "hinge":
            for ti, r in enumerate(r_grid):
                s = r * base1
                tau = abs(r) * c2u
                sb = s[:, None] + b_grid[None, :]
                out[ti] = (wgp @ _psi_relu_gauss(1.0 - sb, tau)
                           + wgm @ _psi_relu_gauss(1.0 + sb, tau))
            return out
        # smooth losses: flatten the 2-D nodes once and sweep all radii
        base2 = (base1[:, None] + c2u * self.u[None, :]).ravel()  # (q*q,)
        vp = np.outer(wgp, self.uw).ravel()
        vm = np.outer(wgm, self.uw).ravel()
        args = (r_grid[:, None, None] * base2[None, :, None]
                + b_grid[None, None, :])  # (nr, q*q, nb)
        if loss.tag == "logistic_loss":
            # loss(-x) = loss(x) + x collapses the second sweep to its
            # exact linear moment
            out = np.einsum("k,rkb->rb", vp + vm, loss.value(args))
            out += np.einsum("k,rkb->rb", vm, args)
            return out
        out = np.einsum("k,rkb->rb", vp, loss.value(args))
        out += np.einsum("k,rkb->rb", vm, loss.value(-args))
        return out


# ---------------------------------------------------------------------------
# Risks and the gap
# ---------------------------------------------------------------------------
def empirical_risk(data: Dataset, loss: LossSpec, w, b: float) -> float:
    """(1/n) sum loss(Y_i (<X_i, w> + b))."""
    margins = data.y * (data.x @ np.asarray(w, dtype=float) + b)
    return float(np.mean(loss.value(margins)))


def population_risk(model: ModelSpec, loss: LossSpec, w, b: float,
                    quad_order: int = 60) -> float:
    return PopulationRisk(model, loss, quad_order).value(w, b)


def gap(data: Dataset, model: ModelSpec, loss: LossSpec, w, b: float,
        quad_order: int = 60) -> float:
    """Population minus empirical risk at one hypothesis."""
    return population_risk(model, loss, w, b, quad_order) - empirical_risk(data, loss, w, b)


class _GapObjective:
    """Batched F(w, b) = sign * (R(w, b) - R_n(w, b)) and its gradient."""

    def __init__(self, data, model, loss, quad_order, sign=1.0):
        self.pop = PopulationRisk(model, loss, quad_order)
        self.x = data.x
        self.y = data.y
        self.loss = loss
        self.sign = sign

    def value(self, W, B):
        margins = self.y[None, :] * (W @ self.x.T + B[:, None])
        emp = self.loss.value(margins).mean(axis=1)
        return self.sign * (self.pop.value_batch(W, B) - emp)

    def grad(self, W, B):
        margins = self.y[None, :] * (W @ self.x.T + B[:, None])
        dcore = self.loss.subgradient(margins) * self.y[None, :]
        emp_gw = dcore @ self.x / self.x.shape[0]
        emp_gb = dcore.mean(axis=1)
        pop_gw, pop_gb = self.pop.grad_batch(W, B)
        return self.sign * (pop_gw - emp_gw), self.sign * (pop_gb - emp_gb)


def _project(W, B, constraints: ConstraintSet):
    norms = np.linalg.norm(W, axis=1)
    scale = np.where(norms > constraints.r_w,
                     constraints.r_w / np.maximum(norms, 1e-300), 1.0)
    return W * scale[:, None], np.clip(B, -constraints.r_b, constraints.r_b)


def _starts(model: ModelSpec, constraints: ConstraintSet, k: int,
            rng: np.random.Generator):
    d = model.dim
    rw, rb = constraints.r_w, constraints.r_b
    W = np.zeros((k, d))
    B = np.zeros(k)
    theta_norm = float(np.linalg.norm(model.theta1))
    row = 1
    if row < k and theta_norm > 0:
        W[row] = rw * model.theta1 / theta_norm
        row += 1
    if row < k and theta_norm > 0:
        W[row] = -rw * model.theta1 / theta_norm
        row += 1
    while row < k:
        v = rng.standard_normal(d)
        nv = np.linalg.norm(v)
        if nv > 0:
            W[row] = rw * v / nv
            B[row] = rng.uniform(-rb, rb) if rb > 0 else 0.0
            row += 1
    return W, B


def sup_gap(data: Dataset, model: ModelSpec, loss: LossSpec,
            constraints: ConstraintSet, cfg: OptimizerConfig,
            seed: SeedLike, negate: bool = False,
            audit_points: int = 0, trace_file: Optional[str] = None) -> SupResult:
    """Maximize the gap over the ball by batched multi-start projected ascent.

    Maxima of difference-of-convex objectives over balls frequently sit on
    the boundary, so starts are boundary-biased: the origin, +-R_w along the
    normalized signal direction, and R_w times random unit vectors.  The
    returned value is the best objective seen, a valid lower bound on the
    sup even when ``converged`` is False.
    """
    if constraints.r_w == 0.0 and constraints.r_b == 0.0:
        return SupResult(0.0, np.zeros(model.dim), 0.0, 0, True)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(ss))
    obj = _GapObjective(data, model, loss, cfg.quad_order_2d,
                        sign=-1.0 if negate else 1.0)
    W, B = _starts(model, constraints, cfg.restarts, rng)
    W, B = _project(W, B, constraints)
    f = obj.value(W, B)
    active = np.ones(len(B), dtype=bool)
    converged = False
    stall = 0
    trace = []
    for it in range(cfg.max_iters):
        if not np.any(active):
            converged = True
            break
        gw, gb = obj.grad(W, B)
        # normalize to unit length so the decaying schedule is a travel
        # budget independent of the objective's gradient scale; raw ascent
        # strands iterates when |grad| << 1
        gnorm = np.sqrt(np.einsum("kd,kd->k", gw, gw) + gb**2)
        ok = gnorm > 1e-300
        gw[ok] /= gnorm[ok, None]
        gb[ok] /= gnorm[ok]
        step = np.full(len(B), cfg.step_init * cfg.step_decay**it)
        improved = np.zeros(len(B), dtype=bool)
        trying = active & ok
        for _ in range(30):
            if not np.any(trying):
                break
            idx = np.where(trying)[0]
            Wn, Bn = _project(W[idx] + step[idx, None] * gw[idx],
                              B[idx] + step[idx] * gb[idx], constraints)
            fn = obj.value(Wn, Bn)
            better = fn > f[idx]
            take = idx[better]
            W[take], B[take], f[take] = Wn[better], Bn[better], fn[better]
            improved[take] = True
            rest = idx[~better]
            step[rest] *= 0.5
            trying[:] = False
            trying[rest] = True
        # freeze starts whose backtracking found no uphill step; they sit at
        # a (sub)stationary point for the current step scale
        active &= improved
        if trace_file is not None:
            k = int(np.argmax(f))
            trace.append((it, float(f[k]), float(step[k]),
                          float(np.linalg.norm(W[k]))))
        best_now = float(np.max(f))
        if it > 0 and best_now - best_prev < cfg.tol:
            stall += 1
            if stall >= 3:
                converged = True
                break
        else:
            stall = 0
        best_prev = best_now
    else:
        converged = not np.any(active)
    k = int(np.argmax(f))
    # the origin is feasible with F(0,0) = 0, so the sup is nonnegative
    value = float(f[k]) if negate else float(max(f[k], 0.0))
    result = SupResult(value=value, argmax_w=W[k].copy(), argmax_b=float(B[k]),
                       starts_used=len(B), converged=converged)
    if audit_points > 0:
        Wa = rng.standard_normal((audit_points, model.dim))
        norms = np.linalg.norm(Wa, axis=1)
        radii = constraints.r_w * rng.random(audit_points) ** (1.0 / max(model.dim, 1))
        Wa = Wa / np.maximum(norms, 1e-300)[:, None] * radii[:, None]
        Ba = rng.uniform(-constraints.r_b, constraints.r_b, audit_points) \
            if constraints.r_b > 0 else np.zeros(audit_points)
        fa = obj.value(Wa, Ba)
        if np.max(fa) > result.value + 1e-9:
            result = SupResult(float(np.max(fa)), Wa[int(np.argmax(fa))],
                               float(Ba[int(np.argmax(fa))]),
                               result.starts_used, False)
    if trace_file is not None:
        with open(trace_file, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "step", "w_norm"])
            writer.writerows(trace)
    return result


def grid_oracle_sup(data: Dataset, model: ModelSpec, loss: LossSpec,
                    constraints: ConstraintSet, resolution: int = 51,
                    refine: int = 3, quad_order: int = 60) -> float:
    """Exhaustive polar/Cartesian grid evaluation of the gap (d <= 3).

    A full pass enumerates gap(w, b) on a (direction x radius x intercept)
    grid; each ``refine`` stage re-grids a shrunken window around the
    incumbent maximum at the same resolution, so the located maximum is
    accurate to roughly (window / resolution)^2 * curvature.
    """
    d = model.dim
    if d > 3:
        raise ValueError("grid oracle supports d <= 3")
    if resolution > 201 or resolution < 2:
        raise ValueError("resolution must be in [2, 201]")
    if constraints.r_w == 0.0 and constraints.r_b == 0.0:
        return 0.0
    pop = PopulationRisk(model, loss, quad_order)
    x, y = data.x, data.y
    n = data.n
    rw, rb = constraints.r_w, constraints.r_b

    def directions(center=None, width=None):
        if d == 1:
            return np.array([[1.0]])
        if d == 2:
            if center is None:
                ang = np.linspace(0.0, 2.0 * np.pi, resolution, endpoint=False)
            else:
                ang = center + np.linspace(-width, width, resolution)
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        if center is None:
            th = np.linspace(0.0, np.pi, resolution)
            ph = np.linspace(0.0, 2.0 * np.pi, resolution, endpoint=False)
        else:
            th = np.clip(center[0] + np.linspace(-width, width, resolution), 0, np.pi)
            ph = center[1] + np.linspace(-width, width, resolution)
        tg, pg = np.meshgrid(th, ph, indexing="ij")
        return np.stack([np.sin(tg) * np.cos(pg),
                         np.sin(tg) * np.sin(pg),
                         np.cos(tg)], axis=-1).reshape(-1, 3)

    def angles_of(u):
        if d == 2:
            return math.atan2(u[1], u[0])
        return (math.acos(np.clip(u[2], -1, 1)), math.atan2(u[1], u[0]))

    def sweep(dirs, r_lo, r_hi, b_lo, b_hi):
        if d == 1:
            r_grid = np.linspace(max(r_lo, -rw), min(r_hi, rw), resolution)
        else:
            r_grid = np.linspace(max(r_lo, 0.0), min(r_hi, rw), resolution)
        b_grid = (np.linspace(max(b_lo, -rb), min(b_hi, rb), resolution)
                  if rb > 0 else np.zeros(1))
        best = (-np.inf, None, None, None)
        for u in dirs:
            pop_vals = pop.value_profile(u, r_grid, b_grid)
            proj = y * (x @ u)
            marg = proj[None, :, None] * r_grid[:, None, None] \
                + (y[None, :, None] * b_grid[None, None, :])
            emp = loss.value(marg).sum(axis=1) / n
            gaps = pop_vals - emp
            k = np.unravel_index(np.argmax(gaps), gaps.shape)
            if gaps[k] > best[0]:
                best = (float(gaps[k]), u, float(r_grid[k[0]]), float(b_grid[k[1]]))
        return best

    best = sweep(directions(), -rw, rw, -rb, rb)
    r_win, b_win = rw, max(rb, 1e-12)
    ang_win = np.pi
    for _ in range(refine):
        r_win /= 6.0
        b_win /= 6.0
        ang_win /= 6.0
        _, u0, r0, b0 = best
        dirs = (directions(angles_of(u0), ang_win) if d >= 2
                else np.array([[1.0]]))
        cand = sweep(dirs, r0 - r_win, r0 + r_win, b0 - b_win, b0 + b_win)
        if cand[0] > best[0]:
            best = cand
    return best[0]


def gradient_check(model: ModelSpec, loss: LossSpec, w, b: float,
                   quad_order: int = 60, h: float = 1e-5) -> float:
    """Max relative error of the analytic population gradient vs central FD."""
    pop = PopulationRisk(model, loss, quad_order)
    w = np.asarray(w, dtype=float)
    gw, gb = pop.grad(w, b)
    analytic = np.concatenate([gw, [gb]])
    numeric = np.empty_like(analytic)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        numeric[i] = (pop.value(w + e, b) - pop.value(w - e, b)) / (2 * h)
    numeric[-1] = (pop.value(w, b + h) - pop.value(w, b - h)) / (2 * h)
    scale = max(float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(analytic - numeric)) / scale)
