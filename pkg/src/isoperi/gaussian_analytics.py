"""Exact (quadrature-grade) scalar functionals of the Gaussian model.

Every quantity the concentration bounds consume reduces to a 1-D integral
against T = <X, theta1> ~ N(0, sigma^2) with sigma^2 = <theta1, Sigma theta1>.
The reduction holds because each integrand depends on x only through
<x, theta1> and the Gaussian potential is even, so conditional densities and
density ratios are functions of t alone:

    E[h(<X, theta1>)] = E_{T ~ N(0, sigma^2)}[h(T)].

Two integration routes are used:

* ``gauss_hermite`` (Golub-Welsch) for globally smooth integrands at unit
  scale, e.g. the label probability E g(T + theta0).
* a panelled Gauss-Legendre rule (``normal_expectation``) for integrands with
  kinks (exp(max{0,t}), exp(-|t|)) or features much narrower than sigma.
  Plain Gauss-Hermite converges only algebraically across a kink and cannot
  meet the 1e-9 doubling tolerance, so kinked integrands are split at the
  kink and each piece is integrated spectrally.

All evaluations are checked by doubling the order; disagreement beyond the
relative tolerance raises ``QuadratureError`` rather than returning a silently
inaccurate number.  Log-domain variants are provided for exponentially large
integrands (moment-generating functions at large signal).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import log_ndtr, logsumexp, ndtr

from .model_core import Covariance, ModelError, ModelSpec

__all__ = [
    "QuadratureRule",
    "QuadratureError",
    "ClippedDomainError",
    "MgfOverflowError",
    "KConstants",
    "gauss_hermite",
    "normal_cdf",
    "normal_expectation",
    "normal_log_expectation",
    "signal_variance",
    "mgf",
    "log_mgf",
    "mgf_num",
    "mgf_den",
    "log_mgf_num",
    "tilde_m_inverse",
    "p_exceed",
    "label_prob",
    "log_label_prob",
    "chi2_conditional",
    "k_constants",
]

DEFAULT_ORDER = 120
DEFAULT_RTOL = 1e-9
_TAIL_SIGMAS = 40.0  # Gaussian mass beyond 40 sigma is ~e^-800, below float64


class QuadratureError(RuntimeError):
    """Doubling the order moved the value by more than the tolerance."""


class ClippedDomainError(RuntimeError):
    """Integrand overflows on the effective domain (e.g. probit, huge bias)."""


class MgfOverflowError(OverflowError):
    """exp(<t, Sigma t>/2) exceeds float range; use the log-MGF variant."""


# ---------------------------------------------------------------------------
# Gauss-Hermite rule (Golub-Welsch), normalized to the N(0,1) weight
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights integrating f against N(0,1): E f(T) ~ sum w_i f(t_i)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite(order: int) -> QuadratureRule:
    """Gauss-Hermite rule via the symmetric tridiagonal Jacobi eigenproblem.

    Exact for polynomials up to degree 2*order - 1 against the standard
    normal weight.  Nodes are symmetrized so the rule treats even/odd parts
    exactly at float precision.
    """
    if not (1 <= order <= 500):
        raise ValueError(f"gauss_hermite order must be in [1, 500], got {order}")
    if order == 1:
        return QuadratureRule(1, np.zeros(1), np.ones(1))
    # Jacobi matrix for physicists' Hermite: off-diagonal sqrt(k/2)
    off = np.sqrt(np.arange(1, order) / 2.0)
    nodes_phys, vecs = eigh_tridiagonal(np.zeros(order), off)
    weights = vecs[0] ** 2  # rows of orthonormal eigenvectors: sums to 1
    nodes = np.sqrt(2.0) * nodes_phys  # rescale e^{-x^2} -> N(0,1)
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    if order % 2 == 1:
        nodes[order // 2] = 0.0
    return QuadratureRule(order, nodes, weights)


def normal_cdf(t):
    """Standard normal CDF via the erf-based scipy kernel (abs err <= 1e-14)."""
    return ndtr(np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# Panelled Gauss-Legendre integration against N(0, sigma^2)
# ---------------------------------------------------------------------------
def _panel_boundaries(sigma: float, kinks: Sequence[float]) -> np.ndarray:
    """Panel edges resolving both unit-scale features and the sigma scale."""
    hi = _TAIL_SIGMAS * sigma
    pts = {0.0, hi, -hi}
    # unit-scale dyadic ladder out to the tail (link/kink features live at O(1))
    b = 1.0
    while b < hi:
        pts.add(b)
        pts.add(-b)
        b *= 2.0
    # sigma-spaced ladder so no panel spans too many Gaussian e-folds
    for k in range(1, int(_TAIL_SIGMAS) + 1):
        pts.add(k * sigma)
        pts.add(-k * sigma)
    for k in kinks:
        if -hi < k < hi:
            pts.add(float(k))
    return np.array(sorted(pts))


def _panel_points(sigma: float, kinks: Sequence[float], order: int):
    """Nodes t and log-weights log(w * phi_sigma(t)) for the panelled rule."""
    edges = _panel_boundaries(sigma, kinks)
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    logw = (np.log(half[:, None] * gl_w[None, :])).ravel()
    log_phi = -0.5 * (t / sigma) ** 2 - 0.5 * np.log(2.0 * np.pi * sigma**2)
    return t, logw + log_phi


def _checked(evaluate: Callable[[int], float], order: int, rtol: float,
             log_domain: bool, context: str) -> float:
    coarse = evaluate(order)
    fine = evaluate(2 * order)
    if log_domain:
        # difference of logs is the relative error of the underlying value
        err = abs(fine - coarse)
    else:
        err = abs(fine - coarse) / max(abs(fine), 1e-300)
    if not np.isfinite(fine) or err > rtol:
        raise QuadratureError(
            f"{context}: orders {order} and {2 * order} disagree "
            f"(relative {err:.3e} > {rtol:.1e})"
        )
    return fine


def normal_expectation(fn, sigma: float, kinks: Sequence[float] = (),
                       order: int = DEFAULT_ORDER, rtol: float = DEFAULT_RTOL,
                       context: str = "normal_expectation") -> float:
    """E[fn(T)], T ~ N(0, sigma^2), with the order-doubling consistency check."""
    def evaluate(m):
        t, logw = _panel_points(sigma, kinks, m)
        return float(np.exp(logw) @ fn(t))

    return _checked(evaluate, order, rtol, log_domain=False, context=context)


def normal_log_expectation(log_fn, sigma: float, kinks: Sequence[float] = (),
                           order: int = DEFAULT_ORDER, rtol: float = DEFAULT_RTOL,
                           context: str = "normal_log_expectation") -> float:
    """log E[fn(T)] for nonnegative fn given log(fn); overflow-proof."""
    def evaluate(m):
        t, logw = _panel_points(sigma, kinks, m)
        return float(logsumexp(logw + log_fn(t)))

    return _checked(evaluate, order, rtol, log_domain=True, context=context)


def _gh_expectation(fn, sigma: float, order: int = DEFAULT_ORDER,
                    rtol: float = DEFAULT_RTOL, context: str = "gh") -> float:
    """E[fn(sigma * U)], U ~ N(0,1), by Gauss-Hermite with doubling check."""
    def evaluate(m):
        rule = gauss_hermite(min(m, 500))
        return float(rule.weights @ fn(sigma * rule.nodes))

    return _checked(evaluate, order, rtol, log_domain=False, context=context)


# ---------------------------------------------------------------------------
# Scalar functionals
# ---------------------------------------------------------------------------
def signal_variance(model: ModelSpec) -> float:
    """sigma^2 = <theta1, Sigma theta1>."""
    return model.signal_variance


def _require_central(model: ModelSpec, what: str) -> None:
    if np.any(model.mu):
        raise ModelError(
            f"{what} is defined for the central (mu = 0) form; "
            "fold mu into the effective bias via ModelSpec.centered()"
        )


def mgf(model: ModelSpec, t: Sequence[float]) -> float:
    """Moment-generating function E exp(<X, t>) = exp(<t, Sigma t>/2)."""
    _require_central(model, "mgf")
    q = model.covariance.quad_form(np.asarray(t, dtype=float))
    if q > 1400.0:
        raise MgfOverflowError(
            f"<t, Sigma t> = {q:.4g} > 1400 overflows exp(); use log_mgf"
        )
    return float(np.exp(0.5 * q))


def log_mgf(model: ModelSpec, t: Sequence[float]) -> float:
    _require_central(model, "log_mgf")
    return 0.5 * model.covariance.quad_form(np.asarray(t, dtype=float))


def log_mgf_num(model: ModelSpec, scale: float, order: int = DEFAULT_ORDER) -> float:
    """log E exp(max{0, <X, scale * theta1>}); >= 0, finite for any scale."""
    _require_central(model, "mgf_num")
    s = abs(scale) * np.sqrt(model.signal_variance)
    if s == 0.0:
        return 0.0
    return normal_log_expectation(
        lambda t: np.maximum(0.0, t), s, kinks=(0.0,), order=order,
        context="mgf_num",
    )


def mgf_num(model: ModelSpec, scale: float, order: int = DEFAULT_ORDER) -> float:
    """E exp(max{0, T_scale}), T_scale ~ N(0, scale^2 sigma^2); always >= 1."""
    return float(np.exp(log_mgf_num(model, scale, order)))


def mgf_den(model: ModelSpec, scale: float, order: int = DEFAULT_ORDER) -> float:
    """E exp(min{0, T_scale}); in (0, 1]."""
    _require_central(model, "mgf_den")
    s = abs(scale) * np.sqrt(model.signal_variance)
    if s == 0.0:
        return 1.0
    return normal_expectation(
        lambda t: np.exp(np.minimum(0.0, t)), s, kinks=(0.0,), order=order,
        context="mgf_den",
    )


def tilde_m_inverse(model: ModelSpec, order: int = DEFAULT_ORDER) -> float:
    """E exp(-|<X, theta1>|), the reciprocal of the folded MGF; in (0, 1]."""
    _require_central(model, "tilde_m_inverse")
    s = np.sqrt(model.signal_variance)
    if s == 0.0:
        return 1.0
    return normal_expectation(
        lambda t: np.exp(-np.abs(t)), s, kinks=(0.0,), order=order,
        context="tilde_m_inverse",
    )


def p_exceed(model: ModelSpec) -> float:
    """P(<X, theta1> >= |theta0|) for the central Gaussian.

    Degenerate corner sigma = 0: returns 1/2 when theta0 = 0 (rather than 1)
    so the strong-signal residual stays finite and continuous in theta0;
    returns 0 when theta0 != 0.
    """
    s = np.sqrt(model.signal_variance)
    t0 = abs(model.theta0)
    if s == 0.0:
        return 0.5 if t0 == 0.0 else 0.0
    return float(1.0 - ndtr(t0 / s))


def log_label_prob(model: ModelSpec, y: int, order: int = DEFAULT_ORDER) -> float:
    """log p_Y(y) = log E g(y*(T + theta0)), computed so tiny tails survive."""
    if y not in (+1, -1):
        raise ValueError("y must be +1 or -1")
    _require_central(model, "label_prob")
    t0 = y * model.theta0
    if t0 == 0.0:
        return -np.log(2.0)
    s = np.sqrt(model.signal_variance)
    link = model.link
    if s == 0.0:
        return float(link.log_value(t0))
    # T is symmetric, so E g(y(T + theta0)) = E g(T + y*theta0)
    return normal_log_expectation(
        lambda t: link.log_value(t + t0), s, kinks=(-t0,), order=order,
        context=f"label_prob(y={y:+d})",
    )


def label_prob(model: ModelSpec, order: int = DEFAULT_ORDER) -> float:
    """p_Y(+1) = E g(T + theta0); exactly 1/2 at theta0 = 0 by symmetry."""
    if model.theta0 == 0.0:
        _require_central(model, "label_prob")
        return 0.5
    return float(np.exp(log_label_prob(model, +1, order=order)))


def chi2_conditional(model: ModelSpec, y: int, order: int = DEFAULT_ORDER) -> float:
    """chi^2(P_Z || P_{Z|Y}(.|y)) via the 1-D reduction.

    With p_y = label_prob of y and g_y(t) = g(t + y*theta0),

        chi^2 + 1 = p_y * E_T[(g(T+theta0) + g(T-theta0))^2 / g_y(T)],

    which follows from the conditional densities: both P_Z and P_{Z|Y}
    share the even Gaussian factor, so the density ratio depends on z only
    through t = <z, theta1>.  Zero at theta0 = 0 (independence) and at
    sigma = 0 (labels carry no information about Z).
    """
    if y not in (+1, -1):
        raise ValueError("y must be +1 or -1")
    _require_central(model, "chi2_conditional")
    t0 = model.theta0
    s = np.sqrt(model.signal_variance)
    if t0 == 0.0 or s == 0.0:
        return 0.0
    link = model.link
    p_y = label_prob(model, order=order)
    if y < 0:
        p_y = 1.0 - p_y

    def log_integrand(t):
        lg_p = link.log_value(t + t0)
        lg_m = link.log_value(t - t0)
        return 2.0 * np.logaddexp(lg_p, lg_m) - link.log_value(t + y * t0)

    log_e = normal_log_expectation(
        log_integrand, s, kinks=(-t0, t0, 0.0), order=order,
        context=f"chi2_conditional(y={y:+d})",
    )
    total = np.log(p_y) + log_e
    if total > 700.0:
        raise ClippedDomainError(
            "chi-square integrand overflows (log value "
            f"{total:.1f}); typically probit with extreme bias"
        )
    return max(0.0, float(np.expm1(total)))


# ---------------------------------------------------------------------------
# Isoperimetric / dependence constants
# ---------------------------------------------------------------------------
STRATEGIES_P = ("bakry_emery", "kls_sqrt_log", "kls_trace", "user_override")
STRATEGIES_LS = ("bakry_emery", "user_override")


@dataclass(frozen=True)
class KConstants:
    """The five constants the weighted functional inequalities consume.

    k_p / k_ls bound the Poincare / log-Sobolev constants of the conditional
    laws of Z given Y; k_chi2 is the worst chi-square divergence of the Z
    marginal from those conditionals (zero iff independence); k_v is the
    label variance 4 p (1-p); k_u the deviation from uniform labels
    max(1/p, 1/(1-p)).  Provenance tags record how k_p / k_ls were obtained.
    """

    k_p: float
    k_ls: float
    k_chi2: float
    k_v: float
    k_u: float
    p_plus: float
    strategy_p: str
    strategy_ls: str
    c_kls_user: Optional[float] = None
    c_kls_assumed: bool = False
    # overflow-safe companion of k_u (k_u itself is inf once a label
    # probability underflows, around |theta0| ~ 745 for the logistic link)
    log_k_u: float = None

    def to_json(self) -> dict:
        return {
            "k_p": self.k_p,
            "k_ls": self.k_ls,
            "k_chi2": self.k_chi2,
            "k_v": self.k_v,
            "k_u": self.k_u,
            "p_plus": self.p_plus,
            "strategy_p": self.strategy_p,
            "strategy_ls": self.strategy_ls,
            "c_kls_user": self.c_kls_user,
            "c_kls_assumed": self.c_kls_assumed,
            "log_k_u": self.log_k_u,
        }


def k_constants(
    model: ModelSpec,
    strategy_p: str = "bakry_emery",
    strategy_ls: str = "bakry_emery",
    c_kls_user: Optional[float] = None,
    k_p_user: Optional[float] = None,
    k_ls_user: Optional[float] = None,
    order: int = DEFAULT_ORDER,
) -> KConstants:
    """Compute the constants for a model (mu folded into the bias first).

    Strategies for k_p: "bakry_emery" (lambda_max(Sigma); strong convexity of
    the conditional potential, the link's log-concavity only helps),
    "kls_sqrt_log" (c * sqrt(log d) * lambda_max(E[XX^T])), "kls_trace"
    (c' * tr((E[XX^T])^2)^(1/2)).  The KLS-route absolute constants are not
    pinned by theory; when omitted they default to 1.0 and the result is
    tagged ``c_kls_assumed`` so reports can flag it loudly.
    """
    if strategy_p not in STRATEGIES_P:
        raise ValueError(f"strategy_p must be one of {STRATEGIES_P}")
    if strategy_ls not in STRATEGIES_LS:
        raise ValueError(f"strategy_ls must be one of {STRATEGIES_LS}")
    central = model.centered()
    cov: Covariance = central.covariance
    lam = cov.lambda_max

    c_assumed = False
    if strategy_p in ("kls_sqrt_log", "kls_trace") and c_kls_user is None:
        c_kls_user = 1.0
        c_assumed = True

    if strategy_p == "bakry_emery":
        k_p = lam
    elif strategy_p == "kls_sqrt_log":
        k_p = c_kls_user * np.sqrt(np.log(max(central.dim, 2))) * lam
    elif strategy_p == "kls_trace":
        k_p = c_kls_user * np.sqrt(cov.trace_square)
    else:
        if k_p_user is None:
            raise ValueError("user_override strategy needs k_p_user")
        k_p = float(k_p_user)

    if strategy_ls == "bakry_emery":
        k_ls = lam
    else:
        if k_ls_user is None:
            raise ValueError("user_override strategy needs k_ls_user")
        k_ls = float(k_ls_user)

    if central.theta0 == 0.0:
        log_p_plus = log_p_minus = -np.log(2.0)
    else:
        log_p_plus = log_label_prob(central, +1, order=order)
        log_p_minus = log_label_prob(central, -1, order=order)
    p_plus = float(np.exp(log_p_plus))
    k_v = float(np.exp(np.log(4.0) + log_p_plus + log_p_minus))
    log_k_u = -min(log_p_plus, log_p_minus)
    k_u = float(np.exp(log_k_u)) if log_k_u < 709.0 else np.inf
    if central.theta0 == 0.0 or central.signal_variance == 0.0:
        k_chi2 = 0.0
    else:
        k_chi2 = max(chi2_conditional(central, +1, order=order),
                     chi2_conditional(central, -1, order=order))

    return KConstants(
        k_p=float(k_p), k_ls=float(k_ls), k_chi2=float(k_chi2),
        k_v=k_v, k_u=k_u, p_plus=p_plus,
        strategy_p=strategy_p, strategy_ls=strategy_ls,
        c_kls_user=c_kls_user, c_kls_assumed=c_assumed,
        log_k_u=float(log_k_u),
    )
