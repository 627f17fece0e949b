"""Concentration residuals for the uniform generalization error.

Each residual r(delta) satisfies, for its applicability regime,

    P( sup_T (R - R_n) >= E[sup_T (R - R_n)] + r(delta) ) <= delta.

Two tail modes exist for every regime:

* "poincare": exponential tails, r = sqrt(bracket / n) * log(3/delta);
* "logsobolev": Gaussian tails, r = sqrt(2 * bracket' * log(1/delta) / n),

where the brackets combine the per-sample energy caps L^2 R_w^2 / n and
L^2 R_b^2 / n with regime-specific multipliers built from the isoperimetric
constants and the Gaussian scalar functionals.

Regimes (the edge map): no_bias (theta0 = 0, via tensorization), small_bias
(factor exp(2 G |theta0|)), large_bias (logistic; factors decay in |theta0|
through the MGF), weak_signal (half-line MGFs M^num/M^den), strong_signal
(folded MGF and the exceedance probability), plus a generic route that feeds
the exact dependence constants through the weighted carre-du-champ
inequality for any conjugate pair (c, c* = c/(c-1)) and can beat the fixed
regimes by optimizing c.  Non-central inputs (mu != 0) go through the
mean-shift route: effective bias theta0 + <mu, theta1> and the intercept
slot enlarged to ||mu||^2 R_w^2 + R_b^2.

All exponential factors are carried in log space; residuals expose both
``value`` (possibly overflowing to inf) and ``log_value`` (always usable).
Inapplicability is data, not an exception: reports contain every entry with
a machine-readable reason.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .gaussian_analytics import (
    KConstants,
    log_mgf,
    log_mgf_num,
    mgf_den,
    p_exceed,
    tilde_m_inverse,
)
from .model_core import ConstraintSet, LossSpec, ModelSpec

__all__ = [
    "BoundInput",
    "Residual",
    "BoundReport",
    "rademacher_bound",
    "residual_no_bias",
    "residual_small_bias",
    "residual_large_bias",
    "residual_weak_signal",
    "residual_strong_signal",
    "residual_theorem1_generic",
    "residual_noncentral",
    "mcdiarmid_informational",
    "best_residual",
    "REGIME_NAMES",
]

MODES = ("poincare", "logsobolev")
REGIME_NAMES = ("no_bias", "small_bias", "large_bias", "weak_signal",
                "strong_signal", "generic", "generic_opt", "noncentral")

_LOG2 = math.log(2.0)
_LOG4 = math.log(4.0)
_LOG5 = math.log(5.0)
_LOG8 = math.log(8.0)


def _loge(x: float) -> float:
    """log with log(0) = -inf and no warning."""
    return -math.inf if x == 0.0 else math.log(x)


def _log_expm1(x: float) -> float:
    """log(e^x - 1) for x >= 0, stable at both ends."""
    if x == 0.0:
        return -math.inf
    if x > 36.0:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _log_bracket(log_a: float, log_rw2: float, log_b: float, log_rb2: float) -> float:
    """log(A * R_w^2 + B * R_b^2) from the logs of the four factors."""
    return _logaddexp(log_a + log_rw2, log_b + log_rb2)


# ---------------------------------------------------------------------------
# Inputs / outputs
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundInput:
    """Everything a residual evaluation needs."""

    model: ModelSpec
    constraints: ConstraintSet
    loss_lipschitz: float
    n: int
    delta: float
    kconst: KConstants
    mode: str = "logsobolev"

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.loss_lipschitz > 0):
            raise ValueError("loss_lipschitz must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def with_mode(self, mode: str) -> "BoundInput":
        return BoundInput(self.model, self.constraints, self.loss_lipschitz,
                          self.n, self.delta, self.kconst, mode)

    def with_delta(self, delta: float) -> "BoundInput":
        return BoundInput(self.model, self.constraints, self.loss_lipschitz,
                          self.n, delta, self.kconst, self.mode)


@dataclass(frozen=True)
class Residual:
    """One residual entry: a value (with its log) or a reason it is absent."""

    name: str
    mode: str
    log_value: float = math.inf
    applicable: bool = False
    reason: Optional[str] = None
    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        if not self.applicable:
            return math.nan
        if self.log_value == -math.inf:
            return 0.0
        if self.log_value > 709.0:
            return math.inf
        return math.exp(self.log_value)

    @staticmethod
    def ok(name, mode, log_value, **extras) -> "Residual":
        return Residual(name, mode, float(log_value), True, None, extras)

    @staticmethod
    def no(name, mode, reason) -> "Residual":
        return Residual(name, mode, math.inf, False, reason)

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "mode": self.mode,
            "applicable": self.applicable,
            "residual": None if not self.applicable else self.value,
            "log_residual": None if not self.applicable else self.log_value,
            "reason": self.reason,
        }
        if self.extras:
            out["extras"] = {k: v for k, v in sorted(self.extras.items())}
        return out


@dataclass
class BoundReport:
    """All residual entries for one (model, constraints, L, n, delta)."""

    entries: List[Residual]
    rademacher_expectation_bound: float
    best: Optional[Residual]
    inputs: dict
    functionals: dict

    def entry(self, name: str, mode: str) -> Residual:
        for e in self.entries:
            if e.name == name and e.mode == mode:
                return e
        raise KeyError(f"no entry ({name}, {mode})")

    def applicable_entries(self) -> List[Residual]:
        return [e for e in self.entries if e.applicable]

    def to_json(self) -> dict:
        return {
            "inputs": self.inputs,
            "functionals": self.functionals,
            "rademacher_expectation_bound": self.rademacher_expectation_bound,
            "entries": [e.to_json() for e in self.entries],
            "best": None if self.best is None else self.best.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, allow_nan=True)


# ---------------------------------------------------------------------------
# Mode plumbing
# ---------------------------------------------------------------------------
def _finish_poincare(name, inp, log_bracket, **extras) -> Residual:
    # r = L * sqrt(bracket / n) * log(3/delta)
    log_r = (math.log(inp.loss_lipschitz)
             + 0.5 * (log_bracket - math.log(inp.n))
             + math.log(math.log(3.0 / inp.delta)))
    return Residual.ok(name, "poincare", log_r, **extras)


def _finish_logsobolev(name, inp, log_bracket, log_front=_LOG2, **extras) -> Residual:
    # r = sqrt(front * L^2 * bracket * log(1/delta) / n); front defaults to 2
    ll = -math.log(inp.delta)
    if ll == 0.0:
        return Residual.ok(name, "logsobolev", -math.inf, **extras)
    log_r = 0.5 * (log_front + 2.0 * math.log(inp.loss_lipschitz)
                   + log_bracket + math.log(ll) - math.log(inp.n))
    return Residual.ok(name, "logsobolev", log_r, **extras)


def _central_or_reason(inp: BoundInput) -> Optional[str]:
    if np.any(inp.model.mu):
        return "non-central inputs (mu != 0): use the mean-shift route"
    return None


def _g_or_reason(inp: BoundInput) -> Optional[str]:
    if inp.model.link.lipschitz_of_log is None:
        return "inapplicable: log-link not Lipschitz (probit)"
    return None


def _logistic_or_reason(inp: BoundInput) -> Optional[str]:
    if inp.model.link.tag != "logistic":
        return "inapplicable: logistic link required"
    return None


# ---------------------------------------------------------------------------
# Expectation bound and informational baseline
# ---------------------------------------------------------------------------
def rademacher_bound(loss_lipschitz: float, r_w: float, r_b: float,
                     trace_second_moment: float, n: int) -> float:
    """2 L (R_w sqrt(tr E[XX^T]) + R_b) / sqrt(n)."""
    return 2.0 * loss_lipschitz * (r_w * math.sqrt(trace_second_moment) + r_b) / math.sqrt(n)


def mcdiarmid_informational(inp: BoundInput, loss: Optional[LossSpec] = None) -> Residual:
    """Bounded-difference baseline ||l||_inf sqrt(log(1/delta) / 2n).

    Only meaningful when the loss is bounded on the reachable margin range;
    with Gaussian inputs that requires R_w = 0 (margins confined to
    [-R_b, R_b]).  Informational: never enters the best-residual selection.
    """
    name = "mcdiarmid"
    if inp.constraints.r_w > 0:
        return Residual.no(name, "informational",
                           "loss unbounded on the reachable margin range (R_w > 0)")
    rb = inp.constraints.r_b
    if loss is None:
        loss = LossSpec.logistic()
    grid = np.linspace(-rb, rb, 513) if rb > 0 else np.zeros(1)
    sup_loss = float(np.max(loss.value(grid)))
    ll = -math.log(inp.delta)
    if ll == 0.0 or sup_loss == 0.0:
        return Residual.ok(name, "informational", -math.inf)
    log_r = math.log(sup_loss) + 0.5 * (math.log(ll) - math.log(2.0 * inp.n))
    return Residual.ok(name, "informational", log_r)


# ---------------------------------------------------------------------------
# Regime residuals
# ---------------------------------------------------------------------------
def residual_no_bias(inp: BoundInput) -> Residual:
    """Tensorization regime: theta0 = 0 (and no mean-induced bias)."""
    name = "no_bias"
    if inp.model.theta0 != 0.0 or float(inp.model.mu @ inp.model.theta1) != 0.0:
        return Residual.no(name, inp.mode, "inapplicable: bias nonzero")
    k = inp.kconst
    rw2 = _loge(inp.constraints.r_w**2)
    rb2 = _loge(inp.constraints.r_b**2)
    if inp.mode == "poincare":
        return _finish_poincare(name, inp, _log_bracket(_loge(k.k_p), rw2, 0.0, rb2))
    return _finish_logsobolev(name, inp, _log_bracket(_loge(k.k_ls), rw2, 0.0, rb2))


def _small_bias_bracket_poincare(k_p: float, x: float, log_rw2: float,
                                 log_slot_b: float) -> float:
    # K_P (e^x + sqrt(e^x - 1)) R_w^2 + (1 + sqrt(e^x - 1)) * slot_b
    half = 0.5 * _log_expm1(x)
    log_a = _loge(k_p) + _logaddexp(x, half)
    log_b = _logaddexp(0.0, half)
    return _logaddexp(log_a + log_rw2, log_b + log_slot_b)


def residual_small_bias(inp: BoundInput, g_lip: Optional[float] = None) -> Residual:
    """Moderate-bias regime: exponential factor exp(2 G |theta0|)."""
    name = "small_bias"
    reason = _central_or_reason(inp) or _g_or_reason(inp)
    if reason:
        return Residual.no(name, inp.mode, reason)
    g = g_lip if g_lip is not None else inp.model.link.lipschitz_of_log
    x = 2.0 * g * abs(inp.model.theta0)
    k = inp.kconst
    rw2 = _loge(inp.constraints.r_w**2)
    rb2 = _loge(inp.constraints.r_b**2)
    if inp.mode == "poincare":
        return _finish_poincare(
            name, inp, _small_bias_bracket_poincare(k.k_p, x, rw2, rb2),
            bias_factor_exponent=x)
    # (3 + x) * [K_LS (1/2 + e^x) R_w^2 + R_b^2]
    log_a = _loge(k.k_ls) + _logaddexp(x, -_LOG2)
    bracket = _logaddexp(log_a + rw2, rb2)
    return _finish_logsobolev(name, inp, bracket,
                              log_front=_LOG2 + math.log(3.0 + x),
                              bias_factor_exponent=x)


def residual_large_bias(inp: BoundInput) -> Residual:
    """Large-bias regime (logistic): intercept factor decays like e^{-|theta0|}."""
    name = "large_bias"
    reason = _central_or_reason(inp) or _logistic_or_reason(inp)
    if reason:
        return Residual.no(name, inp.mode, reason)
    k = inp.kconst
    lm = log_mgf(inp.model, inp.model.theta1)  # sigma^2 / 2
    t0 = abs(inp.model.theta0)
    rw2 = _loge(inp.constraints.r_w**2)
    rb2 = _loge(inp.constraints.r_b**2)
    log_b = _LOG8 - t0 + lm  # 8 e^{-|theta0|} M
    if inp.mode == "poincare":
        log_8m2 = _LOG8 + 2.0 * lm
        log_a = _loge(k.k_p) + log_8m2 + math.log1p(-math.exp(-log_8m2))
        return _finish_poincare(name, inp, _logaddexp(log_a + rw2, log_b + rb2),
                                log_mgf=lm)
    log_a = _loge(k.k_ls) + _logaddexp(-_LOG2, _LOG8 + 2.0 * lm)
    bracket = _logaddexp(log_a + rw2, log_b + rb2)
    # displayed factor is (e + |theta0|) * log(1/delta) with no extra 2
    return _finish_logsobolev(name, inp, bracket,
                              log_front=math.log(math.e + t0), log_mgf=lm)


def residual_weak_signal(inp: BoundInput, g_lip: Optional[float] = None) -> Residual:
    """Weak-signal regime: half-line MGFs M^num(G theta1), M^num(2 G theta1)."""
    name = "weak_signal"
    reason = _central_or_reason(inp) or _g_or_reason(inp)
    if reason:
        return Residual.no(name, inp.mode, reason)
    model = inp.model
    g = g_lip if g_lip is not None else model.link.lipschitz_of_log
    k = inp.kconst
    n1 = log_mgf_num(model, g)
    n2 = log_mgf_num(model, 2.0 * g)
    t0 = abs(model.theta0)
    log_gg = float(model.link.log_value(t0) + model.link.log_value(-t0))
    rw2 = _loge(inp.constraints.r_w**2)
    rb2 = _loge(inp.constraints.r_b**2)
    log_b = _LOG8 + log_gg + n1  # 8 g(+t0) g(-t0) M^num(G)
    if inp.mode == "poincare":
        log_4nn = _LOG4 + n1 + n2
        log_a = _loge(k.k_p) + log_4nn + math.log1p(-math.exp(-log_4nn))
        return _finish_poincare(name, inp, _logaddexp(log_a + rw2, log_b + rb2),
                                log_mnum=n1, log_mnum2=n2)
    log_mden = math.log(mgf_den(model, g))
    front = 1.0 + 0.5 * (-float(model.link.log_value(-t0)) - log_mden)
    log_a = _LOG5 + _loge(k.k_ls) + n1 + n2
    bracket = _logaddexp(log_a + rw2, log_b + rb2)
    return _finish_logsobolev(name, inp, bracket,
                              log_front=_LOG2 + math.log(front),
                              log_mnum=n1, log_mnum2=n2, log_mden=log_mden)


def residual_strong_signal(inp: BoundInput) -> Residual:
    """Strong-signal regime (logistic): q = e^{5|theta0|} E exp(-|<X,theta1>|)."""
    name = "strong_signal"
    reason = _central_or_reason(inp) or _logistic_or_reason(inp)
    if reason:
        return Residual.no(name, inp.mode, reason)
    model = inp.model
    k = inp.kconst
    p = p_exceed(model)
    if p == 0.0:
        return Residual.no(name, inp.mode,
                           "inapplicable: exceedance probability is zero "
                           "(degenerate signal with nonzero bias)")
    t0 = abs(model.theta0)
    lq = 5.0 * t0 + math.log(tilde_m_inverse(model))
    rw2 = _loge(inp.constraints.r_w**2)
    rb2 = _loge(inp.constraints.r_b**2)
    if inp.mode == "poincare":
        log_a = _loge(k.k_p) + float(np.logaddexp.reduce([0.0, lq, 0.5 * lq]))
        log_b = _logaddexp(0.0, 0.5 * lq)
        return _finish_poincare(name, inp, _logaddexp(log_a + rw2, log_b + rb2),
                                log_q=lq, p_exceed=p)
    log_a = _loge(k.k_ls) + _logaddexp(math.log(1.25), lq)
    bracket = _logaddexp(log_a + rw2, rb2)
    return _finish_logsobolev(name, inp, bracket,
                              log_front=_LOG2 + math.log(math.e - math.log(p)),
                              log_q=lq, p_exceed=p)


def residual_theorem1_generic(kconst: KConstants, c: float, loss_lipschitz: float,
                              r_w: float, r_b: float, n: int, delta: float,
                              mode: str, name: str = "generic") -> Residual:
    """Weighted carre-du-champ route with an explicit conjugate pair.

    poincare:   r = sqrt(Ceff) * log(3/delta),
                Ceff = [K_P (1 + c K_chi2) L^2 R_w^2 + c* K_V L^2 R_b^2] / n;
    logsobolev: r = sqrt(2 * CeffLS * log(1/delta)),
                CeffLS = [(1 + log(K_U)/2) * (same bracket)
                          + 2 K_LS L^2 R_w^2] / n.

    c = inf is allowed only when K_chi2 = 0 (the inf * 0 = 0 convention); the
    conjugate c* = c / (c - 1), with c = 1 allowed only when the intercept
    term is inactive (R_b = 0 or K_V = 0).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not (c >= 1.0):
        raise ValueError(f"conjugate exponent c must be >= 1, got {c}")
    k = kconst
    if math.isinf(c):
        if k.k_chi2 > 0.0 and r_w > 0.0:
            return Residual.no(name, mode,
                               "c = inf with nonzero dependence constant")
        log_a = _loge(k.k_p)  # 1 + inf*0 = 1
        c_star = 1.0
    else:
        log_a = _loge(k.k_p) + math.log1p(c * k.k_chi2)
        c_star = math.inf if c == 1.0 else c / (c - 1.0)
    if math.isinf(c_star) and k.k_v * r_b**2 > 0.0:
        return Residual.no(name, mode,
                           "c* = inf with an active intercept term "
                           "(R_b > 0 and K_V > 0)")
    log_b = _loge(c_star * k.k_v) if not math.isinf(c_star) else -math.inf
    if r_b == 0.0 or k.k_v == 0.0:
        log_b = -math.inf
    log_l2 = 2.0 * math.log(loss_lipschitz)
    bracket = _logaddexp(log_a + _loge(r_w**2), log_b + _loge(r_b**2))
    if mode == "poincare":
        log_ceff = log_l2 + bracket - math.log(n)
        log_r = 0.5 * log_ceff + math.log(math.log(3.0 / delta))
        return Residual.ok(name, mode, log_r, c=c)
    ll = -math.log(delta)
    if ll == 0.0:
        return Residual.ok(name, mode, -math.inf, c=c)
    log_k_u = k.log_k_u if k.log_k_u is not None else math.log(k.k_u)
    log_inner = _logaddexp(
        math.log1p(0.5 * log_k_u) + bracket,
        _LOG2 + _loge(k.k_ls) + _loge(r_w**2),
    ) + log_l2
    log_r = 0.5 * (_LOG2 + log_inner - math.log(n) + math.log(ll))
    return Residual.ok(name, mode, log_r, c=c)


_C_GRID = tuple(1.0 + 2.0**k for k in range(-10, 11))


def _generic_optimized(inp: BoundInput, mode: str) -> Residual:
    cs = list(_C_GRID) + [2.0]
    if inp.kconst.k_chi2 == 0.0:
        cs.append(math.inf)
    best = None
    for c in cs:
        r = residual_theorem1_generic(
            inp.kconst, c, inp.loss_lipschitz, inp.constraints.r_w,
            inp.constraints.r_b, inp.n, inp.delta, mode, name="generic_opt")
        if r.applicable and (best is None or r.log_value < best.log_value):
            best = r
    if best is None:
        return Residual.no("generic_opt", mode, "no feasible conjugate pair")
    return best


def residual_noncentral(inp: BoundInput) -> Residual:
    """Mean-shift route: small-bias shape at the effective bias.

    Uses theta0_eff = theta0 + <mu, theta1> and replaces the intercept slot
    R_b^2 by ||mu||^2 R_w^2 + R_b^2.  Reduces exactly to the small-bias
    residual when mu = 0.
    """
    name = "noncentral"
    reason = _g_or_reason(inp)
    if reason:
        return Residual.no(name, "poincare", reason)
    model = inp.model
    g = model.link.lipschitz_of_log
    t0_eff = model.effective_theta0
    x = 2.0 * g * abs(t0_eff)
    mu2 = float(model.mu @ model.mu)
    slot_b = _logaddexp(_loge(mu2) + _loge(inp.constraints.r_w**2),
                        _loge(inp.constraints.r_b**2))
    bracket = _small_bias_bracket_poincare(
        inp.kconst.k_p, x, _loge(inp.constraints.r_w**2), slot_b)
    out = _finish_poincare(name, inp, bracket, theta0_eff=t0_eff)
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
def _functionals(inp: BoundInput) -> dict:
    model = inp.model.centered()
    out = {"sigma2": model.signal_variance,
           "theta0_eff": inp.model.effective_theta0,
           "log_mgf": log_mgf(model, model.theta1),
           "p_exceed": p_exceed(model),
           "tilde_m_inverse": tilde_m_inverse(model)}
    g = model.link.lipschitz_of_log
    if g is not None:
        out["log_mgf_num"] = log_mgf_num(model, g)
        out["log_mgf_num_2"] = log_mgf_num(model, 2.0 * g)
        out["mgf_den"] = mgf_den(model, g)
    if model.signal_variance == 0.0 and model.theta0 == 0.0:
        out["p_exceed_degenerate_convention"] = True
    return out


def best_residual(inp: BoundInput, loss: Optional[LossSpec] = None) -> BoundReport:
    """Evaluate every regime in both modes and select the minimum residual.

    The generic route is additionally minimized over a dyadic grid of
    conjugate exponents (plus c = 2 and, when the dependence constant
    vanishes, c = inf, which reproduces the tensorization weights).
    """
    entries: List[Residual] = []
    for mode in MODES:
        m = inp.with_mode(mode)
        entries.append(residual_no_bias(m))
        entries.append(residual_small_bias(m))
        entries.append(residual_large_bias(m))
        entries.append(residual_weak_signal(m))
        entries.append(residual_strong_signal(m))
        if np.any(inp.model.mu):
            entries.append(Residual.no(
                "generic", mode,
                "non-central inputs: constants describe the centered law"))
            entries.append(Residual.no(
                "generic_opt", mode,
                "non-central inputs: constants describe the centered law"))
        else:
            entries.append(residual_theorem1_generic(
                inp.kconst, 2.0, inp.loss_lipschitz, inp.constraints.r_w,
                inp.constraints.r_b, inp.n, inp.delta, mode))
            entries.append(_generic_optimized(inp, mode))
    entries.append(residual_noncentral(inp))
    entries.append(mcdiarmid_informational(inp, loss))

    candidates = [e for e in entries
                  if e.applicable and e.mode in MODES or
                  (e.applicable and e.name == "noncentral")]
    best = min(candidates, key=lambda e: e.log_value) if candidates else None

    rad = rademacher_bound(inp.loss_lipschitz, inp.constraints.r_w,
                           inp.constraints.r_b, inp.model.trace_second_moment,
                           inp.n)
    inputs = {
        "model": inp.model.to_json(),
        "r_w": inp.constraints.r_w,
        "r_b": inp.constraints.r_b,
        "loss_lipschitz": inp.loss_lipschitz,
        "n": inp.n,
        "delta": inp.delta,
        "kconstants": inp.kconst.to_json(),
    }
    return BoundReport(entries=entries, rademacher_expectation_bound=rad,
                       best=best, inputs=inputs, functionals=_functionals(inp))
