"""Monte-Carlo verification harness.

Runs repeated-trial experiments and tests, at desk scale, the statements the
bound engine encodes:

* tail checks: count trials whose sup-gap exceeds mean + guard + residual
  and compare the exceedance rate to delta with an exact binomial test;
* an independence check of (Z, Y) at zero bias via a permutation test on
  random projections;
* a direct check of the weighted Poincare / log-Sobolev inequalities on
  random tanh test functions, whose energies are available in closed form;
* the two asymptotic-regime sweeps (effective rank, proportional d = n).

Centering caveat: the theory centers at the exact expectation of the sup,
which no finite batch knows.  The harness centers at the batch mean and
inflates the threshold by 2 standard errors of that mean, which is the
conservative direction for a PASS verdict; a split-batch mode (estimate the
mean on one half, count exceedances on the other) is available for strict
independence of the centering.

Trials are embarrassingly parallel with per-trial splittable seeds, so
serial and parallel runs produce identical batches.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.stats import binom

from . import __version__ as code_version
from .bound_engine import BoundInput, BoundReport, best_residual, rademacher_bound
from .gaussian_analytics import KConstants, k_constants
from .model_core import (
    ConstraintSet,
    Covariance,
    Dataset,
    LossSpec,
    ModelSpec,
    sample_dataset,
    to_label_weighted,
    trial_seed_sequence,
)
from .risk_optimizer import OptimizerConfig, sup_gap

__all__ = [
    "TrialConfig",
    "TrialBatch",
    "TailRow",
    "TailCheckResult",
    "FIRow",
    "FICheckResult",
    "IndependenceResult",
    "SweepTable",
    "run_trials",
    "tail_check",
    "independence_check",
    "fi_check",
    "effective_rank_sweep",
    "proportional_sweep",
    "persist",
    "load",
]

SCHEMA_VERSION = 1
TAIL_CSV_COLUMNS = ("delta", "residual_name", "residual", "exceed", "M",
                    "rate", "pvalue", "verdict")


# ---------------------------------------------------------------------------
# Trial batches
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TrialConfig:
    model: ModelSpec
    constraints: ConstraintSet
    loss: LossSpec
    n: int
    optimizer: OptimizerConfig = OptimizerConfig()

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "r_w": self.constraints.r_w,
            "r_b": self.constraints.r_b,
            "loss": {"tag": self.loss.tag, "lipschitz": self.loss.lipschitz},
            "n": self.n,
            "optimizer": self.optimizer.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "TrialConfig":
        return TrialConfig(
            model=ModelSpec.from_json(obj["model"]),
            constraints=ConstraintSet(obj["r_w"], obj["r_b"]),
            loss=LossSpec.from_tag(obj["loss"]["tag"], obj["loss"]["lipschitz"]),
            n=int(obj["n"]),
            optimizer=OptimizerConfig.from_json(obj["optimizer"]),
        )


@dataclass
class TrialRecord:
    trial: int
    sup_value: float
    argmax_w_norm: float
    argmax_b: float
    runtime_ms: float
    converged: bool
    error: Optional[str] = None


@dataclass
class TrialBatch:
    config: TrialConfig
    master_seed: int
    trials: List[TrialRecord]
    created_at: str
    code_version: str

    @property
    def m(self) -> int:
        return len(self.trials)

    @property
    def sup_values(self) -> np.ndarray:
        return np.array([t.sup_value for t in self.trials])

    @property
    def mean_sup(self) -> float:
        return float(np.mean(self.sup_values))

    @property
    def se_mean(self) -> float:
        v = self.sup_values
        if len(v) < 2:
            return 0.0
        return float(np.std(v, ddof=1) / math.sqrt(len(v)))


def _run_one_trial(args) -> TrialRecord:
    config, master_seed, i = args
    t0 = time.perf_counter()
    try:
        ss = trial_seed_sequence(master_seed, i)
        data_ss, opt_ss = ss.spawn(2)
        data = sample_dataset(config.model, config.n, data_ss)
        res = sup_gap(data, config.model, config.loss, config.constraints,
                      config.optimizer, opt_ss)
        return TrialRecord(
            trial=i, sup_value=res.value,
            argmax_w_norm=float(np.linalg.norm(res.argmax_w)),
            argmax_b=res.argmax_b,
            runtime_ms=(time.perf_counter() - t0) * 1e3,
            converged=res.converged,
        )
    except Exception as exc:  # trial failures annotate, not abort, the batch
        return TrialRecord(trial=i, sup_value=math.nan, argmax_w_norm=math.nan,
                           argmax_b=math.nan,
                           runtime_ms=(time.perf_counter() - t0) * 1e3,
                           converged=False, error=f"{type(exc).__name__}: {exc}")


def run_trials(config: TrialConfig, m: int, master_seed: int,
               threads: int = 1) -> TrialBatch:
    """M independent datasets of size n, each fed to the sup-gap optimizer.

    Trial i draws its data and optimizer streams from the splittable child
    (master_seed, i), so the batch is a deterministic function of
    (config, m, master_seed) regardless of thread count; results merge in
    trial order.
    """
    if m < 1:
        raise ValueError("need at least one trial")
    tasks = [(config, master_seed, i) for i in range(m)]
    if threads > 1:
        with get_context("spawn").Pool(threads) as pool:
            records = pool.map(_run_one_trial, tasks,
                               chunksize=max(1, m // (8 * threads)))
    else:
        records = [_run_one_trial(t) for t in tasks]
    records.sort(key=lambda r: r.trial)
    return TrialBatch(config=config, master_seed=master_seed, trials=records,
                      created_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
                      code_version=code_version)


# ---------------------------------------------------------------------------
# Tail checks
# ---------------------------------------------------------------------------
@dataclass
class TailRow:
    delta: float
    residual_name: str
    residual: float
    exceed: int
    m: int
    rate: float
    pvalue: float
    verdict: str
    negative_control: bool = False


@dataclass
class TailCheckResult:
    rows: List[TailRow]
    mean_sup: float
    se_mean: float
    guard: float
    level: float
    row_level: float

    def to_csv_rows(self) -> List[list]:
        out = [list(TAIL_CSV_COLUMNS)]
        for r in self.rows:
            name = r.residual_name + ("!negative_control" if r.negative_control else "")
            out.append([r.delta, name, r.residual, r.exceed, r.m,
                        r.rate, r.pvalue, r.verdict])
        return out

    def failed_rows(self) -> List[TailRow]:
        return [r for r in self.rows
                if (r.verdict == "FAIL") != r.negative_control]


def _binom_sf_pvalue(k: int, m: int, delta: float) -> float:
    """Exact one-sided p-value for H0: exceedance rate <= delta."""
    if k <= 0:
        return 1.0
    return float(binom.sf(k - 1, m, delta))


def tail_check(batch: TrialBatch, report: BoundReport, deltas: Sequence[float],
               level: float = 0.01, bonferroni: bool = True,
               min_trials: int = 100, allow_small: bool = False,
               negative_control: bool = False, control_scale: float = 0.05,
               split_batch: bool = False,
               report_factory: Optional[Callable[[float], BoundReport]] = None,
               ) -> TailCheckResult:
    """Exceedance test of every applicable residual at every delta.

    A trial exceeds when sup >= mean + 2 SE(mean) + residual(delta); the
    2 SE guard compensates for centering at the batch mean instead of the
    unknown expectation (conservative direction).  The verdict is PASS when
    the exact one-sided binomial test does not reject rate <= delta at the
    (Bonferroni-adjusted) level.

    The negative control scales the whole exceedance threshold by
    ``control_scale``; the resulting pseudo-bound sits far below the bulk of
    the sup distribution, is decisively violated, and must FAIL, which
    demonstrates the test has power.
    """
    sup = batch.sup_values
    sup = sup[np.isfinite(sup)]
    m = len(sup)
    if m < min_trials and not allow_small:
        raise ValueError(f"only {m} trials; need >= {min_trials} "
                         "(pass allow_small=True to override)")
    if split_batch:
        half = m // 2
        center_vals, sup = sup[:half], sup[half:]
        m = len(sup)
    else:
        center_vals = sup
    mean = float(np.mean(center_vals))
    se = float(np.std(center_vals, ddof=1) / math.sqrt(len(center_vals)))
    guard = 2.0 * se

    if report_factory is None:
        inp_echo = report.inputs
        model = ModelSpec.from_json(inp_echo["model"])
        kc = KConstants(**inp_echo["kconstants"])
        base = BoundInput(model, ConstraintSet(inp_echo["r_w"], inp_echo["r_b"]),
                          inp_echo["loss_lipschitz"], inp_echo["n"],
                          inp_echo["delta"], kc)
        report_factory = lambda d: best_residual(base.with_delta(d))

    scales = [1.0] + ([control_scale] if negative_control else [])
    rows: List[TailRow] = []
    for delta in deltas:
        rep = report_factory(delta)
        entries = list(rep.applicable_entries())
        if rep.best is not None:
            entries.append(dataclasses.replace(rep.best, name="best"))
        for scale in scales:
            for e in entries:
                if e.name == "mcdiarmid":
                    continue
                thr = scale * (mean + guard + e.value)
                exceed = int(np.sum(sup >= thr))
                rows.append(TailRow(
                    delta=delta,
                    residual_name=f"{e.name}:{e.mode}",
                    residual=e.value, exceed=exceed, m=m,
                    rate=exceed / m,
                    pvalue=_binom_sf_pvalue(exceed, m, delta),
                    verdict="",
                    negative_control=(scale != 1.0),
                ))
    row_level = level / len(rows) if (bonferroni and rows) else level
    for r in rows:
        r.verdict = "PASS" if r.pvalue >= row_level else "FAIL"
    return TailCheckResult(rows=rows, mean_sup=mean, se_mean=se, guard=guard,
                           level=level, row_level=row_level)


# ---------------------------------------------------------------------------
# Independence check (permutation test on random projections)
# ---------------------------------------------------------------------------
@dataclass
class IndependenceResult:
    rejection_rate: float
    p_values: np.ndarray
    level: float
    repetitions: int


def independence_check(model: ModelSpec, n: int, repetitions: int, seed: int,
                       level: float = 0.05, n_projections: int = 8,
                       n_permutations: int = 500,
                       allow_nonzero_bias: bool = False) -> IndependenceResult:
    """Permutation test of Z independent of Y on random projections.

    Statistic: the largest standardized difference of conditional means of
    <Z, v_k> between the label groups over n_projections random directions;
    its null distribution is simulated by relabeling.  At zero effective
    bias the groups are exchangeable, so the test is exact at the nominal
    level; nonzero bias (a negative control) requires the explicit override.
    """
    if model.effective_theta0 != 0.0 and not allow_nonzero_bias:
        raise ValueError("independence holds only at zero effective bias; "
                         "pass allow_nonzero_bias=True for negative controls")
    pvals = np.empty(repetitions)
    for rep in range(repetitions):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
        data_ss, aux_ss = ss.spawn(2)
        data = sample_dataset(model, n, data_ss)
        z = to_label_weighted(data).x
        rng = np.random.Generator(np.random.Philox(aux_ss))
        v = rng.standard_normal((model.dim, n_projections))
        v /= np.maximum(np.linalg.norm(v, axis=0, keepdims=True), 1e-300)
        proj = z @ v  # (n, K)
        col_sd = np.maximum(proj.std(axis=0, ddof=1), 1e-300)
        y = data.y
        n_plus = int(np.sum(y > 0))
        n_minus = n - n_plus
        if n_plus == 0 or n_minus == 0:
            pvals[rep] = 1.0
            continue
        sd_scale = col_sd * math.sqrt(1.0 / n_plus + 1.0 / n_minus)
        col_sum = proj.sum(axis=0)

        def stat(plus_mask):
            s_plus = plus_mask @ proj
            mean_plus = s_plus / n_plus
            mean_minus = (col_sum[None, :] - s_plus) / n_minus
            return np.max(np.abs(mean_plus - mean_minus) / sd_scale[None, :], axis=1)

        t_obs = stat((y > 0).astype(float)[None, :])[0]
        perms = rng.permuted(np.tile(y, (n_permutations, 1)), axis=1)
        t_null = stat((perms > 0).astype(float))
        pvals[rep] = (1.0 + np.sum(t_null >= t_obs)) / (1.0 + n_permutations)
    rate = float(np.mean(pvals <= level))
    return IndependenceResult(rejection_rate=rate, p_values=pvals,
                              level=level, repetitions=repetitions)


# ---------------------------------------------------------------------------
# Functional-inequality check on tanh test functions
# ---------------------------------------------------------------------------
@dataclass
class FIRow:
    fn_id: int
    var_estimate: float
    var_se: float
    energy_p_estimate: float
    energy_p_se: float
    ent_estimate: float
    ent_se: float
    energy_ls_estimate: float
    energy_ls_se: float
    ratio_var: float
    ratio_ent: float
    verdict: str


@dataclass
class FICheckResult:
    rows: List[FIRow]
    kconst: KConstants
    c: float
    n_mc: int

    @property
    def pass_count(self) -> int:
        return sum(r.verdict == "PASS" for r in self.rows)


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def fi_check(model: ModelSpec, family_size: int, n_mc: int, seed: int,
             c: float = 2.0, kconst: Optional[KConstants] = None,
             se_inflation: float = 3.0) -> FICheckResult:
    """Verify Var(f) <= E Gamma_P(f) and Ent(f^2) <= 2 E Gamma_LS(f) by MC.

    Test functions f(z, y) = a * tanh(<z, w> + y b) are smooth and globally
    Lipschitz with closed-form local energies:

        Gamma_Z(f) = a^2 (1 - tanh^2)^2 ||w||^2,
        Gamma_Y(f) = ((f(z, y) - f(z, -y)) / 2)^2,

    so the only estimation error is Monte-Carlo.  The weighted operators use
    the conjugate pair (c, c* = c/(c-1)), default c = c* = 2.  PASS allows
    ``se_inflation`` combined standard errors of slack; the inequalities are
    guaranteed for the exact expectations, so systematic failures indicate
    an implementation bug rather than randomness.
    """
    if kconst is None:
        kconst = k_constants(model)
    if not (1.0 < c < math.inf):
        raise ValueError("fi_check needs a finite conjugate exponent c > 1")
    c_star = c / (c - 1.0)
    coef_z_p = kconst.k_p * (1.0 + c * kconst.k_chi2)
    coef_y_p = c_star * kconst.k_v
    log_ku = kconst.log_k_u if kconst.log_k_u is not None else math.log(kconst.k_u)
    ls_mult = 1.0 + 0.5 * log_ku

    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0,))
    data_ss, fn_ss = ss.spawn(2)
    data = sample_dataset(model, n_mc, data_ss)
    zy = to_label_weighted(data)
    z, y = zy.x, zy.y
    rng = np.random.Generator(np.random.Philox(fn_ss))

    rows: List[FIRow] = []
    sqrt_n = math.sqrt(n_mc)
    for j in range(family_size):
        while True:
            w = rng.standard_normal(model.dim) * math.exp(rng.normal(0.0, 0.5))
            b = rng.normal(0.0, 1.0)
            a = rng.choice([-1.0, 1.0]) * math.exp(rng.normal(0.0, 0.5))
            if abs(a) > 1e-3 and np.linalg.norm(w) > 1e-8:
                break
        arg = z @ w + y * b
        th = np.tanh(arg)
        f = a * th
        f_flip = a * np.tanh(z @ w - y * b)
        grad_y = 0.5 * (f - f_flip)
        gamma_z = a**2 * (1.0 - th**2) ** 2 * float(w @ w)
        gamma_y = grad_y**2
        gamma_p = coef_z_p * gamma_z + coef_y_p * gamma_y
        gamma_ls = ls_mult * gamma_p + 2.0 * kconst.k_ls * gamma_z

        mean_f = float(np.mean(f))
        dev2 = (f - mean_f) ** 2
        var = float(np.sum(dev2) / (n_mc - 1))
        var_se = float(np.std(dev2, ddof=1) / sqrt_n)

        f2 = f**2
        a_mean = float(np.mean(f2))
        u = _xlogx(f2)
        ent = float(np.mean(u) - a_mean * math.log(max(a_mean, 1e-300)))
        infl = (u - np.mean(u)) - (math.log(max(a_mean, 1e-300)) + 1.0) * (f2 - a_mean)
        ent_se = float(np.std(infl, ddof=1) / sqrt_n)

        ep = float(np.mean(gamma_p))
        ep_se = float(np.std(gamma_p, ddof=1) / sqrt_n)
        els = float(np.mean(gamma_ls))
        els_se = float(np.std(gamma_ls, ddof=1) / sqrt_n)

        var_ok = _inflated_leq(var, var_se, ep, ep_se, se_inflation)
        ent_ok = _inflated_leq(ent, ent_se, 2.0 * els, 2.0 * els_se, se_inflation)
        rows.append(FIRow(
            fn_id=j, var_estimate=var, var_se=var_se,
            energy_p_estimate=ep, energy_p_se=ep_se,
            ent_estimate=ent, ent_se=ent_se,
            energy_ls_estimate=els, energy_ls_se=els_se,
            ratio_var=var / ep if ep > 0 else 0.0,
            ratio_ent=ent / (2.0 * els) if els > 0 else 0.0,
            verdict="PASS" if (var_ok and ent_ok) else "FAIL",
        ))
    return FICheckResult(rows=rows, kconst=kconst, c=c, n_mc=n_mc)


def _inflated_leq(lhs, lhs_se, rhs, rhs_se, k):
    if lhs <= 0.0:
        return rhs >= 0.0  # the 0 <= 0 convention for constant functions
    rel = math.sqrt((lhs_se / lhs) ** 2 + (rhs_se / max(rhs, 1e-300)) ** 2)
    return lhs <= rhs * (1.0 + k * rel)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------
@dataclass
class SweepTable:
    kind: str
    rows: List[dict]
    meta: dict = field(default_factory=dict)

    def csv_rows(self) -> List[list]:
        if not self.rows:
            return []
        cols = list(self.rows[0].keys())
        return [cols] + [[r[c] for c in cols] for r in self.rows]


def _geometric_covariance(d: int, d_star: float) -> Covariance:
    """Eigenvalues lambda_max * gamma^k with lambda_max = 1 and tr = d_star."""
    if d == 1 or d_star <= 1.0:
        return Covariance.spherical(1.0, d) if d == 1 else \
            Covariance.diagonal([1.0] + [1e-9] * (d - 1))
    lo, hi = 1e-9, 1.0 - 1e-12
    for _ in range(200):
        g = 0.5 * (lo + hi)
        tr = (1.0 - g**d) / (1.0 - g)
        if tr < d_star:
            lo = g
        else:
            hi = g
    g = 0.5 * (lo + hi)
    return Covariance.diagonal(g ** np.arange(d))


def effective_rank_sweep(seed: int, d_stars: Sequence[float] = (1.0, 4.0, 16.0),
                         ns: Sequence[int] = (100, 200, 400), m: int = 60,
                         d: int = 64, r_w: float = 1.0, r_b: float = 0.25,
                         optimizer: Optional[OptimizerConfig] = None,
                         threads: int = 1, delta: float = 0.1) -> SweepTable:
    """mean sup vs effective rank tr(Sigma)/lambda_max at fixed lambda_max.

    The concentration residual depends on the covariance only through
    lambda_max, so the residual column is constant across the d* rows while
    the expectation column tracks sqrt(d*/n).
    """
    optimizer = optimizer or OptimizerConfig(restarts=8, max_iters=150,
                                             quad_order_2d=24)
    loss = LossSpec.logistic()
    rows = []
    for d_star in d_stars:
        dim = 1 if d_star <= 1.0 else d
        cov = _geometric_covariance(dim, d_star)
        model = ModelSpec.create(dim, cov, np.zeros(dim), 0.0)
        kc = k_constants(model)
        for n in ns:
            cfg = TrialConfig(model, ConstraintSet(r_w, r_b), loss, n, optimizer)
            batch = run_trials(cfg, m, master_seed=seed + 7919 * n, threads=threads)
            inp = BoundInput(model, cfg.constraints, loss.lipschitz, n, delta, kc,
                             "logsobolev")
            resid = best_residual(inp).entry("no_bias", "logsobolev").value
            rad = rademacher_bound(loss.lipschitz, r_w, r_b, cov.trace, n)
            rows.append({
                "d_star": d_star, "dim": dim, "n": n, "m": m,
                "mean_sup": batch.mean_sup, "se_mean": batch.se_mean,
                "rademacher": rad, "residual": resid,
                "mean_below_rademacher": batch.mean_sup <= rad,
            })
    return SweepTable("effective_rank", rows, {"delta": delta, "seed": seed})


def proportional_sweep(seed: int, sizes: Sequence[int] = (50, 100, 200),
                       m: int = 300, r1: float = 1.0, r_b: float = 0.0,
                       optimizer: Optional[OptimizerConfig] = None,
                       threads: int = 1, delta: float = 0.1) -> SweepTable:
    """Proportional regime d = n with Sigma = I/d and R_w = sqrt(d) R_1.

    The log-Sobolev constant is 1/d (the Gaussian potential is d-convex), so
    K_LS R_w^2 = R_1^2 stays constant and the zero-bias residual scales
    exactly like n^{-1/2}, while the expected sup stays Theta(1).
    """
    optimizer = optimizer or OptimizerConfig(restarts=8, max_iters=150,
                                             quad_order_2d=24)
    loss = LossSpec.logistic()
    rows = []
    for n in sizes:
        d = n
        cov = Covariance.spherical(1.0 / d, d)
        theta1 = np.zeros(d)
        theta1[0] = 1.0
        model = ModelSpec.create(d, cov, theta1, 0.0)
        kc = k_constants(model)
        cons = ConstraintSet(math.sqrt(d) * r1, r_b)
        cfg = TrialConfig(model, cons, loss, n, optimizer)
        batch = run_trials(cfg, m, master_seed=seed + 104729 * n, threads=threads)
        inp = BoundInput(model, cons, loss.lipschitz, n, delta, kc, "logsobolev")
        resid = best_residual(inp).entry("no_bias", "logsobolev").value
        rows.append({
            "d": d, "n": n, "m": m,
            "k_ls": kc.k_ls, "r_w": cons.r_w,
            "mean_sup": batch.mean_sup, "se_mean": batch.se_mean,
            "residual": resid,
        })
    log_n = np.log([r["n"] for r in rows])
    log_res = np.log([r["residual"] for r in rows])
    slope = float(np.polyfit(log_n, log_res, 1)[0])
    return SweepTable("proportional", rows,
                      {"delta": delta, "seed": seed, "log_slope": slope})


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------
def persist(obj, path: str, reproducible: bool = False) -> None:
    """Write a batch (JSON-lines) or a result table (CSV).

    Reproducible mode zeroes wall-clock fields (timestamps, runtimes) so two
    runs with the same config are byte-identical.
    """
    if isinstance(obj, TrialBatch):
        header = {
            "schema": "isoperi.trial_batch",
            "schema_version": SCHEMA_VERSION,
            "config": obj.config.to_json(),
            "master_seed": obj.master_seed,
            "m": obj.m,
            "mean_sup": obj.mean_sup,
            "created_at": "" if reproducible else obj.created_at,
            "code_version": obj.code_version,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for t in obj.trials:
                rec = dataclasses.asdict(t)
                if reproducible:
                    rec["runtime_ms"] = 0.0
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return
    if isinstance(obj, TailCheckResult):
        _write_csv(path, obj.to_csv_rows())
        return
    if isinstance(obj, FICheckResult):
        rows = [["fn_id", "var", "var_se", "energy_p", "energy_p_se",
                 "ent", "ent_se", "energy_ls", "energy_ls_se",
                 "ratio_var", "ratio_ent", "verdict"]]
        for r in obj.rows:
            rows.append([r.fn_id, r.var_estimate, r.var_se,
                         r.energy_p_estimate, r.energy_p_se,
                         r.ent_estimate, r.ent_se,
                         r.energy_ls_estimate, r.energy_ls_se,
                         r.ratio_var, r.ratio_ent, r.verdict])
        _write_csv(path, rows)
        return
    if isinstance(obj, SweepTable):
        _write_csv(path, obj.csv_rows())
        return
    raise TypeError(f"cannot persist {type(obj).__name__}")


def _write_csv(path: str, rows: List[list]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(_csv_cell(c) for c in row) + "\n")


def _csv_cell(c) -> str:
    if isinstance(c, float):
        return repr(c)
    return str(c)


def load(path: str) -> TrialBatch:
    """Load a JSON-lines trial batch; errors name the offending line."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt header line 1: {exc}") from exc
    if header.get("schema") != "isoperi.trial_batch":
        raise ValueError(f"{path}: not a trial batch file")
    trials = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            trials.append(TrialRecord(**rec))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ValueError(f"{path}: corrupt line {lineno}: {exc}") from exc
    return TrialBatch(
        config=TrialConfig.from_json(header["config"]),
        master_seed=header["master_seed"],
        trials=trials,
        created_at=header["created_at"],
        code_version=header["code_version"],
    )
