"""Statistical model of the binary linear classification experiments.

Inputs are Gaussian, X ~ N(mu, Sigma); labels are attached through a link
function g with g(t) + g(-t) = 1:

    P(Y = y | X = x) = g(y * (<x, theta1> + theta0)),

where x is the (already mean-shifted) input.  Everything downstream consumes
either raw datasets (X_i, Y_i) or their label-weighted form Z_i = Y_i * X_i.

Losses are L-Lipschitz, nonnegative functions of the margin; the built-in
logistic and hinge losses are both 1-Lipschitz.

Sampling is deterministic given (model, n, seed): per-trial streams are
derived from a master seed through numpy's splittable SeedSequence feeding a
counter-based Philox generator, so parallel and serial runs agree bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, log_expit, log_ndtr, ndtr

__all__ = [
    "Covariance",
    "LinkKind",
    "LossSpec",
    "ConstraintSet",
    "ModelSpec",
    "Dataset",
    "sample_dataset",
    "to_label_weighted",
    "loss_value",
    "loss_subgradient",
    "link_value",
    "trial_seed_sequence",
]

SeedLike = Union[int, np.random.SeedSequence]


class ModelError(ValueError):
    """Invalid model construction (dimensions, definiteness, link misuse)."""


# ---------------------------------------------------------------------------
# Covariance
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Covariance:
    """Covariance of the Gaussian input, stored with its Cholesky factor.

    kind is one of "spherical" (value: positive scalar s, Sigma = s*I),
    "diagonal" (value: positive vector), or "full" (value: SPD matrix).
    The factor is computed once at construction; sampling multiplies a
    standard normal by it.
    """

    kind: str
    value: Union[float, np.ndarray]
    dim: int
    _chol: np.ndarray = field(repr=False, compare=False, default=None)

    @staticmethod
    def spherical(s: float, dim: int) -> "Covariance":
        if not (s > 0 and np.isfinite(s)):
            raise ModelError(f"spherical covariance needs s > 0, got {s}")
        return Covariance("spherical", float(s), dim, np.sqrt(float(s)))

    @staticmethod
    def diagonal(diag: Sequence[float]) -> "Covariance":
        d = np.asarray(diag, dtype=float)
        if d.ndim != 1 or not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise ModelError("diagonal covariance needs a positive finite vector")
        return Covariance("diagonal", d, d.size, np.sqrt(d))

    @staticmethod
    def full(mat: Sequence[Sequence[float]]) -> "Covariance":
        m = np.asarray(mat, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ModelError("full covariance must be a square matrix")
        if not np.allclose(m, m.T, atol=1e-12 * max(1.0, float(np.abs(m).max()))):
            raise ModelError("full covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError as exc:
            raise ModelError("covariance is not positive definite") from exc
        return Covariance("full", m, m.shape[0], chol)

    # -- linear algebra helpers (dense matrices avoided for scaled kinds) --
    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "spherical":
            return self.value * v
        if self.kind == "diagonal":
            return self.value * v
        return self.value @ v

    def quad_form(self, v: np.ndarray) -> float:
        """<v, Sigma v>."""
        return float(v @ self.matvec(v))

    def cross_form(self, u: np.ndarray, v: np.ndarray) -> float:
        """<u, Sigma v>."""
        return float(u @ self.matvec(v))

    @property
    def trace(self) -> float:
        if self.kind == "spherical":
            return self.value * self.dim
        if self.kind == "diagonal":
            return float(self.value.sum())
        return float(np.trace(self.value))

    @property
    def trace_square(self) -> float:
        """tr(Sigma^2)."""
        if self.kind == "spherical":
            return self.value**2 * self.dim
        if self.kind == "diagonal":
            return float((self.value**2).sum())
        return float((self.value * self.value.T).sum())

    @property
    def lambda_max(self) -> float:
        if self.kind == "spherical":
            return self.value
        if self.kind == "diagonal":
            return float(self.value.max())
        return float(np.linalg.eigvalsh(self.value)[-1])

    def sample(self, rng: np.random.Generator, n: int, mu: np.ndarray) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        if self.kind in ("spherical", "diagonal"):
            return mu + z * self._chol
        return mu + z @ self._chol.T

    def to_json(self) -> dict:
        val = self.value if self.kind == "spherical" else np.asarray(self.value).tolist()
        return {"kind": self.kind, "value": val}

    @staticmethod
    def from_json(obj: dict, dim: int) -> "Covariance":
        kind = obj["kind"]
        if kind == "spherical":
            return Covariance.spherical(obj["value"], dim)
        if kind == "diagonal":
            return Covariance.diagonal(obj["value"])
        if kind == "full":
            return Covariance.full(obj["value"])
        raise ModelError(f"unknown covariance kind {kind!r}")


# ---------------------------------------------------------------------------
# Link functions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LinkKind:
    """Monotone link g with g(t) + g(-t) = 1.

    lipschitz_of_log is the Lipschitz constant of log(g) when it exists:
    1 for the logistic link; absent for probit, whose log-composition is
    not Lipschitz, so bias-sensitive bounds reject probit models.
    """

    tag: str
    lipschitz_of_log: Optional[float]

    @staticmethod
    def logistic() -> "LinkKind":
        return LinkKind("logistic", 1.0)

    @staticmethod
    def probit() -> "LinkKind":
        return LinkKind("probit", None)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.tag == "logistic":
            return expit(t)
        return ndtr(t)

    def log_value(self, t):
        t = np.asarray(t, dtype=float)
        if self.tag == "logistic":
            return log_expit(t)
        return log_ndtr(t)

    @staticmethod
    def from_tag(tag: str) -> "LinkKind":
        if tag == "logistic":
            return LinkKind.logistic()
        if tag == "probit":
            return LinkKind.probit()
        raise ModelError(f"unknown link {tag!r}")


def link_value(link: LinkKind, t):
    """g(t), in [0, 1].  Probit goes through the erf-based normal CDF."""
    return link.value(t)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LossSpec:
    """L-Lipschitz, nonnegative loss of the margin t = y * (<x, w> + b)."""

    tag: str
    lipschitz: float
    _value: Optional[Callable] = field(default=None, repr=False, compare=False)
    _subgradient: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (self.lipschitz > 0 and np.isfinite(self.lipschitz)):
            raise ModelError("loss needs a positive finite Lipschitz constant")

    @staticmethod
    def logistic() -> "LossSpec":
        return LossSpec("logistic_loss", 1.0)

    @staticmethod
    def hinge() -> "LossSpec":
        return LossSpec("hinge", 1.0)

    @staticmethod
    def custom(value, subgradient, lipschitz: float) -> "LossSpec":
        return LossSpec("custom", lipschitz, value, subgradient)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.tag == "logistic_loss":
            # log(1 + exp(-t)) without overflow for very negative t
            return np.logaddexp(0.0, -t)
        if self.tag == "hinge":
            return np.maximum(0.0, 1.0 - t)
        return self._value(t)

    def subgradient(self, t):
        t = np.asarray(t, dtype=float)
        if self.tag == "logistic_loss":
            return -expit(-t)
        if self.tag == "hinge":
            # tie-break: the kink at t = 1 takes subgradient 0
            return np.where(t < 1.0, -1.0, 0.0)
        return self._subgradient(t)

    @property
    def smooth(self) -> bool:
        return self.tag == "logistic_loss"

    @staticmethod
    def from_tag(tag: str, lipschitz: float = 1.0) -> "LossSpec":
        if tag in ("logistic_loss", "logistic"):
            return LossSpec.logistic()
        if tag == "hinge":
            return LossSpec.hinge()
        raise ModelError(f"unknown loss {tag!r}")


def loss_value(loss: LossSpec, t):
    return loss.value(t)


def loss_subgradient(loss: LossSpec, t):
    return loss.subgradient(t)


# ---------------------------------------------------------------------------
# Hypothesis ball
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ConstraintSet:
    """Feasible set {||w|| <= r_w} x [-r_b, r_b]."""

    r_w: float
    r_b: float

    def __post_init__(self):
        if self.r_w < 0 or self.r_b < 0:
            raise ModelError("constraint radii must be nonnegative")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ModelSpec:
    """Data-generating law: X ~ N(mu, Sigma), labels through the link.

    The label probability uses the shifted input directly,
    P(Y=y|X) = g(y*(<X, theta1> + theta0)) with X already including mu.
    Bounds for mu != 0 therefore go through the effective bias
    theta0 + <mu, theta1> of the centered view (see ``centered``), so one
    sampler serves both the central and non-central regimes.
    """

    dim: int
    covariance: Covariance
    theta1: np.ndarray
    theta0: float
    mu: np.ndarray
    link: LinkKind

    @staticmethod
    def create(
        dim: int,
        covariance: Covariance,
        theta1: Sequence[float],
        theta0: float,
        mu: Optional[Sequence[float]] = None,
        link: Optional[LinkKind] = None,
    ) -> "ModelSpec":
        t1 = np.asarray(theta1, dtype=float)
        m = np.zeros(dim) if mu is None else np.asarray(mu, dtype=float)
        if covariance.dim != dim:
            raise ModelError(f"covariance is {covariance.dim}-dimensional, model is {dim}")
        if t1.shape != (dim,):
            raise ModelError(f"theta1 must have length {dim}")
        if m.shape != (dim,):
            raise ModelError(f"mu must have length {dim}")
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(m)) and np.isfinite(theta0)):
            raise ModelError("model parameters must be finite")
        return ModelSpec(dim, covariance, t1, float(theta0), m, link or LinkKind.logistic())

    @property
    def signal_variance(self) -> float:
        """sigma^2 = <theta1, Sigma theta1>; zero iff theta1 = 0."""
        if not np.any(self.theta1):
            return 0.0
        return self.covariance.quad_form(self.theta1)

    @property
    def effective_theta0(self) -> float:
        """Bias of the centered view: theta0 + <mu, theta1>."""
        return self.theta0 + float(self.mu @ self.theta1)

    def centered(self) -> "ModelSpec":
        """Equivalent central model: mu folded into the bias."""
        if not np.any(self.mu):
            return self
        return ModelSpec(
            self.dim, self.covariance, self.theta1, self.effective_theta0,
            np.zeros(self.dim), self.link,
        )

    @property
    def trace_second_moment(self) -> float:
        """tr(E[X X^T]) = tr(Sigma) + ||mu||^2."""
        return self.covariance.trace + float(self.mu @ self.mu)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "covariance": self.covariance.to_json(),
            "theta1": self.theta1.tolist(),
            "theta0": self.theta0,
            "mu": self.mu.tolist(),
            "link": self.link.tag,
        }

    @staticmethod
    def from_json(obj: dict) -> "ModelSpec":
        dim = int(obj["dim"])
        return ModelSpec.create(
            dim,
            Covariance.from_json(obj["covariance"], dim),
            obj["theta1"],
            obj["theta0"],
            obj.get("mu"),
            LinkKind.from_tag(obj.get("link", "logistic")),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Dataset:
    """n x d inputs with +-1 labels and the seed they came from."""

    x: np.ndarray
    y: np.ndarray
    master_seed: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def trial_seed_sequence(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Splittable stream for trial i: same bits whether run serial or parallel."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(trial,))


def _make_rng(seed: SeedLike) -> tuple[np.random.Generator, int]:
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        tag = int(ss.entropy) if isinstance(ss.entropy, int) else 0
    else:
        tag = int(seed)
        ss = np.random.SeedSequence(tag)
    return np.random.Generator(np.random.Philox(ss)), tag


def sample_dataset(model: ModelSpec, n: int, seed: SeedLike) -> Dataset:
    """Draw n i.i.d. pairs (X_i, Y_i); deterministic function of the seed."""
    if n < 1:
        raise ModelError("need n >= 1")
    rng, tag = _make_rng(seed)
    x = model.covariance.sample(rng, n, model.mu)
    p_plus = model.link.value(x @ model.theta1 + model.theta0)
    u = rng.random(n)
    y = np.where(u < p_plus, 1.0, -1.0)
    return Dataset(x, y, tag)


def to_label_weighted(data: Dataset) -> Dataset:
    """(X, Y) -> (Z, Y) with Z = Y * X elementwise; an involution in X."""
    return Dataset(data.y[:, None] * data.x, data.y, data.master_seed)
