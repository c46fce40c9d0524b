"""Expert bank, parameter blending, and the simplex reparameterization.

The bank holds K same-architecture parameter vectors as a read-only
(K, P) matrix. Blending is the convex combination sum_i alpha_i * theta_i;
mixture coefficients are optimized in unconstrained beta-space and mapped
onto the simplex with a softmax, which keeps every blend inside the
experts' convex hull.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .counters import OpCounters
from .errors import ConfigError, NumericError, ShapeError
from .nets import ArchSpec, check_params


@dataclass
class ExpertMeta:
    """Per-expert bookkeeping: id, pretraining size, optional proxy accuracy."""

    expert_id: int
    train_size: int | None = None
    proxy_accuracy: float | None = None
    seed: int | None = None

    def as_dict(self) -> dict:
        d = {"expert_id": self.expert_id}
        if self.train_size is not None:
            d["train_size"] = int(self.train_size)
        if self.proxy_accuracy is not None:
            d["proxy_accuracy"] = float(self.proxy_accuracy)
        if self.seed is not None:
            d["seed"] = int(self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertMeta":
        return cls(
            expert_id=int(d.get("expert_id", 0)),
            train_size=d.get("train_size"),
            proxy_accuracy=d.get("proxy_accuracy"),
            seed=d.get("seed"),
        )


class ExpertBank:
    """K fixed expert parameter vectors sharing one architecture.

    The stacked weights are frozen after construction (the array is
    marked read-only), so a bank can be shared freely across threads.
    Expert order is stable; row i of ``weights`` is expert i.
    """

    def __init__(self, arch: ArchSpec, experts, meta: list[ExpertMeta] | None = None):
        rows = [check_params(arch, e) for e in np.atleast_2d(np.asarray(experts, dtype=np.float64))]
        if len(rows) < 1:
            raise ConfigError("an expert bank needs at least one expert")
        self.arch = arch
        self.weights = np.ascontiguousarray(rows, dtype=np.float64)
        self.weights.flags.writeable = False
        if meta is None:
            meta = [ExpertMeta(expert_id=i) for i in range(len(rows))]
        if len(meta) != len(rows):
            raise ConfigError(f"{len(meta)} meta entries for {len(rows)} experts")
        self.meta = list(meta)

    @property
    def n_experts(self) -> int:
        return self.weights.shape[0]

    @property
    def param_count(self) -> int:
        return self.weights.shape[1]

    def expert(self, i: int) -> np.ndarray:
        return self.weights[i]

    def train_sizes(self) -> np.ndarray:
        sizes = [m.train_size for m in self.meta]
        if any(s is None for s in sizes):
            raise ConfigError("every expert needs a train_size for data-size weighting")
        return np.asarray(sizes, dtype=np.float64)

    def __len__(self) -> int:
        return self.n_experts

    def __repr__(self):
        return f"ExpertBank(K={self.n_experts}, P={self.param_count}, arch={self.arch!r})"


def _check_alpha(bank: ExpertBank, alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.shape != (bank.n_experts,):
        raise ShapeError(f"alpha has shape {a.shape}, bank has K={bank.n_experts}")
    if not np.all(np.isfinite(a)):
        raise NumericError("alpha contains non-finite entries")
    return a


def blend(
    bank: ExpertBank,
    alpha,
    out: np.ndarray | None = None,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Coordinate-wise sum_i alpha_i * theta_i.

    ``out`` lets a caller reuse one buffer across the paired probe blends
    of a step; the blend counter feeds the mixing-cost term of the cost
    model either way.
    """
    a = _check_alpha(bank, alpha)
    if out is None:
        out = np.empty(bank.param_count)
    np.dot(a, bank.weights, out=out)
    if counters is not None:
        counters.blends += 1
    return out


def softmax_map(beta) -> np.ndarray:
    """Map unconstrained beta onto the open simplex (max-subtracted softmax)."""
    b = np.asarray(beta, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise NumericError("beta contains non-finite entries")
    e = np.exp(b - b.max())
    return e / e.sum()


def softmax_pullback(alpha, grad_alpha) -> np.ndarray:
    """Chain rule through the softmax: grad_beta_i = alpha_i*(g_i - <alpha, g>).

    The result always sums to zero (gradients live in the simplex tangent).
    """
    a = np.asarray(alpha, dtype=np.float64)
    g = np.asarray(grad_alpha, dtype=np.float64)
    if a.shape != g.shape:
        raise ShapeError(f"alpha shape {a.shape} != grad shape {g.shape}")
    return a * (g - float(a @ g))


def sigma_max(bank: ExpertBank, tol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest singular value of the stacked expert matrix.

    Power iteration on the K x K Gram matrix; the P x P side is never
    formed. Returns 0 for an all-zero bank.
    """
    gram = bank.weights @ bank.weights.T
    k = gram.shape[0]
    if not np.any(gram):
        return 0.0
    if k == 1:
        return float(np.sqrt(gram[0, 0]))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(k)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = float(v @ gram @ v)
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


@dataclass
class MixtureState:
    """Optimizer state for the mixture coefficients.

    ``beta`` is the source of truth; ``alpha`` is recomputed from it on
    construction and never drifts. ``opt_m1``/``opt_m2`` are the Adam
    moments, ``step`` the number of updates applied so far.
    """

    beta: np.ndarray
    opt_m1: np.ndarray
    opt_m2: np.ndarray
    step: int = 0
    alpha: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.opt_m1 = np.asarray(self.opt_m1, dtype=np.float64)
        self.opt_m2 = np.asarray(self.opt_m2, dtype=np.float64)
        if self.beta.shape != self.opt_m1.shape or self.beta.shape != self.opt_m2.shape:
            raise ShapeError("beta and moment vectors must share one shape")
        self.alpha = softmax_map(self.beta)

    @classmethod
    def uniform(cls, k: int) -> "MixtureState":
        """Initial state: beta = 0, so alpha = (1/K, ..., 1/K)."""
        if k < 1:
            raise ConfigError("need at least one expert")
        return cls(beta=np.zeros(k), opt_m1=np.zeros(k), opt_m2=np.zeros(k), step=0)

    @property
    def n_experts(self) -> int:
        return self.beta.shape[0]
