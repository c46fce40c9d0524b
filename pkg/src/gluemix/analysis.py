"""Cost accounting and estimator-quality checks.

Per-step costs: a full-gradient coefficient update pays one forward, one
backward (gamma times a forward), one blend, and K inner products; a
two-point update pays two forwards and two blends. The gap
(gamma-1)*F - C_mix + D_alpha is what the forward-only method saves per
step. The statistical side checks the estimator's moments against the
closed forms for unit-sphere directions and bounds its mean squared
error by (K-1)/(mK) * sigma_max^2 * |grad_theta L|^2 up to an O(mu^2)
remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .bank import ExpertBank, blend, sigma_max, softmax_map, softmax_pullback
from .counters import OpCounters
from .errors import ConfigError
from .mixing import grad_alpha_full
from .nets import Batch, grad_params
from .spsa import (
    SpsaConfig,
    _estimate_with_losses,
    directional_diff,
    estimate_gradient_fn,
    sample_directions,
)


@dataclass
class CostModel:
    """Per-step cost inputs: forward cost F, backward/forward ratio gamma,
    blend cost C_mix, and inner-product cost D_alpha (all in one unit,
    e.g. milliseconds)."""

    forward_cost: float
    gamma: float = 2.0
    mix_cost: float = 0.0
    inner_cost: float = 0.0

    def __post_init__(self):
        if self.forward_cost < 0 or self.mix_cost < 0 or self.inner_cost < 0:
            raise ConfigError("costs must be non-negative")
        if self.gamma < 1.0:
            raise ConfigError(f"gamma must be at least 1, got {self.gamma}")


def cost_model(cm: CostModel) -> dict:
    """Per-step cost of a full-gradient vs a two-point coefficient update.

    t_full = (1+gamma)F + C_mix + D_alpha, t_spsa = 2(F + C_mix); the gap
    is their difference, (gamma-1)F - C_mix + D_alpha.
    """
    t_full = (1.0 + cm.gamma) * cm.forward_cost + cm.mix_cost + cm.inner_cost
    t_spsa = 2.0 * (cm.forward_cost + cm.mix_cost)
    return {"t_full": t_full, "t_spsa": t_spsa, "gap": t_full - t_spsa}


def fit_cost_model(rows) -> CostModel:
    """Least-squares per-op costs from measured (counters, wall time) rows.

    Each row needs forwards/backwards/blends/inner_products counts and a
    wall_ms total. Costs are constrained non-negative; gamma comes out as
    the fitted backward cost over the fitted forward cost.
    """
    rows = list(rows)
    if len(rows) < 4:
        raise ConfigError("need at least 4 measurements to fit 4 cost parameters")
    a = np.array(
        [
            [r["forwards"], r["backwards"], r["blends"], r["inner_products"]]
            for r in rows
        ],
        dtype=np.float64,
    )
    b = np.array([r["wall_ms"] for r in rows], dtype=np.float64)
    coef, _ = nnls(a, b)
    fwd, bwd, mix, inner = coef
    if fwd <= 0:
        raise ConfigError("fit produced a non-positive forward cost; measurements too degenerate")
    return CostModel(forward_cost=fwd, gamma=max(bwd / fwd, 1.0), mix_cost=mix, inner_cost=inner)


def variance_bound(k: int, m: int, sigma_max_value: float, grad_theta_norm: float, mu: float = 0.0) -> float:
    """((K-1)/(mK)) * sigma_max^2 * |grad_theta L|^2.

    The O(mu^2) remainder is not added; ``mu`` is carried only so callers
    can report the caveat alongside the bound.
    """
    if k < 1 or m < 1:
        raise ConfigError("k and m must be at least 1")
    return (k - 1) / (m * k) * sigma_max_value**2 * grad_theta_norm**2


def expected_linear_mse(k: int, m: int, dimension_scaling: bool = False) -> float:
    """Exact E|ghat - g|^2 / |g|^2 for a linear objective and unit-sphere u.

    The raw estimator has mean g/K, so for m > 1 its error splits into a
    variance part (K-1)/(m K^2) and a squared bias ((K-1)/K)^2; at m = 1
    this reduces to (K-1)/K. With dimension scaling the estimator is
    unbiased and the error is (K-1)/m.
    """
    if k < 1 or m < 1:
        raise ConfigError("k and m must be at least 1")
    if dimension_scaling:
        return (k - 1) / m
    return (k - 1) / (m * k**2) + ((k - 1) / k) ** 2


@dataclass
class LinearMomentsResult:
    empirical_mean: np.ndarray
    empirical_mse: float
    mean_reference: np.ndarray  # g/K raw, g with dimension scaling
    mse_reference: float        # exact closed form, see expected_linear_mse
    paper_mse_reference: float  # (K-1)/(mK) |g|^2
    n_samples: int


def linear_estimator_moments(
    g, spsa: SpsaConfig, n_samples: int, seed: int = 0
) -> LinearMomentsResult:
    """Monte-Carlo moments of the estimator on the linear objective g.z.

    On a linear objective the symmetric difference is exact for any mu,
    so this isolates the direction randomness.
    """
    g = np.asarray(g, dtype=np.float64)
    k = g.shape[0]
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    x0 = np.zeros(k)

    def objective(z: np.ndarray) -> float:
        return float(g @ z)

    total = np.zeros(k)
    sq_err = 0.0
    for _ in range(n_samples):
        ghat = estimate_gradient_fn(objective, x0, spsa, rng)
        total += ghat
        diff = ghat - g
        sq_err += float(diff @ diff)
    scale = float(g @ g)
    return LinearMomentsResult(
        empirical_mean=total / n_samples,
        empirical_mse=sq_err / n_samples,
        mean_reference=g if spsa.dimension_scaling else g / k,
        mse_reference=expected_linear_mse(k, spsa.m, spsa.dimension_scaling) * scale,
        paper_mse_reference=(k - 1) / (spsa.m * k) * scale,
        n_samples=n_samples,
    )


@dataclass
class McVarianceResult:
    empirical_mse: float
    closed_form_reference: float  # (K-1)/(mK) |g_beta|^2
    bound: float                  # (K-1)/(mK) sigma_max^2 |grad_theta|^2
    grad_beta: np.ndarray
    grad_theta_norm: float
    sigma_max: float
    n_samples: int
    mu: float


def mc_variance(
    bank: ExpertBank,
    beta,
    batch: Batch,
    spsa: SpsaConfig,
    n_samples: int,
    loss_kind: str = "cross_entropy",
    seed: int = 0,
) -> McVarianceResult:
    """Monte-Carlo E|ghat - g|^2 of the two-point estimate in beta-space.

    The reference gradient g is exact: backprop through the blend, inner
    products with the experts, then the softmax pullback. Also reports
    the closed-form (K-1)/(mK)|g|^2 and the variance bound built from
    sigma_max and |grad_theta L|.
    """
    if n_samples < 1000:
        raise ConfigError("mc_variance needs at least 1000 samples")
    beta = np.asarray(beta, dtype=np.float64)
    alpha = softmax_map(beta)
    scratch = OpCounters()
    g_alpha = grad_alpha_full(bank, alpha, batch, loss_kind, scratch)
    g_beta = softmax_pullback(alpha, g_alpha)
    theta = blend(bank, alpha)
    g_theta = grad_params(bank.arch, theta, batch, loss_kind, scratch)
    s_max = sigma_max(bank)

    rng = np.random.default_rng(seed)
    buffer = np.empty(bank.param_count)
    sq_err = 0.0
    for _ in range(n_samples):
        ghat, _ = _estimate_with_losses(bank, beta, batch, spsa, rng, loss_kind, None, buffer)
        diff = ghat - g_beta
        sq_err += float(diff @ diff)
    k = bank.n_experts
    g_norm_sq = float(g_beta @ g_beta)
    g_theta_norm = float(np.linalg.norm(g_theta))
    return McVarianceResult(
        empirical_mse=sq_err / n_samples,
        closed_form_reference=(k - 1) / (spsa.m * k) * g_norm_sq,
        bound=variance_bound(k, spsa.m, s_max, g_theta_norm, spsa.mu),
        grad_beta=g_beta,
        grad_theta_norm=g_theta_norm,
        sigma_max=s_max,
        n_samples=n_samples,
        mu=spsa.mu,
    )


def random_mlp_instance(
    k: int = 4,
    layer_sizes=(6, 10, 4),
    batch_size: int = 16,
    seed: int = 0,
    beta_spread: float = 0.5,
) -> tuple[ExpertBank, np.ndarray, Batch]:
    """A random desk-scale instance: bank of K random experts, a beta
    point, and one classification minibatch."""
    from .bank import ExpertMeta
    from .nets import ArchSpec, init_params

    rng = np.random.default_rng(seed)
    arch = ArchSpec(list(layer_sizes), activation="tanh", output="logits")
    experts = np.stack([init_params(arch, rng) for _ in range(k)])
    meta = [ExpertMeta(expert_id=i, train_size=1000) for i in range(k)]
    bank = ExpertBank(arch, experts, meta)
    x = rng.standard_normal((batch_size, arch.in_dim))
    y = rng.integers(0, arch.out_dim, size=batch_size)
    beta = beta_spread * rng.standard_normal(k)
    return bank, beta, Batch(x, y)


_SYNTHETIC_OBJECTIVES = ("quartic", "quadratic")


@dataclass
class BiasSlopeResult:
    slope: float | None
    mus: list[float]
    mean_errors: list[float]
    exact: bool

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "mus": self.mus,
            "mean_errors": self.mean_errors,
            "exact": self.exact,
        }


def bias_slope(
    mus,
    objective: str = "quartic",
    n_directions: int = 16,
    k: int = 3,
    seed: int = 0,
) -> BiasSlopeResult:
    """Log-log slope of |d(mu) - g.u| for a synthetic objective.

    Directions are drawn once and held fixed across all radii. A quartic
    objective shows the O(mu^2) bias of the symmetric difference; on a
    quadratic the even-order terms cancel and the result is flagged exact
    (slope undefined).
    """
    mus = sorted(float(m) for m in mus)
    if len(mus) < 3:
        raise ConfigError("need at least 3 distinct mu values")
    if any(m <= 0 for m in mus):
        raise ConfigError("mu values must be positive")
    if mus[-1] / mus[0] < 99.0:
        raise ConfigError("mu values must span at least two decades")
    if objective not in _SYNTHETIC_OBJECTIVES:
        raise ConfigError(f"objective must be one of {_SYNTHETIC_OBJECTIVES}")
    rng = np.random.default_rng(seed)
    z0 = rng.uniform(0.5, 1.5, size=k)
    if objective == "quartic":
        def fun(z):
            return float(np.sum(z**4))

        grad = 4.0 * z0**3
    else:
        a = rng.standard_normal((k, k))
        a = 0.5 * (a + a.T)
        b = rng.standard_normal(k)

        def fun(z):
            return float(z @ a @ z + b @ z)

        grad = 2.0 * a @ z0 + b
    dirs = sample_directions(k, n_directions, rng)
    mean_errors = []
    for mu in mus:
        errs = []
        for u in dirs:
            d = directional_diff(fun(z0 + mu * u), fun(z0 - mu * u), mu)
            errs.append(abs(d - float(grad @ u)))
        mean_errors.append(float(np.mean(errs)))
    if all(e < 1e-12 for e in mean_errors):
        return BiasSlopeResult(slope=None, mus=mus, mean_errors=mean_errors, exact=True)
    log_mu = np.log(mus)
    log_err = np.log(np.maximum(mean_errors, 1e-300))
    slope = float(np.polyfit(log_mu, log_err, 1)[0])
    return BiasSlopeResult(slope=slope, mus=mus, mean_errors=mean_errors, exact=False)
