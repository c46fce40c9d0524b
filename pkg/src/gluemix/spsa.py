"""Forward-only mixture learning via two-point simultaneous perturbation.

Each step draws a unit direction u in coefficient space, probes the loss
at beta +/- mu*u on one shared minibatch (two blends, two forward passes,
zero backward passes), and feeds the symmetric finite difference into an
Adam update on beta. The perturbation happens in unconstrained beta-space;
the softmax map keeps every probed blend inside the experts' convex hull.

The raw unit-sphere estimator has expectation g/K rather than g; Adam's
per-coordinate normalization absorbs that scale. Set
``dimension_scaling=True`` to multiply the estimate by K and recover the
unbiased form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import ExpertBank, MixtureState, blend, softmax_map
from .counters import OpCounters
from .errors import ConfigError
from .loops import run_alpha_learning
from .nets import Batch, check_loss_kind, forward, loss_eval
from .optim import OptimConfig, adam_update
from .reports import RunReport

DIRECTION_DISTRIBUTIONS = ("gaussian_sphere", "rademacher_normalized")


@dataclass
class SpsaConfig:
    """Two-point estimator settings.

    mu : float
        Perturbation radius in beta-space. Estimator bias is O(mu^2);
        too small a value amplifies floating-point noise instead.
    m : int
        Independent directions averaged per step (2*m forward passes).
    distribution : {'gaussian_sphere', 'rademacher_normalized'}
        Both produce exact unit vectors with E[u u^T] = I/K.
    seed : int
        Stream for standalone gradient estimates; learning runs own
        their direction stream and ignore it.
    dimension_scaling : bool
        Multiply the estimate by K (see module docstring).
    """

    mu: float = 1e-2
    m: int = 1
    distribution: str = "gaussian_sphere"
    seed: int = 0
    dimension_scaling: bool = False

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.m < 1:
            raise ConfigError(f"m must be at least 1, got {self.m}")
        if self.distribution not in DIRECTION_DISTRIBUTIONS:
            raise ConfigError(
                f"distribution must be one of {DIRECTION_DISTRIBUTIONS}, got {self.distribution!r}"
            )


def sample_directions(
    k: int, n: int, rng: np.random.Generator, distribution: str = "gaussian_sphere"
) -> np.ndarray:
    """n unit direction vectors as rows of an (n, k) array."""
    if k < 1:
        raise ConfigError("direction dimension must be at least 1")
    if distribution == "gaussian_sphere":
        u = rng.standard_normal((n, k))
        norms = np.linalg.norm(u, axis=1)
        # a numerically-zero draw is astronomically unlikely; redraw anyway
        while np.any(norms < 1e-12):
            bad = norms < 1e-12
            u[bad] = rng.standard_normal((int(bad.sum()), k))
            norms = np.linalg.norm(u, axis=1)
        return u / norms[:, None]
    if distribution == "rademacher_normalized":
        signs = rng.integers(0, 2, size=(n, k)) * 2 - 1
        return signs / np.sqrt(k)
    raise ConfigError(f"unknown direction distribution {distribution!r}")


def sample_direction(
    k: int, rng: np.random.Generator, distribution: str = "gaussian_sphere"
) -> np.ndarray:
    """One unit direction vector of length k."""
    return sample_directions(k, 1, rng, distribution)[0]


def mixture_loss(
    bank: ExpertBank,
    beta,
    batch: Batch,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    out: np.ndarray | None = None,
) -> float:
    """Loss of the blended network at alpha = softmax(beta): one blend, one forward."""
    theta = blend(bank, softmax_map(beta), out=out, counters=counters)
    preds = forward(bank.arch, theta, batch, counters=counters)
    return loss_eval(preds, batch, loss_kind)


def two_point_eval(
    bank: ExpertBank,
    beta,
    u,
    mu: float,
    batch: Batch,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    out: np.ndarray | None = None,
) -> tuple[float, float]:
    """Paired probe losses at beta +/- mu*u on the same minibatch.

    Exactly two blends and two forward passes; the forward path is
    deterministic, so the difference reflects only the perturbation.
    ``out`` reuses a single blend buffer for both probes.
    """
    if mu <= 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    beta = np.asarray(beta, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    l_plus = mixture_loss(bank, beta + mu * u, batch, loss_kind, counters, out)
    l_minus = mixture_loss(bank, beta - mu * u, batch, loss_kind, counters, out)
    return l_plus, l_minus


def directional_diff(l_plus: float, l_minus: float, mu: float) -> float:
    """Symmetric finite difference (L+ - L-) / (2 mu)."""
    if mu <= 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    return (l_plus - l_minus) / (2.0 * mu)


def estimate_gradient_fn(
    f,
    x,
    spsa: SpsaConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Two-point estimate of grad f at x for an arbitrary objective.

    Averages ``spsa.m`` fresh directions: ghat = mean_r d_r * u_r with
    d_r the symmetric difference along u_r at radius mu.
    """
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(spsa.seed)
    k = x.shape[0]
    ghat = np.zeros(k)
    for u in sample_directions(k, spsa.m, rng, spsa.distribution):
        d = directional_diff(f(x + spsa.mu * u), f(x - spsa.mu * u), spsa.mu)
        ghat += d * u
    ghat /= spsa.m
    if spsa.dimension_scaling:
        ghat *= k
    return ghat


def _estimate_with_losses(
    bank: ExpertBank,
    beta,
    batch: Batch,
    spsa: SpsaConfig,
    rng: np.random.Generator,
    loss_kind: str,
    counters: OpCounters | None,
    out: np.ndarray | None,
) -> tuple[np.ndarray, float]:
    """Gradient estimate plus the mean of all 2m probe losses."""
    losses: list[float] = []

    def probed(z: np.ndarray) -> float:
        val = mixture_loss(bank, z, batch, loss_kind, counters, out)
        losses.append(val)
        return val

    ghat = estimate_gradient_fn(probed, beta, spsa, rng)
    return ghat, float(np.mean(losses))


def estimate_gradient(
    bank: ExpertBank,
    beta,
    batch: Batch,
    spsa: SpsaConfig,
    rng: np.random.Generator | None = None,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Estimate the beta-space loss gradient from 2m forward passes."""
    check_loss_kind(bank.arch, loss_kind)
    if rng is None:
        rng = np.random.default_rng(spsa.seed)
    ghat, _ = _estimate_with_losses(bank, beta, batch, spsa, rng, loss_kind, counters, out)
    return ghat


def spsa_step(
    state: MixtureState,
    bank: ExpertBank,
    batch: Batch,
    spsa: SpsaConfig,
    optim: OptimConfig,
    rng: np.random.Generator | None = None,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    out: np.ndarray | None = None,
) -> MixtureState:
    """One forward-only update: estimate, Adam on beta, re-derive alpha."""
    if rng is None:
        rng = np.random.default_rng(spsa.seed)
    ghat, _ = _estimate_with_losses(bank, state.beta, batch, spsa, rng, loss_kind, counters, out)
    beta, m1, m2 = adam_update(state.beta, ghat, state.opt_m1, state.opt_m2, state.step + 1, optim)
    return MixtureState(beta=beta, opt_m1=m1, opt_m2=m2, step=state.step + 1)


def learn_alpha_glue(
    bank: ExpertBank,
    target_train_set: Batch,
    spsa: SpsaConfig | None = None,
    optim: OptimConfig | None = None,
    seed: int = 0,
    *,
    loss_kind: str = "cross_entropy",
    val_set: Batch | None = None,
    eval_every: int = 25,
    patience: int = 5,
    min_delta: float = 1e-4,
    counters: OpCounters | None = None,
    on_step=None,
    config_id: str = "glue",
) -> tuple[np.ndarray, np.ndarray, RunReport]:
    """Learn mixture coefficients with forward passes only.

    Starts from uniform alpha, runs the shared minibatch loop with the
    two-point estimator (m=1 by default), and returns the final alpha,
    the blended parameter vector at that alpha, and the run report. The
    backward counter stays at zero throughout.
    """
    spsa = spsa if spsa is not None else SpsaConfig()
    optim = optim if optim is not None else OptimConfig()
    check_loss_kind(bank.arch, loss_kind)
    buffer = np.empty(bank.param_count)

    def grad_fn(state, batch, rng, ctrs):
        return _estimate_with_losses(bank, state.beta, batch, spsa, rng, loss_kind, ctrs, buffer)

    val_loss_fn = None
    if val_set is not None:
        def val_loss_fn(state, eval_ctrs):
            return mixture_loss(bank, state.beta, val_set, loss_kind, eval_ctrs)

    state, report = run_alpha_learning(
        bank,
        target_train_set,
        optim,
        seed,
        grad_fn,
        config_id=config_id,
        val_loss_fn=val_loss_fn,
        eval_every=eval_every,
        patience=patience,
        min_delta=min_delta,
        counters=counters,
        on_step=on_step,
    )
    report.config_echo = {
        "method": "glue",
        "mu": spsa.mu,
        "m": spsa.m,
        "distribution": spsa.distribution,
        "dimension_scaling": spsa.dimension_scaling,
        "steps": optim.steps,
        "eta": optim.eta,
        "batch_size": optim.batch_size,
        "seed": seed,
    }
    theta_star = blend(bank, state.alpha, counters=report.eval_counters)
    return state.alpha, theta_star, report
