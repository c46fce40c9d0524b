"""Adam updates and minibatch training loops.

One Adam implementation serves both full-parameter training (experts,
fine-tuning) and the K-dimensional mixture updates. Bias correction
follows the standard first/second-moment form with ``sqrt(v_hat) + eps``
in the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counters import OpCounters
from .errors import ConfigError
from .nets import ArchSpec, Batch, _loss_and_grad, check_loss_kind, check_params


@dataclass
class OptimConfig:
    """Adam hyperparameters plus loop sizing.

    Defaults mirror the mixture-learning setting (lr 1e-2, moments
    (0.9, 0.99)); expert training and fine-tuning construct their own
    instance with lr 1e-3 and moments (0.9, 0.999).
    """

    eta: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    steps: int = 500
    batch_size: int = 64

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")


def expert_optim(batch_size: int = 64) -> OptimConfig:
    """Adam settings used for expert pretraining."""
    return OptimConfig(eta=1e-3, beta1=0.9, beta2=0.999, batch_size=batch_size)


def finetune_optim(batch_size: int = 64) -> OptimConfig:
    """Adam settings for lightweight fine-tuning from a blended prior."""
    return OptimConfig(eta=3e-4, beta1=0.9, beta2=0.999, batch_size=batch_size)


def adam_update(
    values: np.ndarray,
    grad: np.ndarray,
    m1: np.ndarray,
    m2: np.ndarray,
    t: int,
    cfg: OptimConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam step; ``t`` is the 1-based step index.

    Returns updated (values, m1, m2) without mutating the inputs.
    """
    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad * grad
    m1_hat = m1 / (1.0 - cfg.beta1**t)
    m2_hat = m2 / (1.0 - cfg.beta2**t)
    return values - cfg.eta * m1_hat / (np.sqrt(m2_hat) + cfg.epsilon), m1, m2


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Index arrays for one shuffled epoch; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_params(
    arch: ArchSpec,
    init: np.ndarray,
    data: Batch,
    epochs: int,
    cfg: OptimConfig,
    seed: int,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    epoch_hook=None,
) -> tuple[np.ndarray, list[float]]:
    """Minibatch Adam over the full parameter vector.

    Deterministic for a given seed. Returns the trained parameters and
    the mean training loss of every epoch (length ``epochs``).
    ``epoch_hook(epoch_index, params, mean_loss)`` runs after each epoch.
    """
    if len(data) == 0:
        raise ConfigError("training dataset is empty")
    if epochs < 0:
        raise ConfigError("epochs must be non-negative")
    check_loss_kind(arch, loss_kind)
    params = check_params(arch, init).copy()
    rng = np.random.default_rng(seed)
    m1 = np.zeros_like(params)
    m2 = np.zeros_like(params)
    t = 0
    history: list[float] = []
    for epoch in range(epochs):
        losses = []
        for idx in epoch_batches(len(data), cfg.batch_size, rng):
            loss, grad = _loss_and_grad(arch, params, data.take(idx), loss_kind, counters)
            t += 1
            params, m1, m2 = adam_update(params, grad, m1, m2, t, cfg)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        if epoch_hook is not None:
            epoch_hook(epoch, params, mean_loss)
    return params, history


def train_expert(
    arch: ArchSpec,
    init: np.ndarray,
    dataset: Batch,
    epochs: int,
    optim: OptimConfig | None = None,
    seed: int = 0,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Train one expert from ``init``; zero epochs returns ``init`` unchanged."""
    if optim is None:
        optim = expert_optim()
    if epochs == 0:
        return check_params(arch, init).copy()
    params, _ = train_params(arch, init, dataset, epochs, optim, seed, loss_kind, counters)
    return params
