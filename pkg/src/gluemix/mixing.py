"""Baseline coefficient rules: data-size, proxy-accuracy, and full-gradient.

The two heuristics never touch target training data (data-size weighting
reads expert metadata, proxy weighting needs one forward sweep per expert
over a held-out proxy set). The full-gradient learner runs the same loop
as the forward-only method but computes the exact coefficient gradient by
backpropagating through the blended network and taking inner products
with each expert: dL/dalpha_i = <grad_theta L, theta_i>.
"""

from __future__ import annotations

import numpy as np

from .bank import ExpertBank, blend, softmax_pullback
from .counters import OpCounters
from .errors import ConfigError
from .loops import run_alpha_learning
from .nets import Batch, _loss_and_grad, check_loss_kind, forward, grad_params
from .optim import OptimConfig
from .reports import RunReport
from .spsa import mixture_loss


def alpha_data_size(bank: ExpertBank) -> np.ndarray:
    """alpha_i proportional to expert i's pretraining set size."""
    sizes = bank.train_sizes()
    if np.any(sizes <= 0):
        raise ConfigError("data-size weighting needs positive train sizes")
    return sizes / sizes.sum()


def proxy_accuracies(
    bank: ExpertBank, proxy_set: Batch, counters: OpCounters | None = None
) -> np.ndarray:
    """Each expert's argmax accuracy on the proxy set (one forward sweep each)."""
    if len(proxy_set) == 0:
        raise ConfigError("proxy set is empty")
    if bank.arch.output != "logits":
        raise ConfigError("proxy accuracy needs a logits output head")
    accs = np.empty(bank.n_experts)
    for i in range(bank.n_experts):
        logits = forward(bank.arch, bank.expert(i), proxy_set, counters)
        accs[i] = float(np.mean(np.argmax(logits, axis=1) == proxy_set.labels))
    return accs


def alpha_proxy_accuracy(
    bank: ExpertBank, proxy_set: Batch, counters: OpCounters | None = None
) -> np.ndarray:
    """alpha_i proportional to proxy accuracy; uniform if every expert scores 0."""
    accs = proxy_accuracies(bank, proxy_set, counters)
    total = accs.sum()
    if total == 0.0:
        return np.full(bank.n_experts, 1.0 / bank.n_experts)
    return accs / total


def grad_alpha_full(
    bank: ExpertBank,
    alpha,
    batch: Batch,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Exact coefficient gradient: one blend, one forward+backward, K inner products."""
    theta = blend(bank, alpha, out=out, counters=counters)
    g_theta = grad_params(bank.arch, theta, batch, loss_kind, counters)
    if counters is not None:
        counters.inner_products += bank.n_experts
    return bank.weights @ g_theta


def _grad_beta_full(
    bank: ExpertBank,
    state,
    batch: Batch,
    loss_kind: str,
    counters: OpCounters | None,
    out: np.ndarray | None,
) -> tuple[np.ndarray, float]:
    theta = blend(bank, state.alpha, out=out, counters=counters)
    loss, g_theta = _loss_and_grad(bank.arch, theta, batch, loss_kind, counters)
    if counters is not None:
        counters.inner_products += bank.n_experts
    grad_alpha = bank.weights @ g_theta
    return softmax_pullback(state.alpha, grad_alpha), loss


def learn_alpha_fullgrad(
    bank: ExpertBank,
    target_train_set: Batch,
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
    config_id: str = "full-grad",
) -> tuple[np.ndarray, np.ndarray, RunReport]:
    """Learn mixture coefficients by backpropagation through the blend.

    Same initialization, Adam settings, and minibatch schedule as the
    forward-only learner; each step costs exactly one forward and one
    backward pass.
    """
    optim = optim if optim is not None else OptimConfig()
    check_loss_kind(bank.arch, loss_kind)
    buffer = np.empty(bank.param_count)

    def grad_fn(state, batch, rng, ctrs):
        return _grad_beta_full(bank, state, batch, loss_kind, ctrs, buffer)

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
        "method": "full-grad",
        "steps": optim.steps,
        "eta": optim.eta,
        "batch_size": optim.batch_size,
        "seed": seed,
    }
    theta_star = blend(bank, state.alpha, counters=report.eval_counters)
    return state.alpha, theta_star, report
