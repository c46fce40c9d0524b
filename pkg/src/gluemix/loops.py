"""Shared minibatch loop for learning mixture coefficients.

Both the forward-only optimizer and the full-gradient baseline run the
same loop: beta starts at zero (uniform alpha), minibatches come from
fixed-seed shuffled epochs, Adam updates beta, and an optional validation
split stops the run once the loss plateaus. Only the per-step gradient
callback differs between the two.

The batch schedule draws from its own RNG stream, so two methods given
the same seed see the same minibatches regardless of how many random
numbers their gradient estimators consume.
"""

from __future__ import annotations

import numpy as np

from .bank import ExpertBank, MixtureState
from .counters import OpCounters
from .errors import ConfigError
from .nets import Batch
from .optim import OptimConfig, adam_update, epoch_batches
from .reports import RunReport


def _batch_stream(data: Batch, batch_size: int, rng: np.random.Generator):
    while True:
        for idx in epoch_batches(len(data), batch_size, rng):
            yield data.take(idx)


def run_alpha_learning(
    bank: ExpertBank,
    train_set: Batch,
    optim: OptimConfig,
    seed: int,
    grad_fn,
    *,
    config_id: str = "",
    val_loss_fn=None,
    eval_every: int = 25,
    patience: int = 5,
    min_delta: float = 1e-4,
    counters: OpCounters | None = None,
    on_step=None,
) -> tuple[MixtureState, RunReport]:
    """Drive one coefficient-learning run.

    ``grad_fn(state, batch, rng, counters) -> (grad_beta, train_loss)``
    supplies the beta-space gradient surrogate for each step.
    ``val_loss_fn(state, eval_counters) -> float``, when given, is polled
    every ``eval_every`` steps; after ``patience`` polls without an
    improvement larger than ``min_delta`` the run stops early.
    """
    if len(train_set) == 0:
        raise ConfigError("alpha-learning set is empty")
    ss = np.random.SeedSequence(seed)
    child_batches, child_dirs = ss.spawn(2)
    rng_batches = np.random.default_rng(child_batches)
    rng_dirs = np.random.default_rng(child_dirs)

    counters = counters if counters is not None else OpCounters()
    report = RunReport(config_id=config_id, seed=seed, phase="learn-alpha", counters=counters)
    state = MixtureState.uniform(bank.n_experts)
    batches = _batch_stream(train_set, optim.batch_size, rng_batches)

    best_val = np.inf
    stale = 0
    for step in range(1, optim.steps + 1):
        batch = next(batches)
        grad_beta, train_loss = grad_fn(state, batch, rng_dirs, counters)
        beta, m1, m2 = adam_update(
            state.beta, grad_beta, state.opt_m1, state.opt_m2, state.step + 1, optim
        )
        state = MixtureState(beta=beta, opt_m1=m1, opt_m2=m2, step=state.step + 1)
        report.add_step(step, train_loss)
        if on_step is not None:
            on_step(state, train_loss)
        if val_loss_fn is not None and eval_every > 0 and step % eval_every == 0:
            val_loss = val_loss_fn(state, report.eval_counters)
            if val_loss < best_val - min_delta:
                best_val = val_loss
                stale = 0
            else:
                stale += 1
            if stale >= patience:
                report.flags.append("plateau")
                break
    report.close()
    return state, report
