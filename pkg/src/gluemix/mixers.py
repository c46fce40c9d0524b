"""Scikit-learn style estimators around the four coefficient methods.

Each mixer holds a fixed :class:`~gluemix.bank.ExpertBank`, learns (or
computes) simplex coefficients in ``fit``, and then predicts with the
blended network. They follow the usual conventions: constructor arguments
are stored verbatim (``get_params``/``set_params``/``clone`` work),
fitted state lives in trailing-underscore attributes, and ``predict``
refuses to run before ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bank import ExpertBank, blend
from .counters import OpCounters
from .errors import ConfigError
from .mixing import alpha_data_size, learn_alpha_fullgrad, proxy_accuracies
from .nets import Batch, forward
from .optim import OptimConfig
from .reports import RunReport
from .spsa import SpsaConfig, learn_alpha_glue


class BaseMixer(BaseEstimator):
    """Shared plumbing: data validation, blending, predict/score."""

    bank: ExpertBank
    loss_kind: str

    def _make_batch(self, X, y) -> Batch:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.bank.arch.in_dim:
            raise ConfigError(
                f"X has {X.shape[1]} features, bank architecture expects {self.bank.arch.in_dim}"
            )
        return Batch(X, y)

    def _network_outputs(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = check_array(X, dtype=np.float64)
        dummy = np.zeros(X.shape[0], dtype=np.int64)
        return forward(self.bank.arch, self.theta_, Batch(X, dummy))

    def decision_function(self, X) -> np.ndarray:
        """Raw outputs of the blended network (logits for classification)."""
        return self._network_outputs(X)

    def predict(self, X) -> np.ndarray:
        """Class labels for logits heads, raw outputs otherwise."""
        out = self._network_outputs(X)
        if self.bank.arch.output == "logits":
            return np.argmax(out, axis=1)
        return out[:, 0] if out.shape[1] == 1 else out

    def score(self, X, y) -> float:
        """Accuracy for classification, negative mean squared error otherwise."""
        pred = self.predict(X)
        y = np.asarray(y)
        if self.bank.arch.output == "logits":
            return float(np.mean(pred == y))
        return -float(np.mean((pred - y) ** 2))


class DataSizeMixer(BaseMixer):
    """Coefficients proportional to each expert's pretraining set size.

    Needs no target data at all; ``fit`` accepts and ignores X/y so the
    estimator still slots into pipelines.
    """

    def __init__(self, bank: ExpertBank):
        self.bank = bank

    def fit(self, X=None, y=None) -> "DataSizeMixer":
        self.alpha_ = alpha_data_size(self.bank)
        self.theta_ = blend(self.bank, self.alpha_)
        return self


class ProxyAccuracyMixer(BaseMixer):
    """Coefficients proportional to held-out accuracy on a proxy set.

    ``fit(X, y)`` treats (X, y) as the proxy set. If every expert scores
    zero the coefficients fall back to uniform and ``fallback_uniform_``
    is set.
    """

    def __init__(self, bank: ExpertBank):
        self.bank = bank

    def fit(self, X, y) -> "ProxyAccuracyMixer":
        proxy = self._make_batch(X, y)
        self.counters_ = OpCounters()
        accs = proxy_accuracies(self.bank, proxy, self.counters_)
        self.expert_accuracies_ = accs
        total = accs.sum()
        self.fallback_uniform_ = bool(total == 0.0)
        if self.fallback_uniform_:
            self.alpha_ = np.full(self.bank.n_experts, 1.0 / self.bank.n_experts)
        else:
            self.alpha_ = accs / total
        self.theta_ = blend(self.bank, self.alpha_)
        return self


class _LearnedMixer(BaseMixer):
    """Common fit plumbing for the two loss-minimizing mixers."""

    def _optim(self) -> OptimConfig:
        return OptimConfig(
            eta=self.eta,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            steps=self.steps,
            batch_size=self.batch_size,
        )

    def _val_batch(self, X_val, y_val) -> Batch | None:
        if X_val is None:
            return None
        return self._make_batch(X_val, y_val)

    def _finish(self, alpha: np.ndarray, theta: np.ndarray, report: RunReport):
        self.alpha_ = alpha
        self.theta_ = theta
        self.report_ = report
        self.counters_ = report.counters
        self.n_iter_ = report.steps_run
        return self


class FullGradMixer(_LearnedMixer):
    """Learn coefficients by backpropagating through the blended network.

    Each step costs one forward and one backward pass; the coefficient
    gradient is the vector of inner products of grad_theta with each
    expert, pulled back through the softmax.

    Parameters
    ----------
    bank : ExpertBank
        Frozen experts to blend.
    steps : int
        Step budget (may stop earlier on a validation plateau).
    eta, beta1, beta2, epsilon : float
        Adam settings for the coefficient updates.
    batch_size : int
        Minibatch size over the fit data.
    eval_every, patience, min_delta :
        Validation plateau rule, active when fit gets X_val/y_val.
    random_state : int
        Seed for the minibatch schedule.
    """

    def __init__(
        self,
        bank: ExpertBank,
        steps: int = 500,
        eta: float = 1e-2,
        beta1: float = 0.9,
        beta2: float = 0.99,
        epsilon: float = 1e-8,
        batch_size: int = 64,
        eval_every: int = 25,
        patience: int = 5,
        min_delta: float = 1e-4,
        random_state: int = 0,
        loss_kind: str = "cross_entropy",
    ):
        self.bank = bank
        self.steps = steps
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.patience = patience
        self.min_delta = min_delta
        self.random_state = random_state
        self.loss_kind = loss_kind

    def fit(self, X, y, X_val=None, y_val=None) -> "FullGradMixer":
        alpha, theta, report = learn_alpha_fullgrad(
            self.bank,
            self._make_batch(X, y),
            self._optim(),
            self.random_state,
            loss_kind=self.loss_kind,
            val_set=self._val_batch(X_val, y_val),
            eval_every=self.eval_every,
            patience=self.patience,
            min_delta=self.min_delta,
        )
        return self._finish(alpha, theta, report)


class GlueMixer(_LearnedMixer):
    """Learn coefficients with two forward passes per step and no backprop.

    Each step probes the loss at beta +/- mu*u for m random unit
    directions u and feeds the symmetric-difference estimate into Adam.

    Parameters
    ----------
    bank : ExpertBank
        Frozen experts to blend.
    mu : float
        Perturbation radius in beta-space.
    m : int
        Directions averaged per step (2*m forward passes).
    distribution : {'gaussian_sphere', 'rademacher_normalized'}
        Direction law; both give exact unit vectors.
    dimension_scaling : bool
        Multiply estimates by K for the unbiased sphere estimator.
    steps, eta, beta1, beta2, epsilon, batch_size :
        Loop and Adam settings, as in :class:`FullGradMixer`.
    eval_every, patience, min_delta :
        Validation plateau rule, active when fit gets X_val/y_val.
    random_state : int
        Seed for the minibatch schedule and direction draws.
    """

    def __init__(
        self,
        bank: ExpertBank,
        mu: float = 1e-2,
        m: int = 1,
        distribution: str = "gaussian_sphere",
        dimension_scaling: bool = False,
        steps: int = 500,
        eta: float = 1e-2,
        beta1: float = 0.9,
        beta2: float = 0.99,
        epsilon: float = 1e-8,
        batch_size: int = 64,
        eval_every: int = 25,
        patience: int = 5,
        min_delta: float = 1e-4,
        random_state: int = 0,
        loss_kind: str = "cross_entropy",
    ):
        self.bank = bank
        self.mu = mu
        self.m = m
        self.distribution = distribution
        self.dimension_scaling = dimension_scaling
        self.steps = steps
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.eval_every = eval_every
        self.patience = patience
        self.min_delta = min_delta
        self.random_state = random_state
        self.loss_kind = loss_kind

    def fit(self, X, y, X_val=None, y_val=None) -> "GlueMixer":
        spsa = SpsaConfig(
            mu=self.mu,
            m=self.m,
            distribution=self.distribution,
            seed=self.random_state,
            dimension_scaling=self.dimension_scaling,
        )
        alpha, theta, report = learn_alpha_glue(
            self.bank,
            self._make_batch(X, y),
            spsa,
            self._optim(),
            self.random_state,
            loss_kind=self.loss_kind,
            val_set=self._val_batch(X_val, y_val),
            eval_every=self.eval_every,
            patience=self.patience,
            min_delta=self.min_delta,
        )
        return self._finish(alpha, theta, report)
