"""gluemix: learn convex mixtures of pretrained expert networks, forward-only.

A bank of fixed expert parameter vectors is blended as theta(alpha) =
sum_i alpha_i theta_i. The coefficients are learned on target data either
by backpropagation through the blend or (the point of this package) with
a two-point perturbation estimator that needs nothing but forward passes.
"""

from .analysis import (
    BiasSlopeResult,
    CostModel,
    LinearMomentsResult,
    McVarianceResult,
    bias_slope,
    cost_model,
    expected_linear_mse,
    fit_cost_model,
    linear_estimator_moments,
    mc_variance,
    random_mlp_instance,
    variance_bound,
)
from .bank import (
    ExpertBank,
    ExpertMeta,
    MixtureState,
    blend,
    sigma_max,
    softmax_map,
    softmax_pullback,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .counters import OpCounters
from .datasets import (
    DatasetBundle,
    DatasetSpec,
    ExpertShard,
    SplitSpec,
    dirichlet_split,
    synth_dataset,
)
from .errors import (
    CheckpointError,
    ConfigError,
    CorruptionError,
    DataError,
    FormatError,
    GluemixError,
    LabelError,
    NumericError,
    ShapeError,
    VersionError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    evaluate,
    finetune,
    run_experiment,
    train_expert_bank,
)
from .mixers import DataSizeMixer, FullGradMixer, GlueMixer, ProxyAccuracyMixer
from .mixing import (
    alpha_data_size,
    alpha_proxy_accuracy,
    grad_alpha_full,
    learn_alpha_fullgrad,
    proxy_accuracies,
)
from .nets import ArchSpec, Batch, forward, grad_params, init_params, loss_eval
from .optim import OptimConfig, adam_update, expert_optim, train_expert, train_params
from .reports import CSV_FIELDS, CurveRow, RunReport, write_csv, write_json
from .spsa import (
    SpsaConfig,
    directional_diff,
    estimate_gradient,
    estimate_gradient_fn,
    learn_alpha_glue,
    mixture_loss,
    sample_direction,
    sample_directions,
    spsa_step,
    two_point_eval,
)

__version__ = "0.1.0"
