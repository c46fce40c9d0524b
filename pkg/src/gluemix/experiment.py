"""End-to-end experiment pipeline.

One run: synthesize data, carve non-IID expert splits, train the expert
bank, then for each coefficient method (data-size, proxy, full-grad,
glue) record the zero-shot metrics of the blended prior, fine-tune all
parameters with the coefficients held fixed, and evaluate per epoch.
Repeats over seeds and reports per-seed plus mean results, writing
checkpoints, plot-ready CSV curves, and a JSON summary.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bank import ExpertBank, ExpertMeta, blend
from .checkpoint import save_checkpoint
from .counters import OpCounters
from .datasets import DatasetBundle, DatasetSpec, SplitSpec, dirichlet_split, synth_dataset
from .errors import ConfigError, GluemixError
from .mixing import alpha_data_size, learn_alpha_fullgrad, proxy_accuracies
from .nets import ArchSpec, Batch, forward, init_params, loss_eval
from .optim import OptimConfig, expert_optim, finetune_optim, train_expert, train_params
from .reports import CurveRow, RunReport, write_csv, write_json
from .spsa import SpsaConfig, learn_alpha_glue

METHODS = ("data-size", "proxy", "full-grad", "glue")


@dataclass
class ExperimentConfig:
    """Full pipeline settings; JSON keys mirror the field names."""

    seeds: tuple[int, ...] = (0, 1, 2)
    arch: ArchSpec = field(default_factory=lambda: ArchSpec([20, 64, 64, 5]))
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    split: SplitSpec = field(
        default_factory=lambda: SplitSpec(n_experts=4, dirichlet_concentration=0.5, per_expert_budget=500)
    )
    loss_kind: str = "cross_entropy"
    expert_epochs: int = 30
    shared_expert_init: bool = True
    expert_optim: OptimConfig = field(default_factory=lambda: expert_optim())
    alpha_optim: OptimConfig = field(default_factory=lambda: OptimConfig(steps=500))
    spsa: SpsaConfig = field(default_factory=SpsaConfig)
    finetune_epochs: int = 20
    finetune_optim: OptimConfig = field(default_factory=lambda: finetune_optim())
    eval_every: int = 25
    patience: int = 5
    min_delta: float = 1e-4
    methods: tuple[str, ...] = METHODS

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; valid: {list(METHODS)}")
        if self.arch.in_dim != self.dataset.d_in and self.dataset.kind != "file":
            raise ConfigError(
                f"arch expects d_in={self.arch.in_dim}, dataset provides {self.dataset.d_in}"
            )
        if self.expert_epochs < 1 or self.finetune_epochs < 0:
            raise ConfigError("expert_epochs must be >= 1 and finetune_epochs >= 0")

    def as_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "arch": self.arch.to_dict(),
            "dataset": self.dataset.as_dict(),
            "split": self.split.as_dict(),
            "loss_kind": self.loss_kind,
            "expert_train": {
                "epochs": self.expert_epochs,
                "shared_init": self.shared_expert_init,
                "eta": self.expert_optim.eta,
                "beta1": self.expert_optim.beta1,
                "beta2": self.expert_optim.beta2,
                "epsilon": self.expert_optim.epsilon,
                "batch_size": self.expert_optim.batch_size,
            },
            "alpha_learning": {
                "steps": self.alpha_optim.steps,
                "eta": self.alpha_optim.eta,
                "beta1": self.alpha_optim.beta1,
                "beta2": self.alpha_optim.beta2,
                "epsilon": self.alpha_optim.epsilon,
                "batch_size": self.alpha_optim.batch_size,
                "mu": self.spsa.mu,
                "m": self.spsa.m,
                "distribution": self.spsa.distribution,
                "dimension_scaling": self.spsa.dimension_scaling,
                "eval_every": self.eval_every,
                "patience": self.patience,
                "min_delta": self.min_delta,
            },
            "finetune": {
                "epochs": self.finetune_epochs,
                "eta": self.finetune_optim.eta,
                "beta1": self.finetune_optim.beta1,
                "beta2": self.finetune_optim.beta2,
                "epsilon": self.finetune_optim.epsilon,
                "batch_size": self.finetune_optim.batch_size,
            },
            "methods": list(self.methods),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {
            "seeds", "arch", "dataset", "split", "loss_kind", "expert_train",
            "alpha_learning", "finetune", "methods",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        if "seeds" in d:
            kwargs["seeds"] = tuple(int(s) for s in d["seeds"])
        if "arch" in d:
            kwargs["arch"] = ArchSpec.from_dict(d["arch"])
        if "dataset" in d:
            kwargs["dataset"] = DatasetSpec.from_dict(d["dataset"])
        if "split" in d:
            kwargs["split"] = SplitSpec.from_dict(d["split"])
        if "loss_kind" in d:
            kwargs["loss_kind"] = d["loss_kind"]
        if "methods" in d:
            kwargs["methods"] = tuple(d["methods"])
        et = dict(d.get("expert_train", {}))
        if et:
            kwargs["expert_epochs"] = int(et.pop("epochs", 30))
            if "shared_init" in et:
                kwargs["shared_expert_init"] = bool(et.pop("shared_init"))
            kwargs["expert_optim"] = _optim_from(et, expert_optim())
        al = dict(d.get("alpha_learning", {}))
        if al:
            spsa_keys = {}
            for key in ("mu", "m", "distribution", "dimension_scaling"):
                if key in al:
                    spsa_keys[key] = al.pop(key)
            for key, attr in (("eval_every", "eval_every"), ("patience", "patience"), ("min_delta", "min_delta")):
                if key in al:
                    kwargs[attr] = al.pop(key)
            kwargs["spsa"] = SpsaConfig(**spsa_keys) if spsa_keys else SpsaConfig()
            kwargs["alpha_optim"] = _optim_from(al, OptimConfig(steps=500))
        ft = dict(d.get("finetune", {}))
        if ft:
            kwargs["finetune_epochs"] = int(ft.pop("epochs", 20))
            kwargs["finetune_optim"] = _optim_from(ft, finetune_optim())
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                payload = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


def _optim_from(d: dict, base: OptimConfig) -> OptimConfig:
    allowed = {"eta", "beta1", "beta2", "epsilon", "steps", "batch_size"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
    return replace(base, **d)


@contextmanager
def _phase(name: str):
    """Tag any pipeline error with the phase it came from."""
    try:
        yield
    except GluemixError as exc:
        exc.args = (f"[phase {name}] {exc}",)
        raise


def evaluate(
    arch: ArchSpec,
    params,
    test_set: Batch,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
) -> dict:
    """Accuracy (argmax, ties to the lowest class index) and mean loss."""
    if len(test_set) == 0:
        raise ConfigError("evaluation set is empty")
    if arch.output != "logits":
        raise ConfigError("evaluate needs a logits output head")
    logits = forward(arch, params, test_set, counters)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == test_set.labels))
    return {"accuracy": accuracy, "loss": loss_eval(logits, test_set, loss_kind)}


def finetune(
    arch: ArchSpec,
    theta_star,
    target_train_set: Batch,
    epochs: int,
    optim: OptimConfig | None = None,
    seed: int = 0,
    *,
    eval_set: Batch | None = None,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    config_id: str = "",
) -> tuple[np.ndarray, RunReport]:
    """Full-parameter training from the blended prior, coefficients fixed.

    Epoch 0 in the report is the zero-shot row (the untouched prior);
    with ``epochs=0`` that row is all that happens.
    """
    if optim is None:
        optim = finetune_optim()
    counters = counters if counters is not None else OpCounters()
    report = RunReport(config_id=config_id, seed=seed, phase="finetune", counters=counters)

    def measure(params) -> float | None:
        if eval_set is None:
            return None
        return evaluate(arch, params, eval_set, loss_kind, report.eval_counters)["accuracy"]

    report.add_epoch(0, measure(theta_star))
    if epochs == 0:
        report.close()
        return np.asarray(theta_star, dtype=np.float64).copy(), report

    def epoch_hook(epoch, params, mean_loss):
        report.add_epoch(epoch + 1, measure(params), train_loss=mean_loss)

    params, _ = train_params(
        arch, theta_star, target_train_set, epochs, optim, seed, loss_kind, counters, epoch_hook
    )
    report.close()
    return params, report


def train_expert_bank(
    arch: ArchSpec,
    shards,
    epochs: int,
    optim: OptimConfig | None = None,
    seed: int = 0,
    loss_kind: str = "cross_entropy",
    counters: OpCounters | None = None,
    shared_init: bool = True,
) -> ExpertBank:
    """Train one expert per shard.

    With ``shared_init`` all experts start from one common random init
    (the pretrained-specialists setting, where blends interpolate
    sensibly); otherwise each expert gets its own.
    """
    if optim is None:
        optim = expert_optim()
    experts = []
    meta = []
    common = init_params(arch, np.random.default_rng(np.random.SeedSequence([seed, 0])))
    for k, shard in enumerate(shards):
        if shared_init:
            init = common
        else:
            init = init_params(arch, np.random.default_rng(np.random.SeedSequence([seed, k])))
        sub_seed = np.random.SeedSequence([seed, k, 1])
        params = train_expert(arch, init, shard.data, epochs, optim, sub_seed, loss_kind, counters)
        experts.append(params)
        meta.append(ExpertMeta(expert_id=k, train_size=len(shard.data), seed=seed))
    return ExpertBank(arch, np.stack(experts), meta)


@dataclass
class MethodRun:
    method: str
    seed: int
    alpha: np.ndarray
    zero_shot: dict
    final: dict
    learn_report: RunReport
    finetune_report: RunReport
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "alpha": [float(a) for a in self.alpha],
            "zero_shot": self.zero_shot,
            "final": self.final,
            "flags": self.flags,
            "learn": self.learn_report.as_dict(),
            "finetune": self.finetune_report.as_dict(),
        }


@dataclass
class ExperimentResult:
    config: dict
    per_seed: dict
    rows: list[CurveRow]
    summary: dict
    expert_stats: dict

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": self.summary,
            "expert_stats": self.expert_stats,
            "per_seed": {
                str(seed): {m: run.as_dict() for m, run in runs.items()}
                for seed, runs in self.per_seed.items()
            },
        }


def determine_alpha(
    method: str,
    bank: ExpertBank,
    bundle: DatasetBundle,
    config: ExperimentConfig,
    seed: int,
) -> tuple[np.ndarray, np.ndarray, RunReport, list[str]]:
    """Run one of the four coefficient methods; returns (alpha, theta*, report, flags)."""
    flags: list[str] = []
    if method == "data-size":
        report = RunReport(config_id=method, seed=seed, phase="learn-alpha")
        alpha = alpha_data_size(bank)
        theta = blend(bank, alpha, counters=report.eval_counters)
        report.close()
        return alpha, theta, report, flags
    if method == "proxy":
        report = RunReport(config_id=method, seed=seed, phase="learn-alpha")
        accs = proxy_accuracies(bank, bundle.proxy_set, report.counters)
        total = accs.sum()
        if total == 0.0:
            alpha = np.full(bank.n_experts, 1.0 / bank.n_experts)
            flags.append("proxy-degenerate-uniform")
            report.flags.append("proxy-degenerate-uniform")
        else:
            alpha = accs / total
        theta = blend(bank, alpha, counters=report.eval_counters)
        report.close()
        return alpha, theta, report, flags
    common = dict(
        loss_kind=config.loss_kind,
        val_set=bundle.val_set,
        eval_every=config.eval_every,
        patience=config.patience,
        min_delta=config.min_delta,
        config_id=method,
    )
    if method == "full-grad":
        alpha, theta, report = learn_alpha_fullgrad(
            bank, bundle.alpha_set, config.alpha_optim, seed, **common
        )
        return alpha, theta, report, list(report.flags)
    if method == "glue":
        alpha, theta, report = learn_alpha_glue(
            bank, bundle.alpha_set, config.spsa, config.alpha_optim, seed, **common
        )
        return alpha, theta, report, list(report.flags)
    raise ConfigError(f"unknown method {method!r}")


def run_single_seed(config: ExperimentConfig, seed: int, out_dir: Path | None = None):
    """One full pipeline pass; returns (runs dict, curve rows, expert stats)."""
    with _phase("synth"):
        bundle = synth_dataset(replace(config.dataset, seed=config.dataset.seed + seed))
    with _phase("split"):
        shards = dirichlet_split(bundle.source_pool, replace(config.split, seed=config.split.seed + seed))
    with _phase("train-experts"):
        t0 = time.perf_counter()
        expert_counters = OpCounters()
        bank = train_expert_bank(
            config.arch, shards, config.expert_epochs, config.expert_optim, seed,
            config.loss_kind, expert_counters, shared_init=config.shared_expert_init,
        )
        expert_wall_ms = (time.perf_counter() - t0) * 1000.0
    expert_stats = {
        "wall_ms": expert_wall_ms,
        "counters": expert_counters.as_dict(),
        "target_accuracy": [
            evaluate(config.arch, bank.expert(k), bundle.test_set, config.loss_kind)["accuracy"]
            for k in range(bank.n_experts)
        ],
        "rescaled_shards": [int(s.rescaled) for s in shards],
    }
    if out_dir is not None:
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for k in range(bank.n_experts):
            save_checkpoint(
                ckpt_dir / f"seed{seed}_expert{k}.ckpt",
                config.arch,
                bank.expert(k),
                bank.meta[k].as_dict(),
            )

    runs: dict[str, MethodRun] = {}
    rows: list[CurveRow] = []
    for method in config.methods:
        with _phase(f"learn-alpha:{method}"):
            alpha, theta, learn_report, flags = determine_alpha(method, bank, bundle, config, seed)
        with _phase(f"evaluate:{method}"):
            zero_shot = evaluate(config.arch, theta, bundle.test_set, config.loss_kind)
        with _phase(f"finetune:{method}"):
            ft_params, ft_report = finetune(
                config.arch,
                theta,
                bundle.finetune_set,
                config.finetune_epochs,
                config.finetune_optim,
                seed,
                eval_set=bundle.test_set,
                loss_kind=config.loss_kind,
                config_id=method,
            )
        final = evaluate(config.arch, ft_params, bundle.test_set, config.loss_kind)
        run = MethodRun(
            method=method,
            seed=seed,
            alpha=alpha,
            zero_shot=zero_shot,
            final=final,
            learn_report=learn_report,
            finetune_report=ft_report,
            flags=flags,
        )
        runs[method] = run
        rows.extend(learn_report.rows)
        rows.extend(ft_report.rows)
        if out_dir is not None:
            save_checkpoint(
                out_dir / "checkpoints" / f"seed{seed}_{method}_prior.ckpt",
                config.arch,
                theta,
                {"method": method, "seed": seed, "alpha": [float(a) for a in alpha]},
            )
    return runs, rows, expert_stats


def summarize(per_seed: dict) -> dict:
    summary: dict = {}
    methods = next(iter(per_seed.values())).keys()
    for method in methods:
        finals = {seed: per_seed[seed][method].final["accuracy"] for seed in per_seed}
        zeros = {seed: per_seed[seed][method].zero_shot["accuracy"] for seed in per_seed}
        summary[method] = {
            "mean_final_accuracy": float(np.mean(list(finals.values()))),
            "mean_zero_shot_accuracy": float(np.mean(list(zeros.values()))),
            "per_seed_final_accuracy": {str(s): float(v) for s, v in finals.items()},
            "per_seed_zero_shot_accuracy": {str(s): float(v) for s, v in zeros.items()},
        }
    return summary


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run the whole pipeline over all configured seeds.

    When ``out_dir`` is given, writes expert/prior checkpoints, a curves
    CSV (one row per recorded step/epoch), per-seed JSON reports, and a
    summary table. A failed phase leaves an INCOMPLETE marker naming it.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "INCOMPLETE").write_text("experiment started\n")
    per_seed: dict = {}
    rows: list[CurveRow] = []
    expert_stats: dict = {}
    try:
        for seed in config.seeds:
            runs, seed_rows, stats = run_single_seed(config, seed, out_path)
            per_seed[seed] = runs
            rows.extend(seed_rows)
            expert_stats[str(seed)] = stats
    except GluemixError as exc:
        if out_path is not None:
            (out_path / "INCOMPLETE").write_text(f"failed: {exc}\n")
        raise
    summary = summarize(per_seed)
    result = ExperimentResult(
        config=config.as_dict(),
        per_seed=per_seed,
        rows=rows,
        summary=summary,
        expert_stats=expert_stats,
    )
    if out_path is not None:
        write_csv(out_path / "curves.csv", rows)
        write_json(out_path / "summary.json", {
            "config": result.config,
            "summary": result.summary,
            "expert_stats": result.expert_stats,
        })
        for seed, runs in per_seed.items():
            write_json(
                out_path / f"report_seed{seed}.json",
                {m: r.as_dict() for m, r in runs.items()},
            )
        write_json(out_path / "config.json", result.config)
        (out_path / "INCOMPLETE").unlink()
    return result
