"""Command-line interface.

Stages of the pipeline are exposed as subcommands (`synth`, `split`,
`train-experts`, `learn-alpha`, `finetune`, `evaluate`, `run`) plus the
`analyze` checks. A single JSON config document drives everything; flags
override individual keys. Exit codes: 0 success, 2 config error, 3 data
error, 4 numeric error.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import analysis
from .bank import ExpertBank, ExpertMeta, blend
from .checkpoint import load_checkpoint, save_checkpoint
from .counters import OpCounters
from .datasets import DatasetBundle, dirichlet_split, synth_dataset
from .errors import ConfigError, DataError, GluemixError
from .experiment import (
    ExperimentConfig,
    determine_alpha,
    evaluate,
    finetune,
    run_experiment,
)
from .mixing import learn_alpha_fullgrad
from .nets import Batch, forward, grad_params
from .optim import OptimConfig
from .reports import write_csv, write_json
from .spsa import SpsaConfig, learn_alpha_glue

METHOD_CHOICES = ("data-size", "proxy", "full-grad", "glue")


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_json(path)


def _load_bundle(path: str) -> DatasetBundle:
    return DatasetBundle.load(path)


def _load_bank(experts_dir: str) -> ExpertBank:
    paths = sorted(Path(experts_dir).glob("expert*.ckpt"))
    if not paths:
        raise DataError(f"no expert*.ckpt files under {experts_dir}")
    arch = None
    weights = []
    meta = []
    for p in paths:
        a, values, md = load_checkpoint(p)
        if arch is None:
            arch = a
        elif a != arch:
            raise DataError(f"{p}: architecture differs from the first expert")
        weights.append(values)
        meta.append(ExpertMeta.from_dict(md))
    return ExpertBank(arch, np.stack(weights), meta)


@click.group()
def cli():
    """Learn convex mixtures of pretrained experts, forward-only."""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the dataset seed.")
def synth(config_path, out_path, seed):
    """Synthesize a dataset bundle and save it as .npz."""
    config = _load_config(config_path)
    spec = config.dataset
    if seed is not None:
        spec = replace(spec, seed=seed)
    bundle = synth_dataset(spec)
    bundle.save(out_path)
    click.echo(f"wrote dataset bundle to {out_path}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the split seed.")
def split(config_path, data_path, out_path, seed):
    """Draw non-IID expert splits from the source pool."""
    config = _load_config(config_path)
    spec = config.split
    if seed is not None:
        spec = replace(spec, seed=seed)
    bundle = _load_bundle(data_path)
    shards = dirichlet_split(bundle.source_pool, spec)
    arrays = {}
    for k, shard in enumerate(shards):
        arrays[f"expert{k}_x"] = shard.data.inputs
        arrays[f"expert{k}_y"] = shard.data.labels
        arrays[f"expert{k}_proportions"] = shard.proportions
    header = {"n_experts": spec.n_experts, "split": spec.as_dict(),
              "rescaled": [bool(s.rescaled) for s in shards]}
    arrays["header_json"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    np.savez(out_path, **arrays)
    click.echo(f"wrote {len(shards)} expert splits to {out_path}")


@cli.command("train-experts")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--splits", "splits_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--epochs", type=int, default=None, help="Override expert training epochs.")
def train_experts_cmd(config_path, splits_path, out_dir, seed, epochs):
    """Train one expert per split and save checkpoints."""
    from .experiment import train_expert_bank
    from .datasets import ExpertShard

    config = _load_config(config_path)
    epochs = epochs if epochs is not None else config.expert_epochs
    try:
        with np.load(splits_path) as z:
            header = json.loads(bytes(z["header_json"]).decode("utf-8"))
            shards = [
                ExpertShard(
                    data=Batch(z[f"expert{k}_x"], z[f"expert{k}_y"]),
                    proportions=z[f"expert{k}_proportions"],
                    realized_counts=np.zeros(0, dtype=np.int64),
                )
                for k in range(header["n_experts"])
            ]
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load splits from {splits_path}: {exc}") from exc
    bank = train_expert_bank(config.arch, shards, epochs, config.expert_optim, seed, config.loss_kind)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(bank.n_experts):
        save_checkpoint(out / f"expert{k}.ckpt", config.arch, bank.expert(k), bank.meta[k].as_dict())
    click.echo(f"trained {bank.n_experts} experts into {out_dir}")


@cli.command("learn-alpha")
@click.option("--method", type=click.Choice(METHOD_CHOICES), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--experts", "experts_dir", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--mu", type=float, default=None)
@click.option("--m", "m_dirs", type=int, default=None)
@click.option("--dimension-scaling", is_flag=True, default=False)
@click.option("--steps", type=int, default=None)
def learn_alpha_cmd(method, config_path, experts_dir, data_path, out_dir, seed, mu, m_dirs, dimension_scaling, steps):
    """Determine mixture coefficients with one of the four methods."""
    config = _load_config(config_path)
    spsa = config.spsa
    if mu is not None:
        spsa = replace(spsa, mu=mu)
    if m_dirs is not None:
        spsa = replace(spsa, m=m_dirs)
    if dimension_scaling:
        spsa = replace(spsa, dimension_scaling=True)
    optim = config.alpha_optim
    if steps is not None:
        optim = replace(optim, steps=steps)
    config = replace(config, spsa=spsa, alpha_optim=optim)

    bank = _load_bank(experts_dir)
    bundle = _load_bundle(data_path)
    alpha, theta, report, flags = determine_alpha(method, bank, bundle, config, seed)
    metrics = evaluate(config.arch, theta, bundle.test_set, config.loss_kind)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "theta_star.ckpt", bank.arch, theta,
                    {"method": method, "seed": seed, "alpha": [float(a) for a in alpha]})
    write_csv(out / "curves.csv", report.rows)
    write_json(out / "report.json", report.as_dict())
    payload = {
        "method": method,
        "seed": seed,
        "alpha": [float(a) for a in alpha],
        "zero_shot": metrics,
        "flags": flags,
        "steps_run": report.steps_run,
        "counters": report.counters.as_dict(),
    }
    write_json(out / "alpha.json", payload)
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@cli.command("finetune")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
@click.option("--epochs", type=int, default=None)
def finetune_cmd(config_path, params_path, data_path, out_dir, seed, epochs):
    """Fine-tune all parameters from a blended prior, coefficients fixed."""
    config = _load_config(config_path)
    epochs = epochs if epochs is not None else config.finetune_epochs
    arch, theta, metadata = load_checkpoint(params_path)
    bundle = _load_bundle(data_path)
    params, report = finetune(
        arch, theta, bundle.finetune_set, epochs, config.finetune_optim, seed,
        eval_set=bundle.test_set, loss_kind=config.loss_kind,
        config_id=str(metadata.get("method", "finetune")),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "finetuned.ckpt", arch, params, metadata)
    write_csv(out / "curves.csv", report.rows)
    write_json(out / "report.json", report.as_dict())
    final = evaluate(arch, params, bundle.test_set, config.loss_kind)
    click.echo(json.dumps({"epochs": epochs, "final": final}, indent=2, sort_keys=True))


@cli.command("evaluate")
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--split", "split_name", default="test_set",
              type=click.Choice(("source_pool", "alpha_set", "val_set", "proxy_set", "finetune_set", "test_set")))
def evaluate_cmd(params_path, data_path, split_name):
    """Accuracy and loss of a checkpoint on one dataset split."""
    arch, params, _ = load_checkpoint(params_path)
    bundle = _load_bundle(data_path)
    metrics = evaluate(arch, params, bundle.splits()[split_name])
    click.echo(json.dumps({"split": split_name, **metrics}, indent=2, sort_keys=True))


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")
def run_cmd(config_path, out_dir, seed):
    """Full pipeline: synth, split, train experts, all methods, fine-tune."""
    config = _load_config(config_path)
    if seed is not None:
        config = replace(config, seeds=(seed,))
    result = run_experiment(config, out_dir)
    click.echo(json.dumps(result.summary, indent=2, sort_keys=True))


@cli.group()
def analyze():
    """Estimator and cost-model checks; each emits a JSON verdict."""


def _jsonable(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(payload: dict, out_path: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable)
    if out_path:
        Path(out_path).write_text(text + "\n")
    click.echo(text)
    if not all(payload["checks"].values()):
        raise ConfigError("analysis check failed: "
                          + ", ".join(k for k, v in payload["checks"].items() if not v))


@analyze.command("variance")
@click.option("--seed", type=int, default=0)
@click.option("--mu", type=float, default=1e-3)
@click.option("--m", "m_dirs", type=int, default=1)
@click.option("--samples", type=int, default=20000)
@click.option("--out", "out_path", type=click.Path(), default=None)
def analyze_variance(seed, mu, m_dirs, samples, out_path):
    """Moment identities on a linear objective plus the MLP variance bound."""
    g = np.array([6.0, -6.0, 5.0, -5.0])
    spsa = SpsaConfig(mu=mu, m=m_dirs, seed=seed)
    moments = analysis.linear_estimator_moments(g, spsa, samples, seed=seed)
    mean_err = float(np.max(np.abs(moments.empirical_mean - moments.mean_reference)
                            / np.abs(moments.mean_reference)))
    mse_err = abs(moments.empirical_mse - moments.mse_reference) / moments.mse_reference

    bank, beta, batch = analysis.random_mlp_instance(seed=seed)
    mc = analysis.mc_variance(bank, beta, batch, spsa, max(samples // 10, 1000), seed=seed)
    payload = {
        "inputs": {"g": g.tolist(), "mu": mu, "m": m_dirs, "n_samples": samples, "seed": seed},
        "outputs": {
            "empirical_mean": moments.empirical_mean.tolist(),
            "mean_reference": moments.mean_reference.tolist(),
            "empirical_mse": moments.empirical_mse,
            "mse_reference": moments.mse_reference,
            "paper_mse_reference": moments.paper_mse_reference,
            "mlp_empirical_mse": mc.empirical_mse,
            "mlp_bound": mc.bound,
            "sigma_max": mc.sigma_max,
        },
        "checks": {
            "mean_within_2pct": mean_err <= 0.02,
            "mse_within_3pct": mse_err <= 0.03,
            "mlp_within_bound": mc.empirical_mse <= 1.1 * mc.bound,
        },
    }
    _emit(payload, out_path)


@analyze.command("cost")
@click.option("--seed", type=int, default=0)
@click.option("--steps", type=int, default=150)
@click.option("--batch-size", type=int, default=512,
              help="Timing batch; large enough that per-op costs dominate interpreter overhead.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def analyze_cost(seed, steps, batch_size, out_path):
    """Fit the per-op cost model from timed runs and check the gap sign."""
    rng = np.random.default_rng(seed)
    bank, _, _ = analysis.random_mlp_instance(k=4, layer_sizes=(20, 64, 64, 5), seed=seed)
    x = rng.standard_normal((8 * batch_size, 20))
    y = rng.integers(0, 5, size=8 * batch_size)
    data = Batch(x, y)
    optim = OptimConfig(steps=steps, batch_size=batch_size)
    warmup = OptimConfig(steps=20, batch_size=batch_size)
    learn_alpha_glue(bank, data, SpsaConfig(seed=seed), warmup, seed)
    learn_alpha_fullgrad(bank, data, warmup, seed)

    rows = []

    def timed(label, fn, repeats=2):
        best, best_counters = np.inf, None
        for _ in range(repeats):
            counters = OpCounters()
            t0 = time.perf_counter()
            fn(counters)
            wall = (time.perf_counter() - t0) * 1000.0
            if wall < best:
                best, best_counters = wall, counters
        rows.append({"label": label, "wall_ms": best, **best_counters.as_dict()})
        return best

    glue_ms = timed("glue", lambda c: learn_alpha_glue(
        bank, data, SpsaConfig(seed=seed), optim, seed, counters=c))
    full_ms = timed("full-grad", lambda c: learn_alpha_fullgrad(bank, data, optim, seed, counters=c))
    batch = Batch(x[:batch_size], y[:batch_size])
    timed("forward-sweep", lambda c: [forward(bank.arch, bank.expert(0), batch, counters=c)
                                      for _ in range(steps)])
    timed("grad-sweep", lambda c: [grad_params(bank.arch, bank.expert(0), batch, counters=c)
                                   for _ in range(steps)])
    timed("blend-sweep", lambda c: [blend(bank, np.full(4, 0.25), counters=c)
                                    for _ in range(4 * steps)])
    cm = analysis.fit_cost_model(rows)
    costs = analysis.cost_model(cm)
    payload = {
        "inputs": {"steps": steps, "batch_size": batch_size, "seed": seed, "measurements": rows},
        "outputs": {
            "forward_cost_ms": cm.forward_cost,
            "gamma": cm.gamma,
            "mix_cost_ms": cm.mix_cost,
            "inner_cost_ms": cm.inner_cost,
            **costs,
            "glue_ms_per_step": glue_ms / steps,
            "full_grad_ms_per_step": full_ms / steps,
        },
        "checks": {
            "glue_faster_measured": glue_ms < full_ms,
            "fitted_gap_positive": costs["gap"] > 0,
            "gap_sign_matches_measurement": (costs["gap"] > 0) == (glue_ms < full_ms),
        },
    }
    _emit(payload, out_path)


@analyze.command("bias")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default=None)
def analyze_bias(seed, out_path):
    """Quadratic exactness and the O(mu^2) bias slope on a quartic."""
    mus = (1e-1, 1e-2, 1e-3)
    quartic = analysis.bias_slope(mus, objective="quartic", seed=seed)
    quadratic = analysis.bias_slope(mus, objective="quadratic", seed=seed)
    payload = {
        "inputs": {"mus": list(mus), "seed": seed},
        "outputs": {"quartic": quartic.as_dict(), "quadratic": quadratic.as_dict()},
        "checks": {
            "quadratic_exact": quadratic.exact,
            "quartic_slope_in_range": quartic.slope is not None and 1.8 <= quartic.slope <= 2.2,
        },
    }
    _emit(payload, out_path)


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        return 1
    except GluemixError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
