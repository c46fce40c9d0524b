import json

import numpy as np
import pytest

from gluemix import (
    ArchSpec,
    Batch,
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    OptimConfig,
    SplitSpec,
    SpsaConfig,
    evaluate,
    finetune,
    init_params,
    run_experiment,
)
from gluemix.experiment import determine_alpha, run_single_seed, summarize

from _oracles import tally_accuracy
from conftest import identical_bank, make_batch, random_bank


def tiny_config(**kw):
    base = dict(
        seeds=(0,),
        arch=ArchSpec([6, 12, 3]),
        dataset=DatasetSpec(
            d_in=6, n_classes=3, n_source_pool=600, n_alpha=160, n_val=60,
            n_proxy=60, n_finetune=80, n_test=120, class_scale=3.0,
            modes_per_class=1, rotation_angle=0.2, seed=1,
        ),
        split=SplitSpec(n_experts=3, per_expert_budget=150, seed=0),
        expert_epochs=5,
        alpha_optim=OptimConfig(steps=40, batch_size=32),
        finetune_epochs=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestEvaluate:
    def test_perfect_predictor(self):
        # identity net on one-hot inputs puts the true class logit highest
        arch = ArchSpec([4, 4])
        params = np.zeros(arch.param_count)
        params[:16] = np.eye(4).ravel()
        labels = np.array([0, 1, 2, 3, 1])
        batch = Batch(np.eye(4)[labels], labels)
        assert evaluate(arch, params, batch)["accuracy"] == 1.0

    def test_constant_predictor_on_balanced_set(self):
        arch = ArchSpec([2, 4])
        params = np.zeros(arch.param_count)
        params[2 * 4 + 1] = 3.0  # bias pushes class 1
        y = np.repeat(np.arange(4), 5)
        batch = Batch(np.zeros((20, 2)), y)
        assert evaluate(arch, params, batch)["accuracy"] == pytest.approx(0.25, abs=1e-15)

    def test_matches_manual_tally(self, small_arch, rng):
        params = init_params(small_arch, rng)
        batch = make_batch(small_arch, 16, rng)
        from gluemix import forward

        logits = forward(small_arch, params, batch)
        ours = evaluate(small_arch, params, batch)["accuracy"]
        assert ours == pytest.approx(tally_accuracy(logits, batch.labels), abs=1e-15)

    def test_argmax_ties_go_to_lowest_index(self):
        arch = ArchSpec([1, 3])
        params = np.zeros(arch.param_count)  # all logits zero: ties everywhere
        batch = Batch(np.ones((6, 1)), np.array([0, 0, 1, 2, 0, 1]))
        assert evaluate(arch, params, batch)["accuracy"] == pytest.approx(3 / 6)

    def test_empty_set_rejected(self, small_arch, rng):
        params = init_params(small_arch, rng)
        with pytest.raises(Exception):
            evaluate(small_arch, params, Batch(np.zeros((0, 4)), np.zeros(0, dtype=int)))


class TestFinetune:
    def test_zero_epochs_returns_prior_with_metrics(self, small_arch, rng):
        theta = init_params(small_arch, rng)
        data = make_batch(small_arch, 40, rng)
        test = make_batch(small_arch, 30, rng)
        params, report = finetune(small_arch, theta, data, 0, seed=1, eval_set=test)
        assert np.array_equal(params, theta)
        assert len(report.epoch_accuracies) == 1  # the zero-shot row
        assert report.rows[0].epoch == 0

    def test_loss_improves(self, small_arch, rng):
        theta = init_params(small_arch, rng)
        data = make_batch(small_arch, 120, rng)
        params, report = finetune(
            small_arch, theta, data, 4, OptimConfig(eta=1e-3, beta1=0.9, beta2=0.999, batch_size=32), seed=2,
        )
        losses = [r.train_loss for r in report.rows if r.train_loss is not None]
        assert losses[-1] <= losses[0]

    def test_deterministic(self, small_arch, rng):
        theta = init_params(small_arch, rng)
        data = make_batch(small_arch, 60, rng)
        a, _ = finetune(small_arch, theta, data, 3, seed=5)
        b, _ = finetune(small_arch, theta, data, 3, seed=5)
        assert np.array_equal(a, b)

    def test_epoch_rows_record_accuracy(self, small_arch, rng):
        theta = init_params(small_arch, rng)
        data = make_batch(small_arch, 60, rng)
        test = make_batch(small_arch, 20, rng)
        _, report = finetune(small_arch, theta, data, 3, seed=5, eval_set=test)
        epochs = [r.epoch for r in report.rows]
        assert epochs == [0, 1, 2, 3]
        assert all(a is not None for a in report.epoch_accuracies)


class TestExperimentConfig:
    def test_dict_roundtrip(self):
        cfg = tiny_config()
        again = ExperimentConfig.from_dict(cfg.as_dict())
        assert again.as_dict() == cfg.as_dict()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"sseds": [1]})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"alpha_learning": {"learning_rate": 0.1}})

    def test_arch_dataset_dim_mismatch(self):
        with pytest.raises(ConfigError):
            tiny_config(arch=ArchSpec([5, 4, 3]))

    def test_from_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny_config().as_dict()))
        cfg = ExperimentConfig.from_json(path)
        assert cfg.split.n_experts == 3

    def test_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(path)

    def test_spsa_keys_parsed(self):
        cfg = ExperimentConfig.from_dict(
            {"alpha_learning": {"mu": 0.5, "m": 3, "dimension_scaling": True, "steps": 7}}
        )
        assert cfg.spsa.mu == 0.5 and cfg.spsa.m == 3 and cfg.spsa.dimension_scaling
        assert cfg.alpha_optim.steps == 7


class TestDetermineAlpha:
    def test_identical_experts_equalize_all_methods(self, rng):
        from gluemix.datasets import synth_dataset

        cfg = tiny_config()
        bundle = synth_dataset(cfg.dataset)
        bank = identical_bank(cfg.arch, 3, seed=50, train_sizes=[150] * 3)
        metrics = {}
        for method in ("data-size", "proxy", "full-grad", "glue"):
            alpha, theta, report, flags = determine_alpha(method, bank, bundle, cfg, seed=0)
            metrics[method] = evaluate(cfg.arch, theta, bundle.test_set)
        accs = {m: v["accuracy"] for m, v in metrics.items()}
        assert len(set(accs.values())) == 1

    def test_heuristics_ignore_alpha_set(self, rng):
        from dataclasses import replace

        from gluemix.datasets import synth_dataset

        cfg = tiny_config()
        bundle_a = synth_dataset(cfg.dataset)
        bundle_b = synth_dataset(replace(cfg.dataset, n_alpha=40, seed=cfg.dataset.seed))
        bank = random_bank(cfg.arch, 3, seed=51, train_sizes=[100, 200, 300])
        for method in ("data-size", "proxy"):
            a1, _, _, _ = determine_alpha(method, bank, bundle_a, cfg, seed=0)
            a2, _, _, _ = determine_alpha(method, bank, bundle_b, cfg, seed=0)
            assert np.array_equal(a1, a2)

    def test_unknown_method(self):
        from gluemix.datasets import synth_dataset

        cfg = tiny_config()
        bundle = synth_dataset(cfg.dataset)
        bank = random_bank(cfg.arch, 3, seed=52)
        with pytest.raises(ConfigError):
            determine_alpha("fisher", bank, bundle, cfg, seed=0)


class TestRunExperiment:
    def test_single_seed_shapes(self):
        cfg = tiny_config()
        runs, rows, stats = run_single_seed(cfg, 0)
        assert set(runs) == {"data-size", "proxy", "full-grad", "glue"}
        assert len(stats["target_accuracy"]) == 3
        glue = runs["glue"]
        assert glue.learn_report.counters.backwards == 0
        assert glue.learn_report.counters.forwards == 2 * glue.learn_report.steps_run
        full = runs["full-grad"]
        t = full.learn_report.steps_run
        assert (full.learn_report.counters.forwards, full.learn_report.counters.backwards) == (t, t)

    def test_outputs_written(self, tmp_path):
        cfg = tiny_config(seeds=(0, 1))
        result = run_experiment(cfg, tmp_path / "run")
        out = tmp_path / "run"
        assert (out / "curves.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "config.json").exists()
        assert (out / "report_seed0.json").exists()
        assert not (out / "INCOMPLETE").exists()
        ckpts = list((out / "checkpoints").glob("*.ckpt"))
        # 3 experts + 4 priors per seed
        assert len(ckpts) == 2 * (3 + 4)
        summary = json.loads((out / "summary.json").read_text())
        for method in ("data-size", "proxy", "full-grad", "glue"):
            entry = summary["summary"][method]
            assert set(entry["per_seed_final_accuracy"]) == {"0", "1"}
            assert 0.0 <= entry["mean_final_accuracy"] <= 1.0

    def test_summary_means(self):
        cfg = tiny_config(seeds=(0, 1))
        result = run_experiment(cfg)
        for method, entry in result.summary.items():
            per_seed = list(entry["per_seed_final_accuracy"].values())
            assert entry["mean_final_accuracy"] == pytest.approx(np.mean(per_seed))

    def test_failure_marks_incomplete(self, tmp_path):
        cfg = tiny_config(dataset=DatasetSpec(kind="file", path=str(tmp_path / "missing.npz")),
                          arch=ArchSpec([6, 12, 3]))
        out = tmp_path / "run"
        with pytest.raises(Exception) as err:
            run_experiment(cfg, out)
        assert "phase synth" in str(err.value)
        assert (out / "INCOMPLETE").exists()

    def test_deterministic_across_calls(self):
        cfg = tiny_config()
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a.summary == b.summary
