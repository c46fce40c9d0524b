"""Synthetic datasets, domain shift, and non-IID expert splits.

A dataset bundle holds one source-domain pool (used to carve expert
pretraining splits) and five target-domain splits: coefficient learning,
validation, proxy, fine-tuning, and a class-balanced test set. The target
domain reuses the source generator but applies a fixed input rotation and
mean shift, so experts face a related-but-shifted distribution.

Expert splits follow the federated non-IID recipe: per-expert class
proportions drawn from a Dirichlet with small concentration produce
skewed shards; each shard has exactly the requested budget.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .nets import Batch

DATASET_KINDS = ("gaussian_mixture", "two_spirals", "file")


@dataclass
class DatasetSpec:
    kind: str = "gaussian_mixture"
    d_in: int = 20
    n_classes: int = 5
    n_source_pool: int = 6000
    n_alpha: int = 2000
    n_val: int = 500
    n_proxy: int = 500
    n_finetune: int = 400
    n_test: int = 2000
    mean_shift_scale: float = 1.0
    rotation_angle: float = 0.3
    class_scale: float = 3.5
    noise_std: float = 1.0
    modes_per_class: int = 2
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "file":
            if not self.path:
                raise ConfigError("dataset kind 'file' needs a path")
            return
        if self.kind == "two_spirals" and (self.d_in != 2 or self.n_classes != 2):
            raise ConfigError("two_spirals is a 2-D binary task (d_in=2, n_classes=2)")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.d_in < 1:
            raise ConfigError("d_in must be positive")
        for name in ("n_source_pool", "n_alpha", "n_val", "n_proxy", "n_finetune", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not (np.isfinite(self.mean_shift_scale) and np.isfinite(self.rotation_angle)):
            raise ConfigError("domain-shift parameters must be finite")
        if self.noise_std <= 0 or self.class_scale <= 0:
            raise ConfigError("class_scale and noise_std must be positive")
        if self.modes_per_class < 1:
            raise ConfigError("modes_per_class must be positive")

    def as_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "d_in": self.d_in,
            "n_classes": self.n_classes,
            "n_source_pool": self.n_source_pool,
            "n_alpha": self.n_alpha,
            "n_val": self.n_val,
            "n_proxy": self.n_proxy,
            "n_finetune": self.n_finetune,
            "n_test": self.n_test,
            "mean_shift_scale": self.mean_shift_scale,
            "rotation_angle": self.rotation_angle,
            "class_scale": self.class_scale,
            "noise_std": self.noise_std,
            "modes_per_class": self.modes_per_class,
            "seed": self.seed,
        }
        if self.path is not None:
            d["path"] = self.path
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)


SPLIT_NAMES = ("source_pool", "alpha_set", "val_set", "proxy_set", "finetune_set", "test_set")


@dataclass
class DatasetBundle:
    spec: DatasetSpec
    source_pool: Batch
    alpha_set: Batch
    val_set: Batch
    proxy_set: Batch
    finetune_set: Batch
    test_set: Batch

    def splits(self) -> dict[str, Batch]:
        return {name: getattr(self, name) for name in SPLIT_NAMES}

    def save(self, path) -> None:
        arrays = {}
        for name, batch in self.splits().items():
            arrays[f"{name}_x"] = batch.inputs
            arrays[f"{name}_y"] = batch.labels
        arrays["spec_json"] = np.frombuffer(
            json.dumps(self.spec.as_dict()).encode("utf-8"), dtype=np.uint8
        )
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "DatasetBundle":
        try:
            with np.load(path) as z:
                spec = DatasetSpec.from_dict(json.loads(bytes(z["spec_json"]).decode("utf-8")))
                splits = {
                    name: Batch(z[f"{name}_x"], z[f"{name}_y"]) for name in SPLIT_NAMES
                }
        except (OSError, KeyError, ValueError, io.UnsupportedOperation) as exc:
            raise DataError(f"cannot load dataset bundle from {path}: {exc}") from exc
        return cls(spec=spec, **splits)


def _rotation_matrix(d: int, angle: float) -> np.ndarray:
    """Block rotation by `angle` in each disjoint coordinate pair."""
    r = np.eye(d)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, d - 1, 2):
        r[i, i] = c
        r[i, i + 1] = -s
        r[i + 1, i] = s
        r[i + 1, i + 1] = c
    return r


def _balanced_counts(n: int, c: int) -> np.ndarray:
    counts = np.full(c, n // c, dtype=np.int64)
    counts[: n % c] += 1
    return counts


class _Generator:
    """Samples labeled points; the target domain rotates and shifts inputs."""

    def __init__(self, spec: DatasetSpec, model_rng: np.random.Generator):
        self.spec = spec
        if spec.kind == "gaussian_mixture":
            # scale so expected inter-mean distance tracks class_scale,
            # independent of the input dimension
            self.means = (
                spec.class_scale / np.sqrt(spec.d_in)
                * model_rng.standard_normal((spec.n_classes, spec.modes_per_class, spec.d_in))
            )
        shift_dir = model_rng.standard_normal(spec.d_in)
        self.shift = (
            spec.mean_shift_scale * shift_dir / np.linalg.norm(shift_dir)
        )
        self.rotation = _rotation_matrix(spec.d_in, spec.rotation_angle)

    def _draw(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        spec = self.spec
        if spec.kind == "gaussian_mixture":
            modes = rng.integers(0, spec.modes_per_class, size=labels.shape[0])
            return self.means[labels, modes] + spec.noise_std * rng.standard_normal(
                (labels.shape[0], spec.d_in)
            )
        # two interleaved spirals
        t = rng.uniform(0.25 * np.pi, 3.0 * np.pi, size=labels.shape[0])
        phase = t + np.pi * labels
        x = np.stack([t * np.cos(phase), t * np.sin(phase)], axis=1) / np.pi
        return x + 0.15 * spec.noise_std * rng.standard_normal(x.shape)

    def sample(self, n: int, rng: np.random.Generator, target: bool, balanced: bool = False) -> Batch:
        spec = self.spec
        if balanced:
            labels = np.repeat(np.arange(spec.n_classes), _balanced_counts(n, spec.n_classes))
            rng.shuffle(labels)
        else:
            labels = rng.integers(0, spec.n_classes, size=n)
        x = self._draw(labels, rng)
        if target:
            x = x @ self.rotation.T + self.shift
        return Batch(x, labels)


def synth_dataset(spec: DatasetSpec) -> DatasetBundle:
    """Deterministic dataset bundle for the given spec.

    Each split draws from its own RNG substream, so with a zero shift the
    source pool and target splits are two seeds of the same generator.
    """
    if spec.kind == "file":
        return DatasetBundle.load(spec.path)
    children = np.random.SeedSequence(spec.seed).spawn(7)
    model_rng = np.random.default_rng(children[0])
    gen = _Generator(spec, model_rng)
    rngs = [np.random.default_rng(c) for c in children[1:]]
    return DatasetBundle(
        spec=spec,
        source_pool=gen.sample(spec.n_source_pool, rngs[0], target=False),
        alpha_set=gen.sample(spec.n_alpha, rngs[1], target=True),
        val_set=gen.sample(spec.n_val, rngs[2], target=True),
        proxy_set=gen.sample(spec.n_proxy, rngs[3], target=True),
        finetune_set=gen.sample(spec.n_finetune, rngs[4], target=True),
        test_set=gen.sample(spec.n_test, rngs[5], target=True, balanced=True),
    )


@dataclass
class SplitSpec:
    n_experts: int = 10
    dirichlet_concentration: float = 0.5
    per_expert_budget: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_experts < 1:
            raise ConfigError("need at least one expert")
        if self.dirichlet_concentration <= 0:
            raise ConfigError("dirichlet_concentration must be positive")
        if self.per_expert_budget < 1:
            raise ConfigError("per_expert_budget must be positive")

    def as_dict(self) -> dict:
        return {
            "n_experts": self.n_experts,
            "dirichlet_concentration": self.dirichlet_concentration,
            "per_expert_budget": self.per_expert_budget,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ExpertShard:
    """One expert's pretraining split plus how it was drawn."""

    data: Batch
    proportions: np.ndarray
    realized_counts: np.ndarray
    rescaled: bool = False


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`, proportional to `weights`."""
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _cap_counts(proportions: np.ndarray, available: np.ndarray, budget: int) -> np.ndarray:
    """Counts matching `proportions` as closely as per-class caps allow."""
    c = proportions.shape[0]
    counts = np.zeros(c, dtype=np.int64)
    active = np.ones(c, dtype=bool)
    remaining = budget
    for _ in range(c):
        share = _largest_remainder(proportions[active], remaining)
        over = share > available[active] - counts[active]
        if not over.any():
            counts[active] += share
            return counts
        idx = np.flatnonzero(active)
        capped = idx[over]
        counts[capped] = available[capped]
        remaining = budget - counts.sum()
        active[capped] = False
        if remaining == 0 or not active.any():
            break
    if counts.sum() != budget:
        raise DataError(
            f"pool cannot supply {budget} samples with the requested class profile"
        )
    return counts


def dirichlet_split(
    pool: Batch, split: SplitSpec, rng: np.random.Generator | None = None
) -> list[ExpertShard]:
    """Draw K non-IID expert shards of exactly `per_expert_budget` items each.

    Per-expert class proportions come from Dirichlet(concentration * 1).
    Sampling is without replacement within an expert; shards of different
    experts may overlap. If sampled proportions exceed a class's pool
    count, proportions are redrawn (up to 10 times) and finally rescaled
    to the available counts, flagging the shard.
    """
    if rng is None:
        rng = np.random.default_rng(split.seed)
    labels = pool.labels
    if not pool.is_classification:
        raise DataError("dirichlet_split needs integer class labels")
    classes = np.unique(labels)
    n_classes = int(classes.max()) + 1
    if len(classes) != n_classes:
        raise DataError("pool is missing at least one class label")
    if split.per_expert_budget > len(pool):
        raise ConfigError(
            f"per_expert_budget {split.per_expert_budget} exceeds pool size {len(pool)}"
        )
    by_class = [np.flatnonzero(labels == c) for c in range(n_classes)]
    available = np.array([idx.shape[0] for idx in by_class], dtype=np.int64)

    shards = []
    conc = np.full(n_classes, split.dirichlet_concentration)
    for _ in range(split.n_experts):
        rescaled = False
        for attempt in range(11):
            proportions = rng.dirichlet(conc)
            counts = _largest_remainder(proportions, split.per_expert_budget)
            if np.all(counts <= available):
                break
            if attempt == 10:
                counts = _cap_counts(proportions, available, split.per_expert_budget)
                rescaled = True
        chosen = [
            rng.choice(by_class[c], size=int(counts[c]), replace=False)
            for c in range(n_classes)
            if counts[c] > 0
        ]
        idx = np.concatenate(chosen)
        rng.shuffle(idx)
        shards.append(
            ExpertShard(
                data=pool.take(idx),
                proportions=proportions,
                realized_counts=counts,
                rescaled=rescaled,
            )
        )
    return shards
