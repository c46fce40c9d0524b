"""Run reports: per-step/per-epoch curves, counters, and CSV/JSON output.

Every curve row carries the forward/backward/blend counters of its run at
the moment it was recorded, so cost accounting can be read straight off
the CSV. Columns follow one fixed schema:

    config_id,seed,phase,epoch,step,train_loss,test_accuracy,forwards,backwards,blends,wall_ms
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

from .counters import OpCounters

CSV_FIELDS = [
    "config_id",
    "seed",
    "phase",
    "epoch",
    "step",
    "train_loss",
    "test_accuracy",
    "forwards",
    "backwards",
    "blends",
    "wall_ms",
]


@dataclass
class CurveRow:
    config_id: str
    seed: int
    phase: str
    epoch: int | None = None
    step: int | None = None
    train_loss: float | None = None
    test_accuracy: float | None = None
    forwards: int = 0
    backwards: int = 0
    blends: int = 0
    wall_ms: float = 0.0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class RunReport:
    """Curves and counters for one phase of one run.

    ``counters`` tallies the optimization path itself; validation and
    test sweeps go through ``eval_counters`` so contracts like
    "2m forwards per step" stay exact.
    """

    config_id: str = ""
    seed: int = 0
    phase: str = ""
    config_echo: dict = field(default_factory=dict)
    rows: list[CurveRow] = field(default_factory=list)
    counters: OpCounters = field(default_factory=OpCounters)
    eval_counters: OpCounters = field(default_factory=OpCounters)
    wall_ms: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    steps_run: int = 0

    def __post_init__(self):
        self._t0 = time.perf_counter()

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0

    def add_step(self, step: int, train_loss: float) -> None:
        self.rows.append(
            CurveRow(
                config_id=self.config_id,
                seed=self.seed,
                phase=self.phase,
                step=step,
                train_loss=float(train_loss),
                forwards=self.counters.forwards,
                backwards=self.counters.backwards,
                blends=self.counters.blends,
                wall_ms=self.elapsed_ms(),
            )
        )
        self.steps_run = step

    def add_epoch(self, epoch: int, test_accuracy: float | None, train_loss: float | None = None) -> None:
        self.rows.append(
            CurveRow(
                config_id=self.config_id,
                seed=self.seed,
                phase=self.phase,
                epoch=epoch,
                train_loss=None if train_loss is None else float(train_loss),
                test_accuracy=None if test_accuracy is None else float(test_accuracy),
                forwards=self.counters.forwards,
                backwards=self.counters.backwards,
                blends=self.counters.blends,
                wall_ms=self.elapsed_ms(),
            )
        )

    def close(self, phase_name: str | None = None) -> None:
        self.wall_ms[phase_name or self.phase or "run"] = self.elapsed_ms()

    @property
    def step_losses(self) -> list[float]:
        return [r.train_loss for r in self.rows if r.step is not None and r.train_loss is not None]

    @property
    def epoch_accuracies(self) -> list[float]:
        return [r.test_accuracy for r in self.rows if r.epoch is not None and r.test_accuracy is not None]

    def as_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "seed": self.seed,
            "phase": self.phase,
            "config_echo": self.config_echo,
            "steps_run": self.steps_run,
            "counters": self.counters.as_dict(),
            "eval_counters": self.eval_counters.as_dict(),
            "wall_ms": self.wall_ms,
            "flags": self.flags,
            "rows": [r.as_dict() for r in self.rows],
        }


def write_csv(path, rows) -> None:
    """Write curve rows with the fixed column schema; blanks for missing."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            d = row.as_dict() if isinstance(row, CurveRow) else dict(row)
            writer.writerow({k: ("" if d.get(k) is None else d.get(k)) for k in CSV_FIELDS})


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
