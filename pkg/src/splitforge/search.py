"""Greedy block-by-block split search.

Blocks are visited front to back.  For each block, the factor-1 (unsplit)
candidate sets the block baseline; the ladder is then climbed and a factor is
kept while the accuracy drop versus that baseline stays strictly below the
threshold (in percentage points).  Under the default policy the first
violation ends the ladder for that block and the block reverts to the last
accepted factor; ``max_within_threshold`` instead tries the full ladder and
keeps the largest factor that stayed within the threshold.  Factors that
don't divide a block's channel widths are skipped without spending an
evaluation.

Evaluators are callables ``evaluator(arch) -> accuracy`` returning a
fraction in [0, 1]:

* :class:`TableMockEvaluator` — replays a recorded accuracy table (for
  testing the search logic without training).
* :class:`InternalEvaluator` — trains with the bundled engine, warm-starting
  each candidate from the previous configuration's weights.
* :class:`ExternalEvaluator` — shells out to a user command that prints an
  accuracy on its last stdout line.
"""

from __future__ import annotations

import csv
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import engine, transform
from .arch import Architecture, serialize_architecture
from .engine import TrainConfig, WeightStore
from .errors import (EvaluatorTimeout, MissingCell, NonDivisibleError,
                     NonZeroExit, UnparseableOutput, ValidationError)
from .transform import SplitPlan

LADDER = (2, 4, 6, 8)
POLICIES = ("first_violation_revert", "max_within_threshold")
BASELINE_MODES = ("per_block", "global")

Evaluator = Callable[[Architecture], float]


@dataclass(frozen=True)
class SearchConfig:
    threshold: float = 0.5  # percentage points, strict
    ladder: tuple[int, ...] = LADDER
    policy: str = "first_violation_revert"
    baseline_mode: str = "per_block"

    def __post_init__(self):
        if not self.ladder or any(int(f) < 2 for f in self.ladder):
            raise ValidationError(f"ladder must be factors >= 2, got {self.ladder}")
        if self.policy not in POLICIES:
            raise ValidationError(
                f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValidationError(
                f"baseline_mode must be one of {BASELINE_MODES}, "
                f"got {self.baseline_mode!r}")
        if self.threshold <= 0:
            raise ValidationError(f"threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class TraceRecord:
    block: int  # 1-based
    factor: int
    accuracy: float | None  # fraction; None when skipped
    baseline: float
    delta_pp: float | None
    decision: str  # continue | reject | skip_nondivisible


@dataclass
class SearchResult:
    plan: SplitPlan
    factors: tuple[int, ...]
    accuracy: float
    baseline_accuracy: float
    records: list[TraceRecord]
    evaluations: int


def greedy_split_search(arch: Architecture, evaluator: Evaluator,
                        config: SearchConfig | None = None,
                        progress: Callable[[TraceRecord], None] | None = None
                        ) -> SearchResult:
    config = config or SearchConfig()
    records: list[TraceRecord] = []
    factors: list[int] = []
    evaluations = 0

    def note(rec: TraceRecord) -> None:
        records.append(rec)
        if progress is not None:
            progress(rec)

    global_baseline: float | None = None
    if config.baseline_mode == "global":
        global_baseline = evaluator(arch)
        evaluations += 1

    final_acc: float | None = None
    first_baseline: float | None = None
    for bi in range(len(arch.blocks)):
        block_no = bi + 1
        if config.baseline_mode == "per_block":
            base_arch = transform.split_transform(
                arch, SplitPlan("proposed", tuple(factors) + (1,)),
                allow_partial=True)
            baseline = evaluator(base_arch)
            evaluations += 1
            note(TraceRecord(block=block_no, factor=1, accuracy=baseline,
                             baseline=baseline, delta_pp=0.0,
                             decision="continue"))
            chosen, chosen_acc = 1, baseline
        else:
            baseline = global_baseline
            chosen, chosen_acc = 1, None
        if first_baseline is None:
            first_baseline = baseline

        for factor in config.ladder:
            try:
                cand = transform.split_transform(
                    arch, SplitPlan("proposed", tuple(factors) + (factor,)),
                    allow_partial=True)
            except NonDivisibleError:
                note(TraceRecord(block=block_no, factor=factor, accuracy=None,
                                 baseline=baseline, delta_pp=None,
                                 decision="skip_nondivisible"))
                continue
            acc = evaluator(cand)
            evaluations += 1
            delta = (baseline - acc) * 100.0
            if delta < config.threshold:
                note(TraceRecord(block=block_no, factor=factor, accuracy=acc,
                                 baseline=baseline, delta_pp=delta,
                                 decision="continue"))
                chosen, chosen_acc = factor, acc
            else:
                note(TraceRecord(block=block_no, factor=factor, accuracy=acc,
                                 baseline=baseline, delta_pp=delta,
                                 decision="reject"))
                if config.policy == "first_violation_revert":
                    break
        factors.append(chosen)
        final_acc = chosen_acc

    if final_acc is None:  # global mode where the last block kept factor 1
        final = transform.split_transform(
            arch, SplitPlan("proposed", tuple(factors)))
        final_acc = evaluator(final)
        evaluations += 1

    return SearchResult(
        plan=SplitPlan("proposed", tuple(factors)),
        factors=tuple(factors),
        accuracy=final_acc,
        baseline_accuracy=first_baseline,
        records=records,
        evaluations=evaluations,
    )


def trace_table(result: SearchResult) -> dict[int, dict[int, float | None]]:
    """records -> {block: {factor: accuracy percent}} (skips stay None)."""
    table: dict[int, dict[int, float | None]] = {}
    for rec in result.records:
        row = table.setdefault(rec.block, {})
        row[rec.factor] = None if rec.accuracy is None else rec.accuracy * 100.0
    return table


# ---------------------------------------------------------------------------
# Evaluators


def _config_key(arch: Architecture) -> tuple[int, ...]:
    if arch.lineage is None:
        return ()
    return tuple(arch.lineage.factors)


class TableMockEvaluator:
    """Replays accuracies recorded per (block, trailing factor).

    A candidate whose deepest split block is block ``b`` (1-based) at factor
    ``f`` looks up ``table[b][f]``; the unsplit architecture reads
    ``table[1][1]``.  Tables given in percent (any value > 1) are normalized
    to fractions; ``raw`` exposes the values as provided."""

    def __init__(self, table: dict[int, dict[int, float]]):
        self._raw = {int(b): {int(f): float(a) for f, a in row.items()}
                     for b, row in table.items()}
        scale = 100.0 if any(a > 1.0 for row in self._raw.values()
                             for a in row.values()) else 1.0
        self._table = {b: {f: a / scale for f, a in row.items()}
                       for b, row in self._raw.items()}
        self.queries: list[tuple[int, int]] = []

    @classmethod
    def from_csv(cls, path: str) -> "TableMockEvaluator":
        """CSV layout: header ``block,<f1>,<f2>,...``; one row per block."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip().lower() != "block":
            raise ValidationError(f"{path}: expected a 'block,<factors>' header")
        factors = [int(c) for c in rows[0][1:]]
        table: dict[int, dict[int, float]] = {}
        for row in rows[1:]:
            if not row or not row[0].strip():
                continue
            cells = {f: float(c) for f, c in zip(factors, row[1:])
                     if c.strip() != ""}
            table[int(row[0])] = cells
        return cls(table)

    def raw(self, block: int, factor: int) -> float:
        return self._raw[block][factor]

    def __call__(self, arch: Architecture) -> float:
        key = _config_key(arch)
        block, factor = (len(key), key[-1]) if key else (1, 1)
        self.queries.append((block, factor))
        row = self._table.get(block)
        if row is None or factor not in row:
            raise MissingCell(block, factor)
        return row[factor]


class InternalEvaluator:
    """Trains each candidate with the bundled engine.

    The first candidate trains from scratch for ``config.epochs``; later
    candidates warm-start from the nearest already-trained configuration
    (same prefix at factor 1, else the accepted prefix) and run
    ``config.fine_tune_epochs``.  Accuracy is top-1 on the held-out set."""

    def __init__(self, train_data, test_data, config: TrainConfig | None = None):
        self.train_data = train_data
        self.test_data = test_data
        self.config = config or TrainConfig()
        self.cache: dict[tuple[int, ...], WeightStore] = {}

    def __call__(self, arch: Architecture) -> float:
        key = _config_key(arch)
        warm = None
        for cand in (key[:-1] + (1,), key[:-1]) if key else ():
            if cand != key and cand in self.cache:
                warm = self.cache[cand]
                break
        epochs = self.config.fine_tune_epochs if warm is not None else None
        weights, _ = engine.train(arch, self.train_data, self.config,
                                  warm_start=warm, epochs=epochs)
        self.cache[key] = weights
        return engine.evaluate(arch, weights, *self.test_data)


class ExternalEvaluator:
    """Runs ``command <arch-file> <budget>`` and reads the accuracy from the
    last non-empty stdout line.  The architecture is written to a temp file
    in the canonical JSON form."""

    def __init__(self, command: str | list[str], budget: int = 10,
                 timeout: float | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.budget = budget
        self.timeout = timeout

    def __call__(self, arch: Architecture) -> float:
        with tempfile.TemporaryDirectory(prefix="splitforge-eval-") as tmp:
            arch_path = Path(tmp) / "candidate.json"
            arch_path.write_text(serialize_architecture(arch))
            argv = self.command + [str(arch_path), str(self.budget)]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True,
                                      timeout=self.timeout)
            except subprocess.TimeoutExpired as exc:
                raise EvaluatorTimeout(
                    f"{argv[0]} exceeded {self.timeout}s") from exc
        if proc.returncode != 0:
            raise NonZeroExit(proc.returncode, proc.stderr[-500:])
        lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise UnparseableOutput(f"{argv[0]} printed no output")
        try:
            value = float(lines[-1])
        except ValueError as exc:
            raise UnparseableOutput(
                f"{argv[0]}: last line {lines[-1]!r} is not a number") from exc
        if not 0.0 <= value <= 1.0:
            raise UnparseableOutput(
                f"{argv[0]}: accuracy {value} outside [0, 1]")
        return value
