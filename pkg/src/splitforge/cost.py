"""Parameter, MAC, and peak-memory analysis.

Closed forms cover the two-conv case: a net L0 -> L1 -> L2 with 3x3 kernels
costs ``(L0*L1 + L1*L2) * 9`` conv weights; its (k1, k2) ideal split costs
``((L0*(L1/k1))*k1 + ((L1/k1)*(L2/k2))*k2) * 9`` — note the k2 terms cancel,
so the total depends on k1 only.

``peak_memory`` simulates buffer liveness over a scheduled op order and
reports the maximum number of simultaneously live activation elements
(weights are static and excluded; multiply by bytes-per-element for bytes).
ReLU and flatten run in place; channel slices are views; concat materializes
its output by default (``concat_alias=True`` treats it as bookkeeping).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import program
from .arch import Architecture
from .errors import NonDivisibleError
from .program import SCHEDULES


# ---------------------------------------------------------------------------
# Closed forms


def params_closed_form_original(l0: int, l1: int, l2: int, kernel: int = 3) -> int:
    """Conv weight count of the unsplit two-layer net."""
    if min(l0, l1, l2) < 1:
        raise ValueError("channel counts must be positive")
    return (l0 * l1 + l1 * l2) * kernel * kernel


def params_closed_form_split(l0: int, l1: int, l2: int, k1: int, k2: int,
                             kernel: int = 3) -> int:
    """Conv weight count of the (k1, k2) ideal split of the two-layer net."""
    if min(l0, l1, l2) < 1 or min(k1, k2) < 1:
        raise ValueError("channel counts and factors must be positive")
    if l1 % k1 != 0:
        raise NonDivisibleError(0, "c0", k1, l1)
    if l2 % k2 != 0:
        raise NonDivisibleError(0, "c1", k2, l2)
    first = (l0 * (l1 // k1)) * k1
    second = ((l1 // k1) * (l2 // k2)) * k2
    return (first + second) * kernel * kernel


# ---------------------------------------------------------------------------
# Report types


@dataclass(frozen=True)
class LayerCost:
    uid: str
    kind: str
    params: int
    macs: int
    element_ops: int


@dataclass(frozen=True)
class ParamTotals:
    total: int
    conv: int
    dense: int
    fusion_only: int


@dataclass(frozen=True)
class MemoryStat:
    schedule: str
    peak_elements: int
    peak_op: str


@dataclass
class CostReport:
    arch: str
    per_layer: list[LayerCost] = field(default_factory=list)
    params: ParamTotals | None = None
    macs_total: int | None = None
    element_ops_total: int | None = None
    memory: dict[str, MemoryStat] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Counting


def _op_params(op: program.OpNode) -> int:
    if op.kind == "conv":
        conv = op.conv
        in_c = op.in_shapes[0][0]
        n = conv.out_channels * (in_c // conv.groups) * conv.kernel[0] * conv.kernel[1]
        if conv.bias:
            n += conv.out_channels
        return n
    if op.kind == "dense":
        in_f = op.in_shapes[0][0]
        return op.dense_features * in_f + op.dense_features
    return 0


def _op_macs(op: program.OpNode) -> int:
    if op.kind == "conv":
        conv = op.conv
        in_c = op.in_shapes[0][0]
        _, oh, ow = op.out_shape
        return oh * ow * conv.out_channels * (in_c // conv.groups) \
            * conv.kernel[0] * conv.kernel[1]
    if op.kind == "dense":
        return op.in_shapes[0][0] * op.dense_features
    return 0


def _op_element_ops(op: program.OpNode) -> int:
    if op.kind in ("relu", "add", "concat", "slice"):
        return op.out_elements
    if op.kind == "pool":
        return op.out_elements * op.pool.window[0] * op.pool.window[1]
    return 0


def _per_layer(prog: program.Program) -> list[LayerCost]:
    return [LayerCost(uid=op.uid, kind=op.kind, params=_op_params(op),
                      macs=_op_macs(op), element_ops=_op_element_ops(op))
            for op in prog.ops if op.kind != "input"]


def count_params(arch: Architecture) -> CostReport:
    """Per-layer and total weight counts; fusion 1x1 convs and dense layers
    are also reported as separate subtotals."""
    prog = program.lower(arch)
    rows = _per_layer(prog)
    conv = dense = fusion = 0
    for op in prog.ops:
        p = _op_params(op)
        if op.kind == "conv":
            conv += p
            if op.conv.fusion:
                fusion += p
        elif op.kind == "dense":
            dense += p
    report = CostReport(arch=arch.name, per_layer=rows)
    report.params = ParamTotals(total=conv + dense, conv=conv, dense=dense,
                                fusion_only=fusion)
    return report


def count_macs(arch: Architecture) -> CostReport:
    """Multiply-accumulate counts for conv/dense ops; elementwise work
    (relu, pool, concat, slice, add) is tallied separately."""
    prog = program.lower(arch)
    rows = _per_layer(prog)
    report = CostReport(arch=arch.name, per_layer=rows)
    report.macs_total = sum(r.macs for r in rows)
    report.element_ops_total = sum(r.element_ops for r in rows)
    return report


# ---------------------------------------------------------------------------
# Peak memory


def _liveness(ordered: tuple[program.OpNode, ...], *,
              concat_alias: bool, slice_alias: bool) -> tuple[int, str]:
    buffers_of: dict[str, frozenset[str]] = {}
    size: dict[str, int] = {}
    pos: dict[str, int] = {}
    for t, op in enumerate(ordered):
        pos[op.uid] = t
        if op.kind in ("relu", "flatten"):
            buffers_of[op.uid] = buffers_of[op.inputs[0]]  # in place
        elif op.kind == "slice" and slice_alias:
            buffers_of[op.uid] = buffers_of[op.inputs[0]]  # view
        elif op.kind == "concat" and concat_alias:
            buffers_of[op.uid] = frozenset().union(
                *(buffers_of[i] for i in op.inputs))
        else:
            buffers_of[op.uid] = frozenset((op.uid,))
            size[op.uid] = op.out_elements

    last_use = {b: pos[b] for b in size}
    for t, op in enumerate(ordered):
        for b in buffers_of[op.uid]:
            last_use[b] = max(last_use[b], t)
        for inp in op.inputs:
            for b in buffers_of[inp]:
                last_use[b] = max(last_use[b], t)

    peak, peak_op = 0, ordered[0].uid
    for t, op in enumerate(ordered):
        live = sum(sz for b, sz in size.items()
                   if pos[b] <= t <= last_use[b])
        if live > peak:
            peak, peak_op = live, op.uid
    return peak, peak_op


def peak_memory(arch: Architecture, schedule: str = "branch_sequential", *,
                concat_alias: bool = False,
                slice_alias: bool = True) -> MemoryStat:
    """Peak simultaneously-live activation elements under the given schedule,
    plus the op at which the peak occurs."""
    prog = program.lower(arch)
    ordered = program.schedule(prog, schedule)
    peak, peak_op = _liveness(ordered, concat_alias=concat_alias,
                              slice_alias=slice_alias)
    return MemoryStat(schedule=schedule, peak_elements=peak, peak_op=peak_op)


def analyze(arch: Architecture, schedules: tuple[str, ...] = SCHEDULES, *,
            concat_alias: bool = False) -> CostReport:
    """Full report: per-layer params/MACs plus peak memory per schedule."""
    report = count_params(arch)
    macs = count_macs(arch)
    report.macs_total = macs.macs_total
    report.element_ops_total = macs.element_ops_total
    for name in schedules:
        report.memory[name] = peak_memory(arch, name, concat_alias=concat_alias)
    return report


# ---------------------------------------------------------------------------
# Parameter sweep


@dataclass(frozen=True)
class SweepCell:
    k1: int
    k2: int
    params_split: int | None  # None marks a non-divisible cell
    params_org: int


@dataclass(frozen=True)
class SweepGrid:
    l0: int
    l1: int
    l2: int
    cells: tuple[SweepCell, ...]


def sweep_params(l0: int, l1: int, l2: int, k_grid: tuple[int, ...],
                 kernel: int = 3) -> SweepGrid:
    """Closed-form split weight counts over a (k1, k2) grid.  Cells whose
    factor does not divide the corresponding width are marked, not fatal."""
    if not k_grid:
        raise ValueError("empty factor grid")
    org = params_closed_form_original(l0, l1, l2, kernel)
    cells = []
    for k1 in k_grid:
        for k2 in k_grid:
            valid = (k1 >= 1 and k2 >= 1 and l1 % k1 == 0 and l2 % k2 == 0)
            split = (params_closed_form_split(l0, l1, l2, k1, k2, kernel)
                     if valid else None)
            cells.append(SweepCell(k1=k1, k2=k2, params_split=split,
                                   params_org=org))
    return SweepGrid(l0=l0, l1=l1, l2=l2, cells=tuple(cells))
