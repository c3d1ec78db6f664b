"""Lowering of an Architecture to a flat, shape-annotated op program.

Every block layer becomes one op node (plus implicit nodes for the network
input, block-level pools, the classifier flatten and its dense chain).
Node uids are global: ``b{block}.{layer_id}`` for block layers,
``b{block}.pool`` for block-level pools, ``flatten`` / ``fc{i}`` for the
head.  Shape inference happens during lowering and raises ValidationError
naming the offending layers.

Schedules reorder ops for execution/liveness analysis:

* ``all_parallel``   — branches interleaved at layer granularity,
* ``branch_sequential`` — each branch runs to completion before the next.

Both are verified topologically; an order that would read a value before
it is produced raises ScheduleInvalid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import (
    INPUT_REF, Architecture, ChannelSlice, Concat, Conv, PoolLayer, PoolSpec,
    Relu, ResidualAdd,
)
from .errors import ScheduleInvalid, ValidationError

SCHEDULES = ("all_parallel", "branch_sequential")

INPUT_UID = "in"


@dataclass(frozen=True)
class OpNode:
    uid: str
    kind: str  # input conv relu pool concat slice add flatten dense
    inputs: tuple[str, ...]
    in_shapes: tuple[tuple[int, ...], ...]
    out_shape: tuple[int, ...]
    block: int | None = None
    branch: int | None = None
    conv: Conv | None = None
    pool: PoolSpec | None = None
    slice_start: int | None = None
    dense_features: int | None = None

    @property
    def out_elements(self) -> int:
        return math.prod(self.out_shape)


@dataclass(frozen=True)
class ShapeTable:
    """Shape lookup per op uid, plus the flattened classifier input size."""

    outputs: dict[str, tuple[int, ...]]
    inputs: dict[str, tuple[tuple[int, ...], ...]]
    classifier_input: int

    def __getitem__(self, uid: str) -> tuple[int, ...]:
        return self.outputs[uid]


@dataclass(frozen=True)
class Program:
    ops: tuple[OpNode, ...]
    logits_uid: str

    def node(self, uid: str) -> OpNode:
        return self._index[uid]

    @property
    def _index(self) -> dict[str, OpNode]:
        index = getattr(self, "_index_cache", None)
        if index is None:
            index = {op.uid: op for op in self.ops}
            object.__setattr__(self, "_index_cache", index)
        return index

    def shape_table(self) -> ShapeTable:
        flat = next((op for op in self.ops if op.kind == "flatten"), None)
        return ShapeTable(
            outputs={op.uid: op.out_shape for op in self.ops},
            inputs={op.uid: op.in_shapes for op in self.ops},
            classifier_input=flat.out_elements if flat is not None else 0,
        )

    def weight_ops(self) -> tuple[OpNode, ...]:
        return tuple(op for op in self.ops if op.kind in ("conv", "dense"))


def resolve_padding(conv: Conv) -> tuple[int, int]:
    if conv.padding == "same":
        return ((conv.kernel[0] - 1) // 2, (conv.kernel[1] - 1) // 2)
    return conv.padding  # type: ignore[return-value]


def _conv_out_shape(conv: Conv, in_shape: tuple[int, ...], where: str) -> tuple[int, ...]:
    c, h, w = in_shape
    if c % conv.groups != 0:
        raise ValidationError(f"{where}: groups={conv.groups} does not divide "
                              f"{c} input channels")
    ph, pw = resolve_padding(conv)
    kh, kw = conv.kernel
    sh, sw = conv.stride
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ValidationError(f"{where}: kernel {conv.kernel} does not fit "
                              f"input {in_shape}")
    return (conv.out_channels, oh, ow)


def _pool_out_shape(spec: PoolSpec, in_shape: tuple[int, ...], where: str) -> tuple[int, ...]:
    c, h, w = in_shape
    wh, ww = spec.window
    sh, sw = spec.stride
    if h < wh or w < ww:
        raise ValidationError(f"{where}: pool window {spec.window} exceeds "
                              f"input {in_shape}")
    return (c, (h - wh) // sh + 1, (w - ww) // sw + 1)


def lower(arch: Architecture) -> Program:
    """Flatten the architecture into shape-annotated ops (raises
    ValidationError on any inconsistency)."""
    ops: list[OpNode] = [OpNode(uid=INPUT_UID, kind="input", inputs=(),
                                in_shapes=(), out_shape=arch.input_shape)]
    shapes: dict[str, tuple[int, ...]] = {INPUT_UID: arch.input_shape}
    current = INPUT_UID

    for bi, block in enumerate(arch.blocks):
        env: dict[str, str] = {INPUT_REF: current}
        last_uid = current
        for layer in block.layers:
            where = f"b{bi}.{layer.id}"
            try:
                in_uids = tuple(env[r] for r in layer.inputs)
            except KeyError as exc:
                raise ValidationError(f"{where}: unresolved input ref {exc}") from exc
            in_shapes = tuple(shapes[u] for u in in_uids)
            op = layer.op
            node_kw: dict = {}
            if isinstance(op, Conv):
                kind = "conv"
                out_shape = _conv_out_shape(op, in_shapes[0], where)
                node_kw["conv"] = op
            elif isinstance(op, Relu):
                kind = "relu"
                out_shape = in_shapes[0]
            elif isinstance(op, PoolLayer):
                kind = "pool"
                out_shape = _pool_out_shape(op.spec, in_shapes[0], where)
                node_kw["pool"] = op.spec
            elif isinstance(op, Concat):
                kind = "concat"
                heights = {s[1:] for s in in_shapes}
                if len(heights) != 1:
                    raise ValidationError(
                        f"{where}: concat inputs disagree spatially "
                        f"({[list(s) for s in in_shapes]})")
                out_shape = (sum(s[0] for s in in_shapes),) + in_shapes[0][1:]
            elif isinstance(op, ChannelSlice):
                kind = "slice"
                c = in_shapes[0][0]
                if op.start + op.length > c:
                    raise ValidationError(
                        f"{where}: slice [{op.start}, {op.start + op.length}) "
                        f"exceeds {c} channels")
                out_shape = (op.length,) + in_shapes[0][1:]
                node_kw["slice_start"] = op.start
            elif isinstance(op, ResidualAdd):
                kind = "add"
                if in_shapes[0] != in_shapes[1]:
                    raise ValidationError(
                        f"{where}: shortcut shape mismatch between "
                        f"{in_uids[0]} {in_shapes[0]} and "
                        f"{in_uids[1]} {in_shapes[1]}")
                out_shape = in_shapes[0]
            else:  # pragma: no cover - exhaustive over LayerOp
                raise ValidationError(f"{where}: unknown op {op!r}")
            uid = where
            ops.append(OpNode(uid=uid, kind=kind, inputs=in_uids,
                              in_shapes=in_shapes, out_shape=out_shape,
                              block=bi, branch=layer.branch, **node_kw))
            shapes[uid] = out_shape
            env[layer.id] = uid
            last_uid = uid

        if block.pool is not None:
            in_shape = shapes[last_uid]
            uid = f"b{bi}.pool"
            out_shape = _pool_out_shape(block.pool, in_shape, uid)
            ops.append(OpNode(uid=uid, kind="pool", inputs=(last_uid,),
                              in_shapes=(in_shape,), out_shape=out_shape,
                              block=bi, pool=block.pool))
            shapes[uid] = out_shape
            last_uid = uid
        current = last_uid

    feat_shape = shapes[current]
    flat = math.prod(feat_shape)
    ops.append(OpNode(uid="flatten", kind="flatten", inputs=(current,),
                      in_shapes=(feat_shape,), out_shape=(flat,)))
    shapes["flatten"] = (flat,)
    current = "flatten"
    n_dense = len(arch.classifier.features)
    for i, width in enumerate(arch.classifier.features):
        ops.append(OpNode(uid=f"fc{i}", kind="dense", inputs=(current,),
                          in_shapes=(shapes[current],), out_shape=(width,),
                          dense_features=width))
        shapes[f"fc{i}"] = (width,)
        current = f"fc{i}"
        if arch.classifier.relu_hidden and i < n_dense - 1:
            ops.append(OpNode(uid=f"fc{i}.relu", kind="relu", inputs=(current,),
                              in_shapes=((width,),), out_shape=(width,)))
            shapes[f"fc{i}.relu"] = (width,)
            current = f"fc{i}.relu"
    return Program(ops=tuple(ops), logits_uid=current)


# ---------------------------------------------------------------------------
# Scheduling


def schedule(prog: Program, name: str) -> tuple[OpNode, ...]:
    """Reorder ops per the named schedule and verify the order is executable."""
    if name not in SCHEDULES:
        raise ScheduleInvalid(f"unknown schedule {name!r}")
    ordered: list[OpNode] = []
    seen: set[str] = set()

    def emit(op: OpNode) -> None:
        ordered.append(op)
        seen.add(op.uid)

    block_ids = sorted({op.block for op in prog.ops if op.block is not None})
    for op in prog.ops:
        if op.kind == "input":
            emit(op)
    for bi in block_ids:
        block_ops = [op for op in prog.ops if op.block == bi]
        branch_ids = sorted({op.branch for op in block_ops if op.branch is not None})
        if not branch_ids:
            for op in block_ops:
                emit(op)
            continue
        first_branch_pos = next(i for i, op in enumerate(block_ops)
                                if op.branch is not None)
        for op in block_ops[:first_branch_pos]:
            emit(op)
        rest = block_ops[first_branch_pos:]
        queues = {b: [op for op in rest if op.branch == b] for b in branch_ids}
        tail = [op for op in rest if op.branch is None]
        if name == "branch_sequential":
            for b in branch_ids:
                for op in queues[b]:
                    emit(op)
        else:
            # Layer-granularity interleave: one ready op per branch per round.
            pending = sum(len(q) for q in queues.values())
            while pending:
                progress = False
                for b in branch_ids:
                    q = queues[b]
                    if q and all(ref in seen for ref in q[0].inputs):
                        emit(q.pop(0))
                        pending -= 1
                        progress = True
                if not progress:
                    raise ScheduleInvalid(
                        f"schedule {name!r}: cyclic or cross-branch dependency "
                        f"in block {bi}")
        for op in tail:
            emit(op)
    for op in prog.ops:
        if op.block is None and op.kind != "input":
            emit(op)

    produced: set[str] = set()
    for op in ordered:
        for ref in op.inputs:
            if ref not in produced:
                raise ScheduleInvalid(
                    f"schedule {name!r}: {op.uid} reads {ref} before it is "
                    f"produced")
        produced.add(op.uid)
    if len(ordered) != len(prog.ops):
        raise ScheduleInvalid(f"schedule {name!r}: op count mismatch")
    return tuple(ordered)
