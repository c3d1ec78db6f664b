"""Semantic-equivalence oracles.

Two independent checks back the rest of the package:

* **Block-diagonal embedding** — a split network's weights can be placed
  inside its unsplit counterpart (branch kernels become disjoint blocks of
  the full kernel, everything else zero).  Because channel slicing, pooling,
  relu and concatenation all commute with that placement, the embedded
  network must produce identical logits.  ``embed_block_diagonal`` performs
  the placement; ``check_equivalence`` measures max logit disagreement on
  random inputs.

* **Finite differences** — ``finite_diff_check`` compares analytic gradients
  against central differences, coordinate by coordinate, in float64.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import engine, program, transform
from .arch import Architecture
from .engine import WeightStore
from .errors import NotASplitArchitecture, ShapeMismatch

_BRANCH_SEG = re.compile(r"(^|\.)br\d+\.")


# ---------------------------------------------------------------------------
# Block-diagonal embedding


@dataclass(frozen=True)
class EmbeddingReport:
    pairs: int
    total_split: int
    total_baseline: int
    zero_fraction: float


def _baseline_uid(uid: str, mode: str) -> str:
    if mode == "ideal":
        return _BRANCH_SEG.sub(r"\1", uid)
    return _BRANCH_SEG.sub(r"\1br0.", uid)


def embed_block_diagonal(split: Architecture, weights: WeightStore):
    """Place a split network's weights block-diagonally inside its unsplit
    baseline.  Returns ``(baseline_arch, baseline_weights, report)``.

    Fused splits embed into the single-branch fused form of their original
    (identical layer inventory, full widths); two-layer splits embed into the
    original architecture itself.
    """
    lineage = split.lineage
    if lineage is None or lineage.original is None:
        raise NotASplitArchitecture("architecture carries no split lineage")
    if lineage.mode == "proposed":
        # fuse exactly the blocks the plan touched; a partial plan leaves the
        # tail blocks without fusion stages on both sides
        base = transform.split_transform(
            lineage.original,
            transform.SplitPlan("proposed", (1,) * len(lineage.factors)),
            allow_partial=True)
    elif lineage.mode == "ideal":
        base = lineage.original
    else:
        raise NotASplitArchitecture(
            f"only proposed/ideal splits embed into their baseline, "
            f"got mode={lineage.mode!r}")

    prog = program.lower(split)
    base_prog = program.lower(base)
    for op in list(prog.ops) + list(base_prog.ops):
        if op.kind == "conv" and op.conv.groups != 1:
            raise NotASplitArchitecture(
                f"{op.uid}: grouped convolutions are not embeddable")

    base_store = WeightStore()
    for op in base_prog.weight_ops():
        if op.kind == "conv":
            shape = (op.conv.out_channels, op.in_shapes[0][0], *op.conv.kernel)
            base_store[f"{op.uid}.w"] = np.zeros(shape, dtype=np.float64)
            if op.conv.bias:
                base_store[f"{op.uid}.b"] = np.zeros(op.conv.out_channels,
                                                     dtype=np.float64)
        else:
            base_store[f"{op.uid}.w"] = np.zeros(
                (op.dense_features, op.in_shapes[0][0]), dtype=np.float64)
            base_store[f"{op.uid}.b"] = np.zeros(op.dense_features,
                                                 dtype=np.float64)

    # Channel offset of every split tensor inside its baseline counterpart.
    # A conv's output lands at (rank among same-baseline-kernel siblings) x
    # (branch width); slices shift by their start; concat reassembles to 0.
    offsets: dict[str, int] = {}
    sibling_count: dict[str, int] = {}
    pairs = 0
    for op in prog.ops:
        if op.kind == "input":
            offsets[op.uid] = 0
        elif op.kind == "slice":
            offsets[op.uid] = offsets[op.inputs[0]] + op.slice_start
        elif op.kind in ("relu", "pool"):
            offsets[op.uid] = offsets[op.inputs[0]]
        elif op.kind == "add":
            a, b = (offsets[i] for i in op.inputs)
            if a != b:
                raise ShapeMismatch(
                    f"{op.uid}: shortcut operands sit at different baseline "
                    f"offsets ({a} vs {b})")
            offsets[op.uid] = a
        elif op.kind == "concat":
            expect = 0
            for inp, shape in zip(op.inputs, op.in_shapes):
                if offsets[inp] != expect:
                    raise ShapeMismatch(
                        f"{op.uid}: concat input {inp} at offset "
                        f"{offsets[inp]}, expected {expect}")
                expect += shape[0]
            offsets[op.uid] = 0
        elif op.kind == "conv":
            base_uid = _baseline_uid(op.uid, lineage.mode)
            rank = sibling_count.get(base_uid, 0)
            sibling_count[base_uid] = rank + 1
            w_out = op.out_shape[0]
            w_in = op.in_shapes[0][0]
            out_off = rank * w_out
            in_off = offsets[op.inputs[0]]
            kernel = np.asarray(weights[f"{op.uid}.w"], dtype=np.float64)
            target = base_store[f"{base_uid}.w"]
            if target.shape[2:] != kernel.shape[2:]:
                raise ShapeMismatch(
                    f"{op.uid}: kernel {kernel.shape} does not fit baseline "
                    f"{base_uid} {target.shape}")
            slot = target[out_off:out_off + w_out, in_off:in_off + w_in]
            if slot.shape != kernel.shape or np.count_nonzero(slot):
                raise ShapeMismatch(
                    f"{op.uid}: baseline slot [{out_off}:{out_off + w_out}, "
                    f"{in_off}:{in_off + w_in}] of {base_uid} unavailable")
            target[out_off:out_off + w_out, in_off:in_off + w_in] = kernel
            if f"{op.uid}.b" in weights:
                base_store[f"{base_uid}.b"][out_off:out_off + w_out] = \
                    weights[f"{op.uid}.b"]
            offsets[op.uid] = out_off
            pairs += 1
        elif op.kind == "flatten":
            if offsets[op.inputs[0]] != 0:
                raise ShapeMismatch(
                    "classifier input is offset inside the baseline; the "
                    "dense weights cannot be copied verbatim")
            offsets[op.uid] = 0
        elif op.kind == "dense":
            base_store[f"{op.uid}.w"] = np.asarray(weights[f"{op.uid}.w"],
                                                   dtype=np.float64)
            base_store[f"{op.uid}.b"] = np.asarray(weights[f"{op.uid}.b"],
                                                   dtype=np.float64)
            offsets[op.uid] = 0
            pairs += 1

    total_base = base_store.total_elements
    report = EmbeddingReport(
        pairs=pairs,
        total_split=sum(int(np.asarray(v).size) for v in weights.tensors.values()),
        total_baseline=total_base,
        zero_fraction=1.0 - base_store.nonzero_elements / total_base,
    )
    return base, base_store, report


# ---------------------------------------------------------------------------
# Logit equivalence


@dataclass(frozen=True)
class EquivalenceReport:
    trials: int
    max_abs_diff: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_abs_diff <= self.tol


def check_equivalence(arch_a: Architecture, weights_a: WeightStore,
                      arch_b: Architecture, weights_b: WeightStore,
                      trials: int = 10, seed: int = 0, tol: float = 1e-5,
                      dtype=np.float64, batch: int = 2) -> EquivalenceReport:
    """Max |logit_a - logit_b| over random inputs fed to both networks."""
    if tuple(arch_a.input_shape) != tuple(arch_b.input_shape):
        raise ShapeMismatch(
            f"input shapes differ: {arch_a.input_shape} vs {arch_b.input_shape}")
    rng = np.random.Generator(np.random.PCG64(seed))
    wa = weights_a.astype(dtype)
    wb = weights_b.astype(dtype)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal((batch, *arch_a.input_shape)).astype(dtype)
        la, _ = engine.forward(arch_a, wa, x)
        lb, _ = engine.forward(arch_b, wb, x)
        worst = max(worst, float(np.abs(la - lb).max()))
    return EquivalenceReport(trials=trials, max_abs_diff=worst, tol=tol)


# ---------------------------------------------------------------------------
# Finite-difference gradient check


@dataclass(frozen=True)
class GradCheckReport:
    checked: int
    worst_rel_err: float
    worst_key: str
    per_tensor: dict[str, float] = field(repr=False, default_factory=dict)


def _near_ties(arch: Architecture, weights: WeightStore,
               x: np.ndarray, margin: float) -> bool:
    """True when any relu sits near its kink or any max-pool window has a
    near-tied maximum — both make finite differences unreliable."""
    prog = program.lower(arch)
    _, values = engine.forward(arch, weights, x)
    for op in prog.ops:
        if op.kind == "relu":
            if np.abs(values[op.inputs[0]]).min() < margin:
                return True
        elif op.kind == "pool" and op.pool.mode == "max":
            v = values[op.inputs[0]]
            wh, ww = op.pool.window
            sh, sw = op.pool.stride
            _, oh, ow = op.out_shape
            win = engine._windows(v, wh, ww, sh, sw, oh, ow)
            flat = win.reshape(*win.shape[:4], -1)
            if flat.shape[-1] > 1:
                top2 = np.partition(flat, -2, axis=-1)[..., -2:]
                gap = top2[..., 1] - top2[..., 0]
                # a window whose maximum is exactly 0 is fully relu-clamped;
                # with the relu margin holding nothing in it can move, so a
                # tie at zero is harmless
                if ((gap < margin) & (top2[..., 1] != 0.0)).any():
                    return True
    return False


def finite_diff_check(arch: Architecture, weights: WeightStore | None = None,
                      n_weights: int = 200, seed: int = 0, eps: float = 1e-5,
                      batch: int = 2, margin: float = 1e-3,
                      max_resample: int = 50) -> GradCheckReport:
    """Compare analytic gradients to central differences in float64.

    Samples at least ``n_weights`` coordinates spread over every weight
    tensor.  Relative error uses an absolute floor of 1e-8 so exact zeros
    compare cleanly.  Inputs are resampled while a relu or max-pool sits
    within ``margin`` of a non-differentiable point.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    if weights is None:
        weights = engine.init_weights(arch, seed=seed, dtype=np.float64)
    else:
        weights = weights.astype(np.float64)

    n_classes = arch.num_classes
    for attempt in range(max_resample):
        x = rng.standard_normal((batch, *arch.input_shape))
        labels = rng.integers(0, n_classes, size=batch)
        if not _near_ties(arch, weights, x, margin):
            break
    else:
        raise ShapeMismatch(
            f"could not find tie-free inputs in {max_resample} attempts")

    _, grads = engine.loss_and_grads(arch, weights, x, labels)
    keys = sorted(weights.keys())
    sizes = {k: int(weights[k].size) for k in keys}
    alloc = dict.fromkeys(keys, 0)
    budget = min(n_weights, sum(sizes.values()))
    while budget:
        grew = False
        for key in keys:
            if budget and alloc[key] < sizes[key]:
                alloc[key] += 1
                budget -= 1
                grew = True
        if not grew:
            break
    worst, worst_key, checked = 0.0, "", 0
    per_tensor: dict[str, float] = {}
    for key in keys:
        arr = weights[key]
        flat_idx = rng.choice(arr.size, size=alloc[key], replace=False)
        tensor_worst = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            up = engine.loss_value(arch, weights, x, labels)
            arr[idx] = orig - eps
            down = engine.loss_value(arch, weights, x, labels)
            arr[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads.get(key, np.zeros_like(arr))[idx]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rel = float(abs(analytic - numeric) / denom)
            tensor_worst = max(tensor_worst, rel)
            checked += 1
        per_tensor[key] = tensor_worst
        if tensor_worst > worst:
            worst, worst_key = tensor_worst, key
    return GradCheckReport(checked=checked, worst_rel_err=worst,
                           worst_key=worst_key, per_tensor=per_tensor)
