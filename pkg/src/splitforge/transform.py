"""Architecture-to-architecture splitting transforms.

``split_transform`` realizes the block-wise split: block ``i`` is replaced
by ``K_i`` parallel branches holding ``1/K_i``-width copies of its layers,
joined by a fusion stage (per-branch pool, concat, 1x1 conv back to the
original channel count).  Branches of the first block read the full input;
branches of later blocks read contiguous channel slices of the preceding
fusion output.

Baselines for comparison:

* ``ideal_split``  — two-conv nets only; independent branch groups per
  layer, no fusion, no cross-branch reads.
* ``naive_split``  — K full-depth thin copies of the whole net, concatenated
  once before the classifier.
* ``shared_split`` — first S conv layers kept whole, the rest split into K
  branches that each read the full shared output.

Transform outputs carry a ``Lineage`` stamp (mode, factors, the original
architecture); transforms refuse inputs that already carry one.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any

from . import program
from .arch import (
    INPUT_REF, Architecture, Block, ChannelSlice, Concat, Conv, Layer,
    Lineage, PoolLayer, Relu, TRANSFORM_MODES, validate,
)
from .errors import (
    NonDivisibleError, ParseError, PlanLengthMismatch, SharedDepthTooLarge,
    UnresolvableWiring, ValidationError,
)


@dataclass(frozen=True)
class SplitPlan:
    """mode=proposed: one factor per block; ideal: (k1, k2);
    naive/shared: a single K.  shared additionally carries shared_depth."""

    mode: str
    factors: tuple[int, ...]
    shared_depth: int | None = None


def parse_plan(document: str | dict) -> SplitPlan:
    if isinstance(document, str):
        try:
            obj = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"invalid JSON: {exc}") from exc
    else:
        obj = document
    if not isinstance(obj, dict):
        raise ParseError("$", f"expected object, got {obj!r}")
    for key in obj:
        if key not in ("mode", "factors", "shared_depth"):
            raise ParseError(f"$.{key}", "unknown field")
    mode = obj.get("mode")
    if mode not in TRANSFORM_MODES:
        raise ParseError("$.mode", f"expected one of {TRANSFORM_MODES}, got {mode!r}")
    factors = obj.get("factors")
    if (not isinstance(factors, list) or not factors
            or any(not isinstance(f, int) or isinstance(f, bool) or f < 1
                   for f in factors)):
        raise ParseError("$.factors", "expected a non-empty list of integers >= 1")
    shared_depth = obj.get("shared_depth")
    if mode == "shared":
        if not isinstance(shared_depth, int) or shared_depth < 0:
            raise ParseError("$.shared_depth",
                             "mode=shared requires an integer shared_depth >= 0")
    elif shared_depth is not None:
        raise ParseError("$.shared_depth", f"not allowed for mode={mode}")
    if mode == "ideal" and len(factors) != 2:
        raise ParseError("$.factors", "mode=ideal takes exactly two factors")
    if mode in ("naive", "shared") and len(factors) != 1:
        raise ParseError("$.factors", f"mode={mode} takes exactly one factor")
    return SplitPlan(mode=mode, factors=tuple(factors), shared_depth=shared_depth)


def serialize_plan(plan: SplitPlan) -> str:
    doc: dict[str, Any] = {"mode": plan.mode, "factors": list(plan.factors)}
    if plan.shared_depth is not None:
        doc["shared_depth"] = plan.shared_depth
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _reject_transformed(arch: Architecture) -> None:
    if arch.lineage is not None:
        raise ValidationError(
            f"{arch.name}: already a transformed architecture "
            f"(mode={arch.lineage.mode}); re-splitting is not allowed")
    for bi, block in enumerate(arch.blocks):
        for layer in block.layers:
            bad = (isinstance(layer.op, (Concat, ChannelSlice))
                   or (isinstance(layer.op, Conv) and layer.op.fusion)
                   or layer.branch is not None)
            if bad:
                raise ValidationError(
                    f"b{bi}.{layer.id}: split machinery present; input looks "
                    f"already transformed")


def _block_io_channels(arch: Architecture) -> list[tuple[int, int]]:
    """(input_channels, output_channels) per block of a plain architecture."""
    prog = program.lower(arch)
    io = []
    current = arch.input_shape[0]
    for bi in range(len(arch.blocks)):
        block_ops = [op for op in prog.ops if op.block == bi]
        out_c = block_ops[-1].out_shape[0]
        io.append((current, out_c))
        current = out_c
    return io


def _scaled_conv(conv: Conv, factor: int, bi: int, lid: str) -> Conv:
    if conv.out_channels % factor != 0:
        raise NonDivisibleError(bi, lid, factor, conv.out_channels)
    width = conv.out_channels // factor
    if width % conv.groups != 0:
        raise ValidationError(
            f"b{bi}.{lid}: factor {factor} leaves {width} channels, not "
            f"divisible by groups={conv.groups}")
    return dataclasses.replace(conv, out_channels=width)


def _finish(arch: Architecture, out: Architecture) -> Architecture:
    report = validate(out)
    if not report.ok:
        first = report.issues[0]
        raise ValidationError(f"transform produced an invalid architecture: "
                              f"{first.path}: {first.message}")
    return out


# ---------------------------------------------------------------------------
# Proposed split (fusion blocks)


def split_transform(arch: Architecture, plan: SplitPlan, *,
                    allow_partial: bool = False) -> Architecture:
    """Split the first ``len(plan.factors)`` blocks with per-block factors
    and insert a fusion stage per split block.

    A full-length plan (one factor per block) is required unless
    ``allow_partial`` is set, in which case a shorter plan splits a prefix
    of the blocks and leaves the rest untouched (the block-by-block search
    builds its candidates this way).
    """
    if plan.mode != "proposed":
        raise PlanLengthMismatch(f"split_transform needs mode=proposed, "
                                 f"got {plan.mode}")
    _reject_transformed(arch)
    n = len(arch.blocks)
    if len(plan.factors) != n and not (allow_partial and 1 <= len(plan.factors) <= n):
        raise PlanLengthMismatch(
            f"plan has {len(plan.factors)} factors for {n} blocks")

    io = _block_io_channels(arch)
    blocks: list[Block] = []
    for bi, block in enumerate(arch.blocks):
        if bi >= len(plan.factors):
            blocks.append(block)
            continue
        factor = plan.factors[bi]
        in_c, out_c = io[bi]
        if bi > 0 and in_c % factor != 0:
            raise NonDivisibleError(bi, "input", factor, in_c)
        layers: list[Layer] = []
        branch_outputs: list[str] = []
        for j in range(factor):
            if bi == 0:
                branch_input = INPUT_REF
            else:
                sid = f"br{j}.in"
                width = in_c // factor
                layers.append(Layer(sid, ChannelSlice(j * width, width),
                                    (INPUT_REF,), branch=j))
                branch_input = sid
            last = branch_input
            for layer in block.layers:
                nid = f"br{j}.{layer.id}"
                op = layer.op
                if isinstance(op, Conv):
                    op = _scaled_conv(op, factor, bi, layer.id)
                layers.append(Layer(nid, op,
                                    tuple(branch_input if r == INPUT_REF
                                          else f"br{j}.{r}"
                                          for r in layer.inputs),
                                    branch=j))
                last = nid
            if block.pool is not None:
                pid = f"br{j}.pool"
                layers.append(Layer(pid, PoolLayer(block.pool), (last,), branch=j))
                last = pid
            branch_outputs.append(last)
        layers.append(Layer("fuse.cat", Concat(), tuple(branch_outputs)))
        layers.append(Layer("fuse.conv",
                            Conv(out_c, kernel=(1, 1), padding=(0, 0), fusion=True),
                            ("fuse.cat",)))
        blocks.append(Block(layers=tuple(layers), pool=None, pool_free=True))

    out = Architecture(
        name=f"{arch.name}.split-{'-'.join(map(str, plan.factors))}",
        input_shape=arch.input_shape,
        blocks=tuple(blocks),
        classifier=arch.classifier,
        lineage=Lineage(mode="proposed", factors=plan.factors,
                        shared_depth=None, original=arch),
    )
    return _finish(arch, out)


def fused_baseline(arch: Architecture) -> Architecture:
    """The all-ones proposed split: original widths plus B fusion stages."""
    return split_transform(arch, SplitPlan("proposed", (1,) * len(arch.blocks)))


# ---------------------------------------------------------------------------
# Ideal split (two-conv nets, no fusion)


def _two_conv_parts(arch: Architecture) -> tuple[Block, int]:
    if len(arch.blocks) != 1:
        raise ValidationError("ideal split requires a single-block architecture")
    block = arch.blocks[0]
    conv_positions = [i for i, l in enumerate(block.layers)
                      if isinstance(l.op, Conv)]
    if len(conv_positions) != 2:
        raise ValidationError(
            f"ideal split requires exactly two conv layers, found "
            f"{len(conv_positions)}")
    for i, layer in enumerate(block.layers):
        if not isinstance(layer.op, (Conv, Relu)):
            raise ValidationError(
                f"ideal split supports plain conv/relu chains only "
                f"(found {layer.kind})")
        expected = (INPUT_REF,) if i == 0 else (block.layers[i - 1].id,)
        if layer.inputs != expected:
            raise ValidationError("ideal split requires a plain chain")
    return block, conv_positions[1]


def ideal_split(arch: Architecture, k1: int, k2: int) -> Architecture:
    """Split a two-conv net into k1 first-layer and k2 second-layer branch
    groups with no fusion and no cross-branch reads.

    Every second-layer branch consumes exactly one first-layer branch's
    output, which forces k2 >= k1.
    """
    _reject_transformed(arch)
    block, cut = _two_conv_parts(arch)
    if k1 < 1 or k2 < 1:
        raise ValidationError(f"factors must be >= 1, got ({k1}, {k2})")
    if k2 < k1:
        raise UnresolvableWiring(
            f"k2={k2} < k1={k1} would force a second-layer branch to read "
            f"across first-layer branches")
    lineage = Lineage(mode="ideal", factors=(k1, k2), shared_depth=None,
                      original=arch)
    if k1 == 1 and k2 == 1:
        return dataclasses.replace(arch, lineage=lineage)

    part1, part2 = block.layers[:cut], block.layers[cut:]
    layers: list[Layer] = []
    part1_out: list[str] = []
    for g in range(k1):
        last = INPUT_REF  # first-layer branches read the full input
        for layer in part1:
            nid = f"br{g}.{layer.id}"
            op = layer.op
            if isinstance(op, Conv):
                op = _scaled_conv(op, k1, 0, layer.id)
            layers.append(Layer(nid, op, (last,), branch=g))
            last = nid
        part1_out.append(last)

    branch_outputs: list[str] = []
    for m in range(k2):
        g = (m * k1) // k2  # the one first-layer branch this branch consumes
        last = part1_out[g]
        for layer in part2:
            nid = f"br{m}.{layer.id}"
            op = layer.op
            if isinstance(op, Conv):
                op = _scaled_conv(op, k2, 0, layer.id)
            layers.append(Layer(nid, op, (last,), branch=k1 + m))
            last = nid
        if block.pool is not None:
            pid = f"br{m}.pool"
            layers.append(Layer(pid, PoolLayer(block.pool), (last,),
                                branch=k1 + m))
            last = pid
        branch_outputs.append(last)
    layers.append(Layer("cat", Concat(), tuple(branch_outputs)))

    out = Architecture(
        name=f"{arch.name}.ideal-{k1}-{k2}",
        input_shape=arch.input_shape,
        blocks=(Block(layers=tuple(layers), pool=None, pool_free=True),),
        classifier=arch.classifier,
        lineage=lineage,
    )
    return _finish(arch, out)


# ---------------------------------------------------------------------------
# Naive split (independent thin nets)


def naive_split(arch: Architecture, k: int) -> Architecture:
    """K full-depth 1/K-width copies of the whole net, each reading the full
    input, concatenated once immediately before the classifier."""
    _reject_transformed(arch)
    if k < 1:
        raise ValidationError(f"factor must be >= 1, got {k}")
    layers: list[Layer] = []
    branch_outputs: list[str] = []
    for j in range(k):
        last = INPUT_REF
        for bi, block in enumerate(arch.blocks):
            block_in = last
            for layer in block.layers:
                nid = f"br{j}.b{bi}.{layer.id}"
                op = layer.op
                if isinstance(op, Conv):
                    op = _scaled_conv(op, k, bi, layer.id)
                layers.append(Layer(nid, op,
                                    tuple(block_in if r == INPUT_REF
                                          else f"br{j}.b{bi}.{r}"
                                          for r in layer.inputs), branch=j))
                last = nid
            if block.pool is not None:
                pid = f"br{j}.b{bi}.pool"
                layers.append(Layer(pid, PoolLayer(block.pool), (last,),
                                    branch=j))
                last = pid
        branch_outputs.append(last)
    layers.append(Layer("cat", Concat(), tuple(branch_outputs)))

    out = Architecture(
        name=f"{arch.name}.naive-{k}",
        input_shape=arch.input_shape,
        blocks=(Block(layers=tuple(layers), pool=None, pool_free=True),),
        classifier=arch.classifier,
        lineage=Lineage(mode="naive", factors=(k,), shared_depth=None,
                        original=arch),
    )
    return _finish(arch, out)


# ---------------------------------------------------------------------------
# Shared split (common trunk, thin tails)


def shared_split(arch: Architecture, shared_depth: int, k: int) -> Architecture:
    """Keep the first ``shared_depth`` conv layers whole; split the remainder
    into K 1/K-width branches, each reading the full shared output."""
    _reject_transformed(arch)
    if k < 1:
        raise ValidationError(f"factor must be >= 1, got {k}")
    total_convs = sum(1 for b in arch.blocks for l in b.layers
                      if isinstance(l.op, Conv))
    if shared_depth > total_convs:
        raise SharedDepthTooLarge(
            f"shared_depth={shared_depth} exceeds {total_convs} conv layers")
    lineage = Lineage(mode="shared", factors=(k,), shared_depth=shared_depth,
                      original=arch)
    if shared_depth == total_convs:
        # Degenerate: no split part; the architecture is unchanged.
        return dataclasses.replace(arch, lineage=lineage)

    # Emit the shared trunk, cutting just before conv number shared_depth.
    layers: list[Layer] = []
    convs_seen = 0
    shared_ids: dict[tuple[int, str], str] = {}
    block_input: list[str] = [INPUT_REF]  # per block, its input in the new graph
    split_start: tuple[int, int] | None = None
    for bi, block in enumerate(arch.blocks):
        cut = None
        for li, layer in enumerate(block.layers):
            if isinstance(layer.op, Conv):
                if convs_seen == shared_depth:
                    cut = li
                    break
                convs_seen += 1
            nid = f"sh.b{bi}.{layer.id}"
            layers.append(Layer(nid, layer.op,
                                tuple(block_input[bi] if r == INPUT_REF
                                      else shared_ids[(bi, r)]
                                      for r in layer.inputs)))
            shared_ids[(bi, layer.id)] = nid
        if cut is not None:
            split_start = (bi, cut)
            break
        out_id = (shared_ids[(bi, block.layers[-1].id)] if block.layers
                  else block_input[bi])
        if block.pool is not None:
            pid = f"sh.b{bi}.pool"
            layers.append(Layer(pid, PoolLayer(block.pool), (out_id,)))
            out_id = pid
        block_input.append(out_id)
    assert split_start is not None
    sb, sl = split_start

    branch_outputs: list[str] = []
    for j in range(k):
        prev_out = ""  # branch-local output of the preceding block (bi > sb)
        last = block_input[sb]
        for bi in range(sb, len(arch.blocks)):
            block = arch.blocks[bi]
            local: dict[str, str] = {}
            for li in range(sl if bi == sb else 0, len(block.layers)):
                layer = block.layers[li]
                nid = f"br{j}.b{bi}.{layer.id}"
                op = layer.op
                if isinstance(op, Conv):
                    op = _scaled_conv(op, k, bi, layer.id)
                inputs = []
                for r in layer.inputs:
                    if r == INPUT_REF:
                        inputs.append(block_input[sb] if bi == sb else prev_out)
                    elif (bi, r) in shared_ids:
                        inputs.append(shared_ids[(bi, r)])
                    else:
                        inputs.append(local.get(r, f"br{j}.b{bi}.{r}"))
                layers.append(Layer(nid, op, tuple(inputs), branch=j))
                local[layer.id] = nid
                last = nid
            if block.pool is not None:
                pid = f"br{j}.b{bi}.pool"
                layers.append(Layer(pid, PoolLayer(block.pool), (last,), branch=j))
                last = pid
            prev_out = last
        branch_outputs.append(last)
    layers.append(Layer("cat", Concat(), tuple(branch_outputs)))

    out = Architecture(
        name=f"{arch.name}.shared-{shared_depth}-{k}",
        input_shape=arch.input_shape,
        blocks=(Block(layers=tuple(layers), pool=None, pool_free=True),),
        classifier=arch.classifier,
        lineage=lineage,
    )
    return _finish(arch, out)


def apply_plan(arch: Architecture, plan: SplitPlan) -> Architecture:
    """Dispatch a parsed plan to the matching transform."""
    if plan.mode == "proposed":
        return split_transform(arch, plan)
    if plan.mode == "ideal":
        return ideal_split(arch, plan.factors[0], plan.factors[1])
    if plan.mode == "naive":
        return naive_split(arch, plan.factors[0])
    return shared_split(arch, plan.shared_depth or 0, plan.factors[0])
