"""Block-structured CNN architecture IR.

An architecture is a sequence of blocks feeding a dense classifier head.
Each block is a small operator graph: an ordered tuple of layers, each
naming its inputs by layer id (or the reserved ref ``"input"`` for the
block input).  Plain chains simply point every layer at its predecessor;
split blocks use channel slices, parallel branches tagged with a branch
index, concats and fusion 1x1 convs.

Config documents are JSON.  Parsing normalizes: ids are assigned where
missing, implicit inputs are resolved, and block-level ``residual``
shortcut descriptors are desugared into explicit layers.  Unknown fields
are rejected with the offending path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

from .errors import ParseError, ValidationError

INPUT_REF = "input"

POOL_MODES = ("max", "avg")
TRANSFORM_MODES = ("proposed", "ideal", "naive", "shared")


# ---------------------------------------------------------------------------
# IR types


@dataclass(frozen=True)
class PoolSpec:
    mode: str = "max"
    window: tuple[int, int] = (2, 2)
    stride: tuple[int, int] = (2, 2)


@dataclass(frozen=True)
class Conv:
    """2-D convolution.  ``padding`` is "same" (stride-1 only) or (ph, pw)."""

    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: Union[str, tuple[int, int]] = "same"
    groups: int = 1
    bias: bool = False
    fusion: bool = False  # marks the 1x1 conv of a fusion stage


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class PoolLayer:
    spec: PoolSpec


@dataclass(frozen=True)
class Concat:
    pass


@dataclass(frozen=True)
class ChannelSlice:
    start: int
    length: int


@dataclass(frozen=True)
class ResidualAdd:
    pass


LayerOp = Union[Conv, Relu, PoolLayer, Concat, ChannelSlice, ResidualAdd]

_KIND_OF_OP = {
    Conv: "conv",
    Relu: "relu",
    PoolLayer: "pool",
    Concat: "concat",
    ChannelSlice: "channel_slice",
    ResidualAdd: "residual_add",
}


@dataclass(frozen=True)
class Layer:
    """A node of the block graph: payload op plus wiring metadata."""

    id: str
    op: LayerOp
    inputs: tuple[str, ...]
    branch: int | None = None

    @property
    def kind(self) -> str:
        return _KIND_OF_OP[type(self.op)]


@dataclass(frozen=True)
class Block:
    layers: tuple[Layer, ...]
    pool: PoolSpec | None = None
    pool_free: bool = False


@dataclass(frozen=True)
class ClassifierSpec:
    """Flatten plus a dense chain; the last feature count is the class count."""

    features: tuple[int, ...]
    relu_hidden: bool = True


@dataclass(frozen=True)
class Lineage:
    """Provenance stamped onto transform outputs; ``original`` is pre-split."""

    mode: str
    factors: tuple[int, ...]
    shared_depth: int | None
    original: "Architecture"


@dataclass(frozen=True)
class Architecture:
    name: str
    input_shape: tuple[int, int, int]  # (channels, height, width)
    blocks: tuple[Block, ...]
    classifier: ClassifierSpec
    lineage: Lineage | None = None

    @property
    def num_classes(self) -> int:
        return self.classifier.features[-1] if self.classifier.features else 0


@dataclass(frozen=True)
class Issue:
    path: str
    message: str


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, path: str, message: str) -> None:
        self.issues.append(Issue(path, message))


# ---------------------------------------------------------------------------
# Construction helpers


def chain(*ops: LayerOp, ids: list[str] | None = None,
          branch: int | None = None, first_input: str = INPUT_REF) -> list[Layer]:
    """Wire ops sequentially: each reads its predecessor, the first reads
    ``first_input``.  Ids default to positional ``l{i}``."""
    layers: list[Layer] = []
    prev = first_input
    for i, op in enumerate(ops):
        lid = ids[i] if ids else f"l{i}"
        layers.append(Layer(id=lid, op=op, inputs=(prev,), branch=branch))
        prev = lid
    return layers


# ---------------------------------------------------------------------------
# Parsing


def _expect_keys(obj: dict, path: str, required: tuple[str, ...],
                 optional: tuple[str, ...]) -> None:
    for key in obj:
        if key not in required and key not in optional:
            raise ParseError(f"{path}.{key}", "unknown field")
    for key in required:
        if key not in obj:
            raise ParseError(path, f"missing required field {key!r}")


def _as_int(value: Any, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(path, f"expected integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ParseError(path, f"must be >= {minimum}, got {value}")
    return value


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ParseError(path, f"expected boolean, got {value!r}")
    return value


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ParseError(path, f"expected string, got {value!r}")
    return value


def _as_pair(value: Any, path: str, minimum: int = 1) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ParseError(path, f"expected a pair of integers, got {value!r}")
    return (_as_int(value[0], f"{path}[0]", minimum),
            _as_int(value[1], f"{path}[1]", minimum))


def _parse_pool_spec(obj: Any, path: str) -> PoolSpec:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    _expect_keys(obj, path, ("mode", "window", "stride"), ())
    mode = _as_str(obj["mode"], f"{path}.mode")
    if mode not in POOL_MODES:
        raise ParseError(f"{path}.mode", f"expected one of {POOL_MODES}, got {mode!r}")
    return PoolSpec(mode=mode,
                    window=_as_pair(obj["window"], f"{path}.window"),
                    stride=_as_pair(obj["stride"], f"{path}.stride"))


_LAYER_FIELDS = {
    "conv": (("out_channels",),
             ("kernel", "stride", "padding", "groups", "bias", "fusion")),
    "relu": ((), ()),
    "pool": (("mode", "window", "stride"), ()),
    "concat": ((), ()),
    "channel_slice": (("start", "length"), ()),
    "residual_add": ((), ()),
}

_COMMON_LAYER_FIELDS = ("kind", "id", "inputs", "branch")


def _parse_layer(obj: Any, path: str, index: int, prev_id: str | None) -> Layer:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    kind = _as_str(obj.get("kind", ""), f"{path}.kind")
    if kind not in _LAYER_FIELDS:
        raise ParseError(f"{path}.kind",
                         f"expected one of {sorted(_LAYER_FIELDS)}, got {kind!r}")
    required, optional = _LAYER_FIELDS[kind]
    _expect_keys(obj, path, ("kind",) + required, optional + _COMMON_LAYER_FIELDS[1:])

    lid = obj.get("id", f"l{index}")
    lid = _as_str(lid, f"{path}.id")
    if lid == INPUT_REF:
        raise ParseError(f"{path}.id", f"{INPUT_REF!r} is reserved")

    if "inputs" in obj:
        raw = obj["inputs"]
        if not isinstance(raw, list) or not raw:
            raise ParseError(f"{path}.inputs", "expected non-empty list of refs")
        inputs = tuple(_as_str(r, f"{path}.inputs[{i}]") for i, r in enumerate(raw))
    else:
        if kind in ("concat", "residual_add"):
            raise ParseError(path, f"{kind} requires explicit inputs")
        inputs = (prev_id if prev_id is not None else INPUT_REF,)

    if kind == "residual_add" and len(inputs) != 2:
        raise ParseError(f"{path}.inputs", "residual_add takes exactly 2 inputs")
    if kind != "concat" and kind != "residual_add" and len(inputs) != 1:
        raise ParseError(f"{path}.inputs", f"{kind} takes exactly 1 input")

    branch = None
    if obj.get("branch") is not None:
        branch = _as_int(obj["branch"], f"{path}.branch", 0)

    op: LayerOp
    if kind == "conv":
        padding: Union[str, tuple[int, int]] = "same"
        if "padding" in obj:
            if obj["padding"] == "same":
                padding = "same"
            else:
                padding = _as_pair(obj["padding"], f"{path}.padding", 0)
        op = Conv(
            out_channels=_as_int(obj["out_channels"], f"{path}.out_channels", 1),
            kernel=_as_pair(obj["kernel"], f"{path}.kernel") if "kernel" in obj else (3, 3),
            stride=_as_pair(obj["stride"], f"{path}.stride") if "stride" in obj else (1, 1),
            padding=padding,
            groups=_as_int(obj.get("groups", 1), f"{path}.groups", 1),
            bias=_as_bool(obj.get("bias", False), f"{path}.bias"),
            fusion=_as_bool(obj.get("fusion", False), f"{path}.fusion"),
        )
    elif kind == "relu":
        op = Relu()
    elif kind == "pool":
        op = PoolLayer(_parse_pool_spec(
            {"mode": obj["mode"], "window": obj["window"], "stride": obj["stride"]},
            path))
    elif kind == "concat":
        op = Concat()
    elif kind == "channel_slice":
        op = ChannelSlice(start=_as_int(obj["start"], f"{path}.start", 0),
                          length=_as_int(obj["length"], f"{path}.length", 1))
    else:
        op = ResidualAdd()
    return Layer(id=lid, op=op, inputs=inputs, branch=branch)


def _desugar_residual(obj: dict, path: str, layers: list[Layer]) -> list[Layer]:
    """Expand a block-level shortcut descriptor into explicit layers.

    The shortcut runs from ``source`` (default: the block input) to the
    output of the last listed layer.  ``projection`` inserts a 1x1 conv on
    the shortcut path sized to the last conv's width.
    """
    _expect_keys(obj, path, ("kind",), ("source",))
    kind = _as_str(obj["kind"], f"{path}.kind")
    if kind not in ("identity", "projection"):
        raise ParseError(f"{path}.kind", f"expected identity|projection, got {kind!r}")
    if not layers:
        raise ParseError(path, "residual on an empty layer list")
    source = obj.get("source", INPUT_REF)
    if isinstance(source, int) and not isinstance(source, bool):
        if not 0 <= source < len(layers):
            raise ParseError(f"{path}.source", f"layer index {source} out of range")
        source = layers[source].id
    else:
        source = _as_str(source, f"{path}.source")

    main = layers[-1].id
    out = list(layers)
    if kind == "projection":
        widths = [l.op.out_channels for l in layers if isinstance(l.op, Conv)]
        if not widths:
            raise ParseError(path, "projection residual needs a conv layer")
        proj = Layer(id="shortcut_proj",
                     op=Conv(out_channels=widths[-1], kernel=(1, 1), padding=(0, 0)),
                     inputs=(source,))
        out.append(proj)
        source = proj.id
    out.append(Layer(id="shortcut_add", op=ResidualAdd(), inputs=(main, source)))
    return out


def _parse_block(obj: Any, path: str) -> Block:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    _expect_keys(obj, path, ("layers",), ("pool", "pool_free", "residual"))
    raw_layers = obj["layers"]
    if not isinstance(raw_layers, list):
        raise ParseError(f"{path}.layers", "expected list")
    layers: list[Layer] = []
    for i, raw in enumerate(raw_layers):
        prev = layers[-1].id if layers else None
        layers.append(_parse_layer(raw, f"{path}.layers[{i}]", i, prev))
    if obj.get("residual") is not None:
        layers = _desugar_residual(obj["residual"], f"{path}.residual", layers)

    seen: set[str] = set()
    for layer in layers:
        if layer.id in seen:
            raise ParseError(f"{path}.layers", f"duplicate layer id {layer.id!r}")
        seen.add(layer.id)

    pool = None
    if obj.get("pool") is not None:
        pool = _parse_pool_spec(obj["pool"], f"{path}.pool")
    pool_free = _as_bool(obj.get("pool_free", False), f"{path}.pool_free")
    if not layers and pool is None:
        raise ParseError(path, "block has no layers and no pool")
    return Block(layers=tuple(layers), pool=pool, pool_free=pool_free)


def _parse_classifier(obj: Any, path: str) -> ClassifierSpec:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    _expect_keys(obj, path, ("features",), ("relu_hidden",))
    raw = obj["features"]
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{path}.features", "expected non-empty list")
    features = tuple(_as_int(v, f"{path}.features[{i}]", 1) for i, v in enumerate(raw))
    return ClassifierSpec(features=features,
                          relu_hidden=_as_bool(obj.get("relu_hidden", True),
                                               f"{path}.relu_hidden"))


def _parse_lineage(obj: Any, path: str) -> Lineage:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    _expect_keys(obj, path, ("mode", "factors", "original"), ("shared_depth",))
    mode = _as_str(obj["mode"], f"{path}.mode")
    if mode not in TRANSFORM_MODES:
        raise ParseError(f"{path}.mode",
                         f"expected one of {TRANSFORM_MODES}, got {mode!r}")
    raw = obj["factors"]
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{path}.factors", "expected non-empty list")
    factors = tuple(_as_int(v, f"{path}.factors[{i}]", 1) for i, v in enumerate(raw))
    shared_depth = None
    if obj.get("shared_depth") is not None:
        shared_depth = _as_int(obj["shared_depth"], f"{path}.shared_depth", 0)
    original = _parse_arch_dict(obj["original"], f"{path}.original")
    if original.lineage is not None:
        raise ParseError(f"{path}.original", "original must not carry lineage")
    return Lineage(mode=mode, factors=factors, shared_depth=shared_depth,
                   original=original)


def _parse_arch_dict(obj: Any, path: str) -> Architecture:
    if not isinstance(obj, dict):
        raise ParseError(path, f"expected object, got {obj!r}")
    _expect_keys(obj, path, ("name", "input_shape", "blocks", "classifier"),
                 ("lineage",))
    name = _as_str(obj["name"], f"{path}.name")
    shape_raw = obj["input_shape"]
    if not isinstance(shape_raw, list) or len(shape_raw) != 3:
        raise ParseError(f"{path}.input_shape", "expected [channels, height, width]")
    input_shape = tuple(_as_int(v, f"{path}.input_shape[{i}]", 1)
                        for i, v in enumerate(shape_raw))
    blocks_raw = obj["blocks"]
    if not isinstance(blocks_raw, list) or not blocks_raw:
        raise ParseError(f"{path}.blocks", "expected non-empty list")
    blocks = tuple(_parse_block(b, f"{path}.blocks[{i}]")
                   for i, b in enumerate(blocks_raw))
    classifier = _parse_classifier(obj["classifier"], f"{path}.classifier")
    lineage = None
    if obj.get("lineage") is not None:
        lineage = _parse_lineage(obj["lineage"], f"{path}.lineage")
    return Architecture(name=name, input_shape=input_shape, blocks=blocks,
                        classifier=classifier, lineage=lineage)


def parse_architecture(document: str | dict) -> Architecture:
    """Parse and validate a JSON architecture document.

    Raises ParseError (with a path) on schema violations and
    ValidationError on semantic ones (bad refs, shape mismatches, ...).
    """
    if isinstance(document, str):
        try:
            obj = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"invalid JSON: {exc}") from exc
    else:
        obj = document
    arch = _parse_arch_dict(obj, "$")
    report = validate(arch)
    if not report.ok:
        first = report.issues[0]
        raise ValidationError(
            f"{first.path}: {first.message}"
            + (f" (+{len(report.issues) - 1} more issues)"
               if len(report.issues) > 1 else ""))
    return arch


# ---------------------------------------------------------------------------
# Serialization


def _layer_to_dict(layer: Layer) -> dict:
    out: dict[str, Any] = {
        "kind": layer.kind,
        "id": layer.id,
        "inputs": list(layer.inputs),
        "branch": layer.branch,
    }
    op = layer.op
    if isinstance(op, Conv):
        out.update(out_channels=op.out_channels, kernel=list(op.kernel),
                   stride=list(op.stride),
                   padding=op.padding if op.padding == "same" else list(op.padding),
                   groups=op.groups, bias=op.bias, fusion=op.fusion)
    elif isinstance(op, PoolLayer):
        out.update(mode=op.spec.mode, window=list(op.spec.window),
                   stride=list(op.spec.stride))
    elif isinstance(op, ChannelSlice):
        out.update(start=op.start, length=op.length)
    return out


def arch_to_dict(arch: Architecture) -> dict:
    doc: dict[str, Any] = {
        "name": arch.name,
        "input_shape": list(arch.input_shape),
        "blocks": [
            {
                "layers": [_layer_to_dict(l) for l in b.layers],
                "pool": None if b.pool is None else {
                    "mode": b.pool.mode,
                    "window": list(b.pool.window),
                    "stride": list(b.pool.stride),
                },
                "pool_free": b.pool_free,
            }
            for b in arch.blocks
        ],
        "classifier": {
            "features": list(arch.classifier.features),
            "relu_hidden": arch.classifier.relu_hidden,
        },
        "lineage": None,
    }
    if arch.lineage is not None:
        doc["lineage"] = {
            "mode": arch.lineage.mode,
            "factors": list(arch.lineage.factors),
            "shared_depth": arch.lineage.shared_depth,
            "original": arch_to_dict(arch.lineage.original),
        }
    return doc


def serialize_architecture(arch: Architecture) -> str:
    """Canonical JSON text: explicit ids/inputs, sorted keys, trailing newline."""
    return json.dumps(arch_to_dict(arch), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Validation


def validate(arch: Architecture) -> ValidationReport:
    """Collect structural issues; an empty report means the architecture is
    well-formed (refs resolve, factors divide, shapes agree end to end)."""
    report = ValidationReport()
    if not arch.blocks:
        report.add("$.blocks", "architecture has no blocks")
    for c, dim in zip("chw", arch.input_shape):
        if dim < 1:
            report.add("$.input_shape", f"non-positive {c} dimension")

    for bi, block in enumerate(arch.blocks):
        path = f"$.blocks[{bi}]"
        if block.pool is None and not block.pool_free:
            report.add(path, "block has no pool and is not marked pool_free")
        if block.pool is not None and block.pool_free:
            report.add(path, "pool_free block carries a pool")
        seen: dict[str, Layer] = {}
        for li, layer in enumerate(block.layers):
            lpath = f"{path}.layers[{li}]({layer.id})"
            if layer.id in seen:
                report.add(lpath, "duplicate layer id")
            for ref in layer.inputs:
                if ref != INPUT_REF and ref not in seen:
                    report.add(lpath, f"input ref {ref!r} does not name an "
                                      "earlier layer or the block input")
            seen[layer.id] = layer
            op = layer.op
            if isinstance(op, Conv):
                if op.out_channels % op.groups != 0:
                    report.add(lpath, "groups must divide out_channels")
                if op.padding == "same":
                    if op.stride != (1, 1):
                        report.add(lpath, "same padding requires stride 1")
                    if op.kernel[0] % 2 == 0 or op.kernel[1] % 2 == 0:
                        report.add(lpath, "same padding requires odd kernel")
            if isinstance(op, ChannelSlice) and op.length < 1:
                report.add(lpath, "slice length must be positive")

    if arch.classifier.features and min(arch.classifier.features) < 1:
        report.add("$.classifier.features", "non-positive feature count")

    if arch.lineage is not None:
        if arch.lineage.mode not in TRANSFORM_MODES:
            report.add("$.lineage.mode", f"unknown mode {arch.lineage.mode!r}")
        if arch.lineage.original.lineage is not None:
            report.add("$.lineage.original", "original must not carry lineage")

    if report.ok:
        from . import program
        try:
            program.lower(arch)
        except ValidationError as exc:
            report.add("$", str(exc))
    return report


def infer_shapes(arch: Architecture):
    """Per-layer input/output shapes; raises ValidationError on any mismatch.

    Returns a ``program.ShapeTable`` keyed by global layer uid ("b{i}.{id}").
    """
    from . import program
    return program.lower(arch).shape_table()


# ---------------------------------------------------------------------------
# Builtins


def conv_chain(*widths: int, in_channels: int = 3, size: int = 32,
               classes: int = 10) -> Architecture:
    """One conv/relu block per width, each max-pool terminated, dense head."""
    if not widths:
        raise ParseError("$", "conv_chain needs at least one block width")
    blocks = tuple(
        Block(layers=tuple(chain(Conv(w), Relu(), ids=["c0", "r0"])),
              pool=PoolSpec())
        for w in widths)
    return Architecture(
        name="conv_chain_" + "_".join(str(w) for w in widths),
        input_shape=(in_channels, size, size),
        blocks=blocks,
        classifier=ClassifierSpec(features=(classes,)),
    )


def two_layer_demo(l0: int, l1: int, l2: int, classes: int = 10,
                   size: int = 32) -> Architecture:
    """A single block of two 3x3 convs (l0 -> l1 -> l2), max pool, dense head."""
    layers = chain(Conv(l1), Relu(), Conv(l2), Relu(),
                   ids=["c0", "r0", "c1", "r1"])
    return Architecture(
        name=f"two_layer_demo_{l0}_{l1}_{l2}",
        input_shape=(l0, size, size),
        blocks=(Block(layers=tuple(layers), pool=PoolSpec()),),
        classifier=ClassifierSpec(features=(classes,)),
    )


def vgg16_cifar(classes: int = 10) -> Architecture:
    """13-conv VGG plan (64,64 / 128,128 / 256x3 / 512x3 / 512x3) on 32x32
    input, five max-pool block boundaries, 512-wide dense head."""
    plans = ((64, 64), (128, 128), (256, 256, 256),
             (512, 512, 512), (512, 512, 512))
    blocks = []
    for widths in plans:
        ops: list[LayerOp] = []
        ids: list[str] = []
        for i, w in enumerate(widths):
            ops += [Conv(w), Relu()]
            ids += [f"c{i}", f"r{i}"]
        blocks.append(Block(layers=tuple(chain(*ops, ids=ids)), pool=PoolSpec()))
    return Architecture(
        name="vgg16_cifar",
        input_shape=(3, 32, 32),
        blocks=tuple(blocks),
        classifier=ClassifierSpec(features=(512, classes)),
    )


def _basic_pair(width: int, project_first: bool) -> tuple[Layer, ...]:
    """Two residual units of the given width, shortcut entirely in-block."""
    layers: list[Layer] = [
        Layer("c0", Conv(width), (INPUT_REF,)),
        Layer("r0", Relu(), ("c0",)),
        Layer("c1", Conv(width), ("r0",)),
    ]
    if project_first:
        layers.append(Layer("p0", Conv(width, kernel=(1, 1), padding=(0, 0)),
                            (INPUT_REF,)))
        layers.append(Layer("a0", ResidualAdd(), ("c1", "p0")))
    else:
        layers.append(Layer("a0", ResidualAdd(), ("c1", INPUT_REF)))
    layers += [
        Layer("r1", Relu(), ("a0",)),
        Layer("c2", Conv(width), ("r1",)),
        Layer("r2", Relu(), ("c2",)),
        Layer("c3", Conv(width), ("r2",)),
        Layer("a1", ResidualAdd(), ("c3", "r1")),
        Layer("r3", Relu(), ("a1",)),
    ]
    return tuple(layers)


def resnet18_cifar(classes: int = 10) -> Architecture:
    """An 18-layer residual net arranged into five pool-terminated blocks:
    a 64-wide stem, then 64/128/256/512 stages of two residual units each.
    Downsampling happens at the block-boundary pools so that every block
    ends at a pooling boundary."""
    blocks = [Block(layers=tuple(chain(Conv(64), Relu(), ids=["c0", "r0"])),
                    pool=PoolSpec())]
    for width, project in ((64, False), (128, True), (256, True), (512, True)):
        blocks.append(Block(layers=_basic_pair(width, project), pool=PoolSpec()))
    return Architecture(
        name="resnet18_cifar",
        input_shape=(3, 32, 32),
        blocks=tuple(blocks),
        classifier=ClassifierSpec(features=(classes,)),
    )


def builtin_architectures() -> dict[str, Architecture]:
    return {
        "vgg16_cifar": vgg16_cifar(),
        "resnet18_cifar": resnet18_cifar(),
        "two_layer_demo": two_layer_demo(3, 64, 64),
        "conv_chain": conv_chain(48, 48, 48, 48, 48),
    }


def get_builtin(spec: str) -> Architecture:
    """Resolve ``name`` or ``name:arg1,...,key=val,...`` to a built-in
    architecture; positional arguments and values are integers."""
    name, _, argtext = spec.partition(":")
    factories = {"vgg16_cifar": vgg16_cifar, "resnet18_cifar": resnet18_cifar,
                 "two_layer_demo": two_layer_demo, "conv_chain": conv_chain}
    if name not in factories:
        raise ParseError("$", f"unknown builtin architecture {name!r}")
    args, kwargs = [], {}
    for token in argtext.split(",") if argtext else []:
        try:
            if "=" in token:
                key, _, val = token.partition("=")
                kwargs[key.strip()] = int(val)
            else:
                args.append(int(token))
        except ValueError as exc:
            raise ParseError("$", f"builtin argument {token!r} is not an "
                                  f"integer") from exc
    if name == "two_layer_demo" and not args:
        args = [3, 64, 64]
    if name == "conv_chain" and not args:
        args = [48] * 5
    try:
        return factories[name](*args, **kwargs)
    except TypeError as exc:
        raise ParseError("$", f"bad builtin arguments {argtext!r}: {exc}") from exc


def load_architecture(source: str) -> Architecture:
    """Load from a file path, or from ``builtin:<name>[:args]``."""
    if source.startswith("builtin:"):
        return get_builtin(source[len("builtin:"):])
    try:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(source, str(exc)) from exc
    return parse_architecture(text)
