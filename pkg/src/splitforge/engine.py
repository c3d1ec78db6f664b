"""Minimal numpy execution engine for architectures produced by this package.

Forward/backward cover: conv (stride, padding, groups), relu, max/avg pool,
channel slice, concat, residual add, flatten, dense, and softmax
cross-entropy.  Convolutions use strided window views plus einsum; backward
passes are exact (no approximations), which the gradient-check oracle
verifies against finite differences.

Weights live in a :class:`WeightStore` keyed ``{op_uid}.w`` / ``{op_uid}.b``
and serialize to a small binary container (little-endian, float32 payload).

Training is plain SGD over shuffled minibatches, deterministic for a fixed
seed.  Precision is configurable: float32 for training, float64 for the
numeric oracles.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass

import numpy as np

from . import program
from .arch import Architecture
from .errors import DivergedLoss, ParseError, ShapeMismatch
from .program import OpNode, resolve_padding

_MAGIC = b"SFWS"
_VERSION = 1


# ---------------------------------------------------------------------------
# Weight store


class WeightStore:
    """Ordered name -> ndarray map with a binary file format."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self.tensors: dict[str, np.ndarray] = dict(tensors or {})

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __setitem__(self, key: str, value: np.ndarray) -> None:
        self.tensors[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def keys(self):
        return self.tensors.keys()

    def items(self):
        return self.tensors.items()

    def get(self, key: str, default=None):
        return self.tensors.get(key, default)

    @property
    def total_elements(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    @property
    def nonzero_elements(self) -> int:
        return sum(int(np.count_nonzero(a)) for a in self.tensors.values())

    def clone(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({k: v.astype(dtype) for k, v in self.tensors.items()})

    def save(self, path: str) -> None:
        """Container layout: magic, u32 version, u32 tensor count, then per
        tensor: u32 id length, utf-8 id, u64 rank, u64 dims, float32 LE data."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _VERSION, len(self.tensors)))
            for key, arr in self.tensors.items():
                raw = key.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<Q", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str) -> "WeightStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC:
            raise ParseError(path, "not a weight store (bad magic)")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != _VERSION:
            raise ParseError(path, f"unsupported weight store version {version}")
        offset = 12
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            key = blob[offset:offset + id_len].decode("utf-8")
            offset += id_len
            (rank,) = struct.unpack_from("<Q", blob, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", blob, offset)
            offset += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            tensors[key] = arr.reshape(shape).astype(np.float32)
        if offset != len(blob):
            raise ParseError(path, f"{len(blob) - offset} trailing bytes")
        return cls(tensors)


# ---------------------------------------------------------------------------
# Initialization


def init_weights(arch: Architecture, seed: int = 0,
                 dtype=np.float32) -> WeightStore:
    """Fan-in-scaled uniform init, U(-a, a) with a = sqrt(3/fan_in), so the
    per-kernel std targets 1/sqrt(fan_in).  Fusion 1x1 convs start near the
    channel pass-through map (identity plus small noise), which keeps a
    freshly fused network close to its original behavior."""
    rng = np.random.Generator(np.random.PCG64(seed))
    store = WeightStore()
    for op in program.lower(arch).weight_ops():
        if op.kind == "conv":
            conv = op.conv
            in_c = op.in_shapes[0][0]
            shape = (conv.out_channels, in_c // conv.groups, *conv.kernel)
            fan_in = shape[1] * shape[2] * shape[3]
            a = np.sqrt(3.0 / fan_in)
            w = rng.uniform(-a, a, size=shape)
            if conv.fusion and conv.out_channels == in_c:
                w = 0.1 * w + np.eye(conv.out_channels).reshape(
                    conv.out_channels, in_c, 1, 1)
            store[f"{op.uid}.w"] = w.astype(dtype)
            if conv.bias:
                store[f"{op.uid}.b"] = np.zeros(conv.out_channels, dtype=dtype)
        else:
            in_f = op.in_shapes[0][0]
            a = np.sqrt(3.0 / in_f)
            store[f"{op.uid}.w"] = rng.uniform(
                -a, a, size=(op.dense_features, in_f)).astype(dtype)
            store[f"{op.uid}.b"] = np.zeros(op.dense_features, dtype=dtype)
    return store


_BR0 = re.compile(r"(^|\.)br0\.")


def adapt_weights(arch: Architecture, warm: WeightStore, seed: int = 0,
                  dtype=np.float32) -> WeightStore:
    """Warm-start: layers whose name and shape carry over are copied
    (a freshly attached single-branch block matches its unsplit source via
    the ``br0.`` prefix); new or resized layers re-initialize."""
    fresh = init_weights(arch, seed=seed, dtype=dtype)
    norm_index = {_BR0.sub(r"\1", key): key for key in warm.keys()}
    out = WeightStore()
    for key, arr in fresh.items():
        src = None
        if key in warm:
            src = warm[key]
        else:
            alt = norm_index.get(_BR0.sub(r"\1", key))
            if alt is not None:
                src = warm[alt]
        if src is not None and src.shape == arr.shape:
            out[key] = src.astype(dtype).copy()
        else:
            out[key] = arr
    return out


# ---------------------------------------------------------------------------
# Kernels


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
             oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, oh, ow, kh, kw),
        (s[0], s[1], s[2] * sh, s[3] * sw, s[2], s[3]), writeable=False)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                  op: OpNode) -> np.ndarray:
    conv = op.conv
    ph, pw = resolve_padding(conv)
    sh, sw = conv.stride
    kh, kw = conv.kernel
    out_c, oh, ow = op.out_shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = _windows(xp, kh, kw, sh, sw, oh, ow)
    g = conv.groups
    icg = x.shape[1] // g
    ocg = out_c // g
    wing = win.reshape(x.shape[0], g, icg, oh, ow, kh, kw)
    wg = w.reshape(g, ocg, icg, kh, kw)
    out = np.einsum("ngihwkl,goikl->ngohw", wing, wg, optimize=True)
    out = out.reshape(x.shape[0], out_c, oh, ow)
    if b is not None:
        out = out + b[:, None, None]
    return out


def _scatter_windows(dwin: np.ndarray, in_shape: tuple[int, int, int, int],
                     kh: int, kw: int, sh: int, sw: int,
                     ph: int, pw: int) -> np.ndarray:
    """Accumulate per-window grads (n, c, oh, ow, kh, kw) back onto the input."""
    n, c, h, w = in_shape
    oh, ow = dwin.shape[2], dwin.shape[3]
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += dwin[:, :, :, :, i, j]
    return dxp[:, :, ph:ph + h, pw:pw + w] if ph or pw else dxp


def _conv_backward(x: np.ndarray, w: np.ndarray, op: OpNode,
                   dout: np.ndarray):
    conv = op.conv
    ph, pw = resolve_padding(conv)
    sh, sw = conv.stride
    kh, kw = conv.kernel
    out_c, oh, ow = op.out_shape
    n, c = x.shape[:2]
    g = conv.groups
    icg, ocg = c // g, out_c // g
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = _windows(xp, kh, kw, sh, sw, oh, ow)
    wing = win.reshape(n, g, icg, oh, ow, kh, kw)
    wg = w.reshape(g, ocg, icg, kh, kw)
    doutg = dout.reshape(n, g, ocg, oh, ow)
    dw = np.einsum("ngihwkl,ngohw->goikl", wing, doutg, optimize=True)
    dw = dw.reshape(out_c, icg, kh, kw)
    dwin = np.einsum("goikl,ngohw->ngihwkl", wg, doutg, optimize=True)
    dwin = dwin.reshape(n, c, oh, ow, kh, kw)
    dx = _scatter_windows(dwin, x.shape, kh, kw, sh, sw, ph, pw)
    db = dout.sum(axis=(0, 2, 3)) if conv.bias else None
    return dx, dw, db


def _pool_forward(x: np.ndarray, op: OpNode) -> np.ndarray:
    spec = op.pool
    wh, ww = spec.window
    sh, sw = spec.stride
    _, oh, ow = op.out_shape
    win = _windows(x, wh, ww, sh, sw, oh, ow)
    if spec.mode == "max":
        return win.max(axis=(-2, -1))
    return win.mean(axis=(-2, -1))


def _pool_backward(x: np.ndarray, op: OpNode, dout: np.ndarray) -> np.ndarray:
    spec = op.pool
    wh, ww = spec.window
    sh, sw = spec.stride
    _, oh, ow = op.out_shape
    n, c = x.shape[:2]
    if spec.mode == "max":
        win = _windows(x, wh, ww, sh, sw, oh, ow)
        flat = win.reshape(n, c, oh, ow, wh * ww)
        idx = flat.argmax(axis=-1)  # ties route to the first maximum
        onehot = idx[..., None] == np.arange(wh * ww)
        dwin = (onehot * dout[..., None]).reshape(n, c, oh, ow, wh, ww)
    else:
        scale = dout / (wh * ww)
        dwin = np.broadcast_to(scale[..., None, None],
                               (n, c, oh, ow, wh, ww)).astype(dout.dtype)
    return _scatter_windows(dwin, x.shape, wh, ww, sh, sw, 0, 0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())
    p = np.exp(logp)
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


# ---------------------------------------------------------------------------
# Graph execution


def _check_input(arch: Architecture, x: np.ndarray) -> None:
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(arch.input_shape):
        raise ShapeMismatch(
            f"input {tuple(x.shape)} does not match (N, {arch.input_shape[0]}, "
            f"{arch.input_shape[1]}, {arch.input_shape[2]})")


def _run(ordered, weights: WeightStore, x: np.ndarray) -> dict[str, np.ndarray]:
    values: dict[str, np.ndarray] = {}
    for op in ordered:
        if op.kind == "input":
            values[op.uid] = x
        elif op.kind == "conv":
            values[op.uid] = _conv_forward(
                values[op.inputs[0]], weights[f"{op.uid}.w"],
                weights.get(f"{op.uid}.b"), op)
        elif op.kind == "relu":
            values[op.uid] = np.maximum(values[op.inputs[0]], 0)
        elif op.kind == "pool":
            values[op.uid] = _pool_forward(values[op.inputs[0]], op)
        elif op.kind == "concat":
            values[op.uid] = np.concatenate(
                [values[i] for i in op.inputs], axis=1)
        elif op.kind == "slice":
            lo = op.slice_start
            values[op.uid] = values[op.inputs[0]][:, lo:lo + op.out_shape[0]]
        elif op.kind == "add":
            values[op.uid] = values[op.inputs[0]] + values[op.inputs[1]]
        elif op.kind == "flatten":
            values[op.uid] = values[op.inputs[0]].reshape(x.shape[0], -1)
        elif op.kind == "dense":
            w = weights[f"{op.uid}.w"]
            b = weights[f"{op.uid}.b"]
            values[op.uid] = values[op.inputs[0]] @ w.T + b
    return values


def forward(arch: Architecture, weights: WeightStore, x: np.ndarray):
    """Run the net (branches in branch_sequential order) and return
    ``(logits, trace)`` where trace maps op uid -> activation."""
    _check_input(arch, x)
    prog = program.lower(arch)
    values = _run(program.schedule(prog, "branch_sequential"), weights, x)
    return values[prog.logits_uid], values


def loss_and_grads(arch: Architecture, weights: WeightStore, x: np.ndarray,
                   labels: np.ndarray):
    """Forward + backward; returns (loss, grads keyed like the weights)."""
    _check_input(arch, x)
    prog = program.lower(arch)
    ordered = program.schedule(prog, "branch_sequential")
    values = _run(ordered, weights, x)
    logits = values[prog.logits_uid]
    loss, dlogits = softmax_cross_entropy(logits, labels)
    dvalues: dict[str, np.ndarray] = {prog.logits_uid: dlogits}
    grads: dict[str, np.ndarray] = {}

    def push(uid: str, g: np.ndarray) -> None:
        if uid in dvalues:
            dvalues[uid] = dvalues[uid] + g
        else:
            dvalues[uid] = g

    for op in reversed(ordered):
        g = dvalues.pop(op.uid, None)
        if g is None or op.kind == "input":
            continue
        if op.kind == "conv":
            dx, dw, db = _conv_backward(values[op.inputs[0]],
                                        weights[f"{op.uid}.w"], op, g)
            grads[f"{op.uid}.w"] = dw
            if db is not None:
                grads[f"{op.uid}.b"] = db
            push(op.inputs[0], dx)
        elif op.kind == "relu":
            push(op.inputs[0], g * (values[op.inputs[0]] > 0))
        elif op.kind == "pool":
            push(op.inputs[0], _pool_backward(values[op.inputs[0]], op, g))
        elif op.kind == "concat":
            lo = 0
            for inp, shape in zip(op.inputs, op.in_shapes):
                push(inp, g[:, lo:lo + shape[0]])
                lo += shape[0]
        elif op.kind == "slice":
            full = np.zeros_like(values[op.inputs[0]])
            full[:, op.slice_start:op.slice_start + op.out_shape[0]] = g
            push(op.inputs[0], full)
        elif op.kind == "add":
            push(op.inputs[0], g)
            push(op.inputs[1], g)
        elif op.kind == "flatten":
            push(op.inputs[0], g.reshape((-1,) + op.in_shapes[0]))
        elif op.kind == "dense":
            w = weights[f"{op.uid}.w"]
            grads[f"{op.uid}.w"] = g.T @ values[op.inputs[0]]
            grads[f"{op.uid}.b"] = g.sum(axis=0)
            push(op.inputs[0], g @ w)
    return loss, grads


def loss_value(arch: Architecture, weights: WeightStore, x: np.ndarray,
               labels: np.ndarray) -> float:
    logits, _ = forward(arch, weights, x)
    return softmax_cross_entropy(logits, labels)[0]


def evaluate(arch: Architecture, weights: WeightStore, x: np.ndarray,
             labels: np.ndarray, batch_size: int = 256) -> float:
    """Top-1 accuracy, independent of example order and batching."""
    hits = 0
    for lo in range(0, x.shape[0], batch_size):
        logits, _ = forward(arch, weights, x[lo:lo + batch_size])
        hits += int((logits.argmax(axis=1) == labels[lo:lo + batch_size]).sum())
    return hits / x.shape[0]


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    seed: int = 0
    fine_tune_epochs: int = 10


@dataclass
class EpochStats:
    epoch: int
    train_acc: float
    test_acc: float | None
    loss: float


def train(arch: Architecture, data, config: TrainConfig,
          warm_start: WeightStore | None = None, eval_data=None,
          epochs: int | None = None):
    """Plain SGD.  Deterministic for a fixed seed; raises DivergedLoss on a
    non-finite loss.  Returns (weights, per-epoch history)."""
    x, y = data
    x = np.ascontiguousarray(x, dtype=np.float32)
    y = np.asarray(y)
    if warm_start is not None:
        weights = adapt_weights(arch, warm_start, seed=config.seed)
    else:
        weights = init_weights(arch, seed=config.seed)
    n_epochs = config.epochs if epochs is None else epochs
    rng = np.random.Generator(np.random.PCG64(config.seed))
    history: list[EpochStats] = []
    for epoch in range(n_epochs):
        order = rng.permutation(x.shape[0])
        total_loss = 0.0
        for lo in range(0, x.shape[0], config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grads = loss_and_grads(arch, weights, x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(epoch, loss)
            total_loss += loss * len(idx)
            for key, g in grads.items():
                weights[key] -= (config.lr * g).astype(weights[key].dtype)
        train_acc = evaluate(arch, weights, x, y)
        test_acc = (evaluate(arch, weights, eval_data[0], eval_data[1])
                    if eval_data is not None else None)
        history.append(EpochStats(epoch=epoch, train_acc=train_acc,
                                  test_acc=test_acc,
                                  loss=total_loss / x.shape[0]))
    return weights, history
