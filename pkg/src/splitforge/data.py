"""Dataset I/O and synthesis.

CIFAR-10 binary batches use the classic record layout: one label byte
followed by 3072 image bytes (three 32x32 channel planes, row-major).
Loading maps pixels to float32 in [0, 1]; saving inverts that exactly, so a
load/save/load round-trip is bit-identical.

``synth_quadrant_dataset`` builds a small classification problem — a bright
patch dropped into one of four image quadrants over Gaussian noise — that a
tiny CNN learns in a few hundred SGD epochs.  ``quadrant_energy_heuristic``
labels such images without any learning (smooth, sum per quadrant, argmax)
and serves as a sanity bound for trained models.
"""

from __future__ import annotations

import numpy as np

from .errors import BadLength, EmptySplit, LabelOutOfRange

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)


def load_cifar10_binary(path: str):
    """Read one binary batch; returns (x float32 (N,3,32,32) in [0,1], y int64)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % RECORD_BYTES != 0:
        raise BadLength(
            f"{path}: {len(blob)} bytes is not a whole number of "
            f"{RECORD_BYTES}-byte records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise LabelOutOfRange(int(bad[0]), int(labels[bad[0]]))
    images = raw[:, 1:].reshape(-1, *IMAGE_SHAPE).astype(np.float32) / 255.0
    return images, labels


def save_cifar10_binary(path: str, x: np.ndarray, y: np.ndarray) -> None:
    """Inverse of :func:`load_cifar10_binary` (bit-exact round trip)."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[1:] != IMAGE_SHAPE:
        raise BadLength(f"images must be (N, 3, 32, 32), got {x.shape}")
    if x.shape[0] != y.shape[0]:
        raise BadLength(f"{x.shape[0]} images but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() > 9):
        bad = int(np.nonzero((y < 0) | (y > 9))[0][0])
        raise LabelOutOfRange(bad, int(y[bad]))
    pixels = np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    records = np.empty((x.shape[0], RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = y
    records[:, 1:] = pixels.reshape(x.shape[0], -1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def synth_quadrant_dataset(n: int = 800, size: int = 16, seed: int = 0,
                           noise: float = 0.1):
    """Quadrant-location task: label q in {0: top-left, 1: top-right,
    2: bottom-left, 3: bottom-right} marks which quadrant holds a bright
    square patch; the rest of the image is N(0, noise^2).  Classes are
    exactly balanced, order shuffled."""
    if n % 4 != 0:
        raise ValueError(f"n={n} must be divisible by 4 for exact balance")
    if size % 4 != 0:
        raise ValueError(f"size={size} must be divisible by 4")
    rng = np.random.Generator(np.random.PCG64(seed))
    half, patch = size // 2, size // 4
    x = (noise * rng.standard_normal((n, 3, size, size))).astype(np.float32)
    y = np.arange(n) % 4
    for i in range(n):
        q = y[i]
        r0 = (q // 2) * half + rng.integers(0, half - patch + 1)
        c0 = (q % 2) * half + rng.integers(0, half - patch + 1)
        amp = rng.uniform(0.8, 1.2)
        x[i, :, r0:r0 + patch, c0:c0 + patch] += amp
    order = rng.permutation(n)
    return x[order], y[order].astype(np.int64)


def quadrant_energy_heuristic(x: np.ndarray) -> np.ndarray:
    """Label quadrant images without learning: 3x3 mean filter over the
    channel-averaged image, then argmax of per-quadrant energy."""
    x = np.asarray(x)
    gray = x.mean(axis=1)
    win = np.lib.stride_tricks.sliding_window_view(gray, (3, 3), axis=(1, 2))
    smooth = win.mean(axis=(-2, -1))  # (n, size-2, size-2)
    n, sh, sw = smooth.shape
    # a smoothed pixel (i, j) is centered on original pixel (i+1, j+1)
    rows = np.arange(sh) + 1
    cols = np.arange(sw) + 1
    top = rows < (sh + 2) / 2
    left = cols < (sw + 2) / 2
    quads = np.empty((n, 4), dtype=smooth.dtype)
    quads[:, 0] = smooth[:, top][:, :, left].sum(axis=(1, 2))
    quads[:, 1] = smooth[:, top][:, :, ~left].sum(axis=(1, 2))
    quads[:, 2] = smooth[:, ~top][:, :, left].sum(axis=(1, 2))
    quads[:, 3] = smooth[:, ~top][:, :, ~left].sum(axis=(1, 2))
    return quads.argmax(axis=1).astype(np.int64)


def split_train_test(x: np.ndarray, y: np.ndarray, test_fraction: float = 0.25,
                     seed: int = 0):
    """Stratified split; returns ((x_train, y_train), (x_test, y_test))."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for cls in np.unique(y):
        members = np.nonzero(y == cls)[0]
        members = members[rng.permutation(members.size)]
        k = int(round(test_fraction * members.size))
        test_idx.append(members[:k])
        train_idx.append(members[k:])
    tr = np.concatenate(train_idx) if train_idx else np.empty(0, dtype=int)
    te = np.concatenate(test_idx) if test_idx else np.empty(0, dtype=int)
    if tr.size == 0 or te.size == 0:
        raise EmptySplit(
            f"test_fraction={test_fraction} leaves an empty side "
            f"(train={tr.size}, test={te.size})")
    tr = tr[rng.permutation(tr.size)]
    te = te[rng.permutation(te.size)]
    return (x[tr], y[tr]), (x[te], y[te])
