import numpy as np
import pytest

from splitforge.data import (RECORD_BYTES, load_cifar10_binary,
                             quadrant_energy_heuristic, save_cifar10_binary,
                             split_train_test, synth_quadrant_dataset)
from splitforge.errors import BadLength, EmptySplit, LabelOutOfRange


def test_cifar_roundtrip_is_bit_exact(tmp_path, rng):
    raw = rng.integers(0, 256, size=(20, 3, 32, 32), dtype=np.uint8)
    x = raw.astype(np.float32) / 255.0
    y = rng.integers(0, 10, size=20).astype(np.int64)
    path = str(tmp_path / "batch.bin")
    save_cifar10_binary(path, x, y)
    assert (tmp_path / "batch.bin").stat().st_size == 20 * RECORD_BYTES
    x2, y2 = load_cifar10_binary(path)
    assert np.array_equal(y2, y)
    assert np.array_equal((x2 * 255).round().astype(np.uint8), raw)
    # save -> load -> save reproduces the file byte for byte
    path2 = str(tmp_path / "again.bin")
    save_cifar10_binary(path2, x2, y2)
    assert (tmp_path / "batch.bin").read_bytes() == \
        (tmp_path / "again.bin").read_bytes()


def test_load_rejects_truncated_file(tmp_path):
    path = tmp_path / "torn.bin"
    path.write_bytes(b"\x00" * (RECORD_BYTES + 1))
    with pytest.raises(BadLength):
        load_cifar10_binary(str(path))


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(BadLength):
        load_cifar10_binary(str(path))


def test_load_reports_first_bad_label(tmp_path):
    good = bytes([3]) + b"\x10" * 3072
    bad = bytes([11]) + b"\x10" * 3072
    path = tmp_path / "labels.bin"
    path.write_bytes(good + good + bad + good)
    with pytest.raises(LabelOutOfRange) as exc:
        load_cifar10_binary(str(path))
    assert exc.value.record == 2
    assert exc.value.label == 11


def test_save_validates_inputs(tmp_path, rng):
    x = rng.random((4, 3, 32, 32)).astype(np.float32)
    with pytest.raises(LabelOutOfRange):
        save_cifar10_binary(str(tmp_path / "o.bin"), x, np.array([0, 1, 2, 10]))
    with pytest.raises(BadLength):
        save_cifar10_binary(str(tmp_path / "o.bin"), x[:, :, :16], np.zeros(4))


def test_synth_shapes_balance_and_determinism():
    x, y = synth_quadrant_dataset(n=80, size=16, seed=5)
    assert x.shape == (80, 3, 16, 16) and x.dtype == np.float32
    assert y.shape == (80,)
    assert [int((y == q).sum()) for q in range(4)] == [20, 20, 20, 20]
    x2, y2 = synth_quadrant_dataset(n=80, size=16, seed=5)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    x3, _ = synth_quadrant_dataset(n=80, size=16, seed=6)
    assert not np.array_equal(x, x3)


def test_synth_labels_are_shuffled():
    _, y = synth_quadrant_dataset(n=80, size=16, seed=0)
    assert not np.array_equal(y, np.sort(y))


def test_synth_validates_arguments():
    with pytest.raises(ValueError):
        synth_quadrant_dataset(n=81)
    with pytest.raises(ValueError):
        synth_quadrant_dataset(n=80, size=10)


def test_heuristic_reads_back_the_quadrant():
    x, y = synth_quadrant_dataset(n=400, size=16, seed=1, noise=0.1)
    guess = quadrant_energy_heuristic(x)
    assert (guess == y).mean() >= 0.99


def test_heuristic_on_clean_single_image():
    x = np.zeros((1, 3, 16, 16), dtype=np.float32)
    x[0, :, 9:13, 2:6] = 1.0          # bottom-left quadrant
    assert quadrant_energy_heuristic(x)[0] == 2


def test_split_is_stratified_and_disjoint():
    x, y = synth_quadrant_dataset(n=200, size=16, seed=2)
    (xtr, ytr), (xte, yte) = split_train_test(x, y, test_fraction=0.25, seed=0)
    # 50 per class, round(0.25 * 50) = 12 held out from each
    assert len(ytr) == 152 and len(yte) == 48
    for q in range(4):
        assert int((yte == q).sum()) == 12
    # together they are a permutation of the input
    joined = np.concatenate([xtr, xte]).sum(axis=(1, 2, 3))
    assert np.isclose(np.sort(joined).sum(), x.sum(axis=(1, 2, 3)).sum())


def test_split_per_class_rounding():
    x, y = synth_quadrant_dataset(n=80, size=16, seed=3)
    (_, ytr), (_, yte) = split_train_test(x, y, test_fraction=0.25, seed=1)
    assert [int((yte == q).sum()) for q in range(4)] == [5, 5, 5, 5]
    assert [int((ytr == q).sum()) for q in range(4)] == [15, 15, 15, 15]


def test_split_rejects_degenerate_fractions():
    x, y = synth_quadrant_dataset(n=8, size=8, seed=0)
    with pytest.raises(EmptySplit):
        split_train_test(x, y, test_fraction=0.999)
    with pytest.raises(EmptySplit):
        split_train_test(x, y, test_fraction=0.001)


def test_split_is_seed_deterministic():
    x, y = synth_quadrant_dataset(n=80, size=16, seed=4)
    a = split_train_test(x, y, test_fraction=0.25, seed=7)
    b = split_train_test(x, y, test_fraction=0.25, seed=7)
    assert np.array_equal(a[0][1], b[0][1])
    assert np.array_equal(a[1][0], b[1][0])
