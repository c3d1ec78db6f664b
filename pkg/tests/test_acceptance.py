"""Top-level acceptance suite: one test per shipping criterion (a1..a9).

Each test re-derives its expected values independently (closed forms against
brute-force enumeration, hand-traced peaks, replayed search traces) rather
than trusting the library's own arithmetic, and asserts the tolerance and
runtime budget it must meet.  Run with ``pytest -v tests/test_acceptance.py``
for a one-line verdict per criterion.
"""

import json
import time

import numpy as np
import pytest

from splitforge import arch as A
from splitforge import engine as E
from splitforge.arch import (parse_architecture, serialize_architecture,
                             two_layer_demo)
from splitforge.cost import (params_closed_form_original,
                             params_closed_form_split, peak_memory,
                             sweep_params)
from splitforge.data import (load_cifar10_binary, save_cifar10_binary,
                             split_train_test, synth_quadrant_dataset)
from splitforge.engine import TrainConfig, WeightStore, init_weights, train
from splitforge.oracle import (check_equivalence, embed_block_diagonal,
                               finite_diff_check)
from splitforge.program import lower
from splitforge.search import (InternalEvaluator, SearchConfig,
                               TableMockEvaluator, greedy_split_search)
from splitforge.transform import (SplitPlan, fused_baseline, ideal_split,
                                  split_transform)

from conftest import BLOCK_ACCURACY_TABLE, make_allkinds_arch, make_chain_arch


def conv_weight_elements(arch) -> int:
    """Brute-force conv parameter count: walk the lowered program and add up
    kernel (and bias) slots one op at a time."""
    total = 0
    for op in lower(arch).weight_ops():
        if op.kind != "conv":
            continue
        c = op.conv
        total += c.out_channels * (op.in_shapes[0][0] // c.groups) * \
            c.kernel[0] * c.kernel[1]
        if c.bias:
            total += c.out_channels
    return total


# -- a1: closed-form parameter counts are exact -------------------------------


def test_a1_closed_forms_match_brute_force_enumeration():
    t0 = time.perf_counter()

    # reference trio for the (3, 64, 64) two-layer head, each value verified
    # against enumeration of the actually-constructed network
    assert params_closed_form_original(3, 64, 64) == 38592
    assert conv_weight_elements(two_layer_demo(3, 64, 64)) == 38592
    for k1, want in {2: 20160, 4: 10944, 8: 6336}.items():
        assert params_closed_form_split(3, 64, 64, k1, k1) == want
        split = ideal_split(two_layer_demo(3, 64, 64), k1, k1)
        assert conv_weight_elements(split) == want

    # 200 randomized shapes: closed form == enumeration, exactly
    rng = np.random.Generator(np.random.PCG64(42))
    for _ in range(200):
        l0 = int(rng.integers(1, 9))
        l1 = int(rng.integers(1, 9)) * 4
        l2 = int(rng.integers(1, 9)) * 4
        org = two_layer_demo(l0, l1, l2, classes=3, size=8)
        assert params_closed_form_original(l0, l1, l2) == \
            conv_weight_elements(org)
        k1 = int(rng.choice([1, 2, 4]))
        k2 = int(rng.choice([k for k in (1, 2, 4) if k >= k1]))
        split = ideal_split(org, k1, k2)
        assert params_closed_form_split(l0, l1, l2, k1, k2) == \
            conv_weight_elements(split)

    assert time.perf_counter() - t0 < 1.0


# -- a2: split parameter count is independent of k2 ---------------------------


def test_a2_split_params_depend_only_on_k1():
    t0 = time.perf_counter()
    grid = sweep_params(3, 64, 64, (1, 2, 4, 8))
    by_k1: dict[int, set[int]] = {}
    for cell in grid.cells:
        assert cell.params_split is not None
        by_k1.setdefault(cell.k1, set()).add(cell.params_split)
    # each k1 row collapses to a single value ...
    assert all(len(vals) == 1 for vals in by_k1.values())
    # ... and the rows themselves differ (strictly shrinking with k1)
    row = [by_k1[k1].pop() for k1 in (1, 2, 4, 8)]
    assert row == sorted(row, reverse=True) and len(set(row)) == 4
    assert time.perf_counter() - t0 < 1.0


# -- a3: block-diagonal embedding is numerically equivalent -------------------


def _random_proposed_case(rng, trial):
    n_blocks = int(rng.integers(1, 4))
    widths = [int(rng.integers(1, 5)) * 4 for _ in range(n_blocks)]
    arch = make_chain_arch(widths, size=8, classes=3, name=f"p{trial}")
    factors = tuple(int(rng.choice([k for k in (1, 2, 4) if w % k == 0]))
                    for w in widths)
    return split_transform(arch, SplitPlan("proposed", factors))


def _random_ideal_case(rng, trial):
    l0 = int(rng.integers(1, 5))
    l1 = int(rng.integers(1, 5)) * 4
    l2 = int(rng.integers(1, 5)) * 4
    arch = two_layer_demo(l0, l1, l2, classes=3, size=8)
    k1 = int(rng.choice([k for k in (1, 2, 4) if l1 % k == 0]))
    k2 = int(rng.choice([k for k in (1, 2, 4) if l2 % k == 0 and k >= k1]))
    return ideal_split(arch, k1, k2)


def test_a3_embedding_equivalence_hundred_trials_per_mode():
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(99))
    worst64 = worst32 = 0.0
    for make_case in (_random_proposed_case, _random_ideal_case):
        for trial in range(100):
            split = make_case(rng, trial)
            weights = init_weights(split, seed=trial)
            baseline, base_weights, _ = embed_block_diagonal(split, weights)
            r64 = check_equivalence(split, weights, baseline, base_weights,
                                    trials=1, seed=trial, dtype=np.float64)
            r32 = check_equivalence(split, weights, baseline, base_weights,
                                    trials=1, seed=trial, dtype=np.float32)
            worst64 = max(worst64, r64.max_abs_diff)
            worst32 = max(worst32, r32.max_abs_diff)
    assert worst64 <= 1e-10, f"float64 worst |logit diff| {worst64}"
    assert worst32 <= 1e-5, f"float32 worst |logit diff| {worst32}"
    assert time.perf_counter() - t0 < 60.0


# -- a4: analytic gradients agree with finite differences ---------------------


def test_a4_finite_difference_gradients_every_layer_kind():
    t0 = time.perf_counter()
    # one architecture exercising every op kind directly ...
    kinds = finite_diff_check(make_allkinds_arch(), n_weights=200,
                              seed=0, eps=1e-5)
    assert kinds.checked >= 200
    assert kinds.worst_rel_err <= 1e-4, kinds
    # ... and one produced by the split transform (slice/concat/fusion as
    # actually emitted)
    split = split_transform(make_chain_arch([8, 8], size=8, name="a4"),
                            SplitPlan("proposed", (2, 4)))
    emitted = finite_diff_check(split, n_weights=120, seed=1, eps=1e-5)
    assert emitted.worst_rel_err <= 1e-4, emitted
    assert time.perf_counter() - t0 < 120.0


# -- a5: recorded-accuracy search replay --------------------------------------


def test_a5_search_replay_against_recorded_block_accuracies(ladder48):
    t0 = time.perf_counter()
    evaluator = TableMockEvaluator(BLOCK_ACCURACY_TABLE)
    result = greedy_split_search(ladder48, evaluator,
                                 SearchConfig(threshold=0.5))
    assert result.factors == (8, 8, 2, 6, 8)

    # hand arithmetic: block 3 at factor 4 drops 93.38 -> 92.78, i.e. 0.60
    # percentage points >= 0.5, so the trace must record a rejection there
    rec = next(r for r in result.records if r.block == 3 and r.factor == 4)
    assert rec.delta_pp == pytest.approx(93.38 - 92.78, abs=1e-9)
    assert rec.delta_pp >= 0.5 and rec.decision == "reject"

    # evaluation budget: at most B * (|ladder| + 1) oracle calls
    bound = len(ladder48.blocks) * (len(SearchConfig().ladder) + 1)
    assert result.evaluations == len(evaluator.queries) <= bound
    assert time.perf_counter() - t0 < 1.0


# -- a6: the synthetic task is learnable before and after splitting -----------


def test_a6_quadrant_task_trains_and_internal_search_completes():
    t0 = time.perf_counter()
    x, y = synth_quadrant_dataset(n=800, size=16, seed=7)
    train_data, test_data = split_train_test(x, y, test_fraction=0.25, seed=7)

    base = make_chain_arch([8, 16], size=16, classes=4, name="quad")
    split = split_transform(base, SplitPlan("proposed", (2, 2)))
    config = TrainConfig(epochs=12, batch_size=32, lr=0.05, seed=3)
    for net in (base, split):
        _, history = train(net, train_data, config)
        best = max(h.train_acc for h in history)
        assert best >= 0.90, f"{net.name}: best train acc {best:.3f}"

    evaluator = InternalEvaluator(
        train_data, test_data,
        TrainConfig(epochs=4, batch_size=32, lr=0.05, seed=3,
                    fine_tune_epochs=2))
    result = greedy_split_search(base, evaluator,
                                 SearchConfig(ladder=(2, 4, 8)))
    assert len(result.factors) == len(base.blocks)
    assert all(f in (1, 2, 4, 8) for f in result.factors)
    assert 0.0 <= result.accuracy <= 1.0
    # the emitted plan must actually apply to the architecture it came from
    split_transform(base, result.plan)
    assert time.perf_counter() - t0 < 600.0


# -- a7: branch-sequential execution cuts peak live memory --------------------


def _demo_block():
    return A.Architecture(
        name="demo", input_shape=(3, 32, 32),
        blocks=(A.Block(layers=A.chain(A.Conv(64), A.Relu(),
                                       ids=["c0", "r0"]),
                        pool=A.PoolSpec()),),
        classifier=A.ClassifierSpec(features=(10,)))


def test_a7_two_way_split_cuts_peak_memory_forty_percent():
    t0 = time.perf_counter()
    fused = peak_memory(fused_baseline(_demo_block()), "all_parallel")
    split = split_transform(_demo_block(), SplitPlan("proposed", (2,)))
    seq = peak_memory(split, "branch_sequential")
    assert fused.peak_elements == 81920
    assert seq.peak_elements == 49152
    assert 1 - seq.peak_elements / fused.peak_elements >= 0.40

    # schedule dominance over 100 random split architectures
    rng = np.random.Generator(np.random.PCG64(13))
    for trial in range(100):
        widths = [int(rng.integers(1, 5)) * 8
                  for _ in range(int(rng.integers(1, 4)))]
        arch = make_chain_arch(widths, size=16, name=f"m{trial}")
        factors = tuple(int(rng.choice([1, 2, 4])) for _ in widths)
        net = split_transform(arch, SplitPlan("proposed", factors))
        assert peak_memory(net, "branch_sequential").peak_elements <= \
            peak_memory(net, "all_parallel").peak_elements
    assert time.perf_counter() - t0 < 60.0


# -- a8: on-disk formats round-trip exactly -----------------------------------


def test_a8_formats_round_trip_bit_exactly(tmp_path):
    t0 = time.perf_counter()

    # image batch: a load -> save cycle preserves every byte, and a second
    # load reproduces the canonical in-memory form exactly
    rng = np.random.Generator(np.random.PCG64(5))
    pixels = rng.integers(0, 256, size=(24, 3, 32, 32), dtype=np.uint8)
    y = rng.integers(0, 10, size=24)
    batch = tmp_path / "batch.bin"
    save_cifar10_binary(str(batch), pixels.astype(np.float32) / 255.0, y)
    blob = batch.read_bytes()
    x2, y2 = load_cifar10_binary(str(batch))
    assert np.array_equal(y, y2)
    save_cifar10_binary(str(batch), x2, y2)
    assert batch.read_bytes() == blob
    x3, y3 = load_cifar10_binary(str(batch))
    assert np.array_equal(x2, x3) and np.array_equal(y2, y3)

    # weight store: every tensor identical down to the bit pattern
    store = init_weights(make_chain_arch([8, 8], size=8, name="rt"), seed=3)
    path = tmp_path / "weights.sfw"
    store.save(str(path))
    loaded = WeightStore.load(str(path))
    assert set(loaded.tensors) == set(store.tensors)
    for key, w in store.tensors.items():
        got = loaded.tensors[key]
        assert got.dtype == w.dtype and got.shape == w.shape
        assert got.tobytes() == w.tobytes(), key

    # architecture documents: parse(serialize(arch)) is structurally equal,
    # lineage included
    nets = [
        two_layer_demo(3, 8, 8),
        make_allkinds_arch(),
        split_transform(make_chain_arch([8, 16], size=8, name="rt2"),
                        SplitPlan("proposed", (2, 4))),
    ]
    for net in nets:
        assert parse_architecture(serialize_architecture(net)) == net
    assert time.perf_counter() - t0 < 1.0


# -- a9: command-line runs are byte-deterministic ------------------------------


def _run_twice_identical(capsys, tmp_path, argv, artifacts=(), manifest=None):
    from splitforge.cli import main
    assert main(list(argv)) == 0
    first = capsys.readouterr()
    blobs = {name: (tmp_path / name).read_bytes() for name in artifacts}
    doc1 = json.loads((tmp_path / manifest).read_text()) if manifest else None
    assert main(list(argv)) == 0
    second = capsys.readouterr()
    assert second.out == first.out
    for name, blob in blobs.items():
        assert (tmp_path / name).read_bytes() == blob, name
    if manifest:
        doc2 = json.loads((tmp_path / manifest).read_text())
        for doc in (doc1, doc2):
            doc.pop("created")
            doc.pop("duration_s")
        assert doc1 == doc2
    json.loads(first.out)  # payload is machine-readable, no stray chatter


def test_a9_every_command_is_byte_deterministic(tmp_path, capsys):
    table = tmp_path / "table.csv"
    rows = ["block,1,2,4,6,8"]
    for block in sorted(BLOCK_ACCURACY_TABLE):
        cells = BLOCK_ACCURACY_TABLE[block]
        rows.append(",".join([str(block)] + [f"{cells[f]:.2f}"
                                             for f in (1, 2, 4, 6, 8)]))
    table.write_text("\n".join(rows) + "\n")

    d = str(tmp_path)
    _run_twice_identical(
        capsys, tmp_path,
        ["transform", "--arch", "builtin:conv_chain:16,16", "--plan", "2,2",
         "-o", f"{d}/split.json"],
        artifacts=["split.json"], manifest="split.json.manifest.json")
    _run_twice_identical(
        capsys, tmp_path,
        ["analyze", "--arch", "builtin:two_layer_demo", "--per-layer",
         "--csv", f"{d}/memory.csv", "--figure", f"{d}/memory.png"],
        artifacts=["memory.csv", "memory.png"],
        manifest="memory.csv.manifest.json")
    _run_twice_identical(
        capsys, tmp_path,
        ["sweep", "--l0", "3", "--l1", "64", "--l2", "64",
         "--grid", "1,2,4,8", "-o", f"{d}/sweep.csv"],
        artifacts=["sweep.csv"], manifest="sweep.csv.manifest.json")
    _run_twice_identical(
        capsys, tmp_path,
        ["verify", "--arch", "builtin:two_layer_demo", "--plan", "2",
         "--dtype", "float64", "--trials", "3"])
    _run_twice_identical(
        capsys, tmp_path,
        ["train", "--arch", "builtin:conv_chain:8,16,size=16,classes=4",
         "--data", "synth:n=40,size=16", "--epochs", "1",
         "--batch-size", "16", "-o", f"{d}/model.sfw",
         "--history", f"{d}/history.csv"],
        artifacts=["model.sfw", "history.csv"],
        manifest="model.sfw.manifest.json")
    _run_twice_identical(
        capsys, tmp_path,
        ["search", "--arch", "builtin:conv_chain:48,48,48,48,48",
         "--evaluator", f"table:{table}", "-o", f"{d}/plan.json",
         "--trace", f"{d}/trace.csv", "--figure", f"{d}/trace.png"],
        artifacts=["plan.json", "trace.csv", "trace.png"],
        manifest="plan.json.manifest.json")
