"""Command-line interface.

Subcommands: transform, analyze, sweep, verify, train, search.  Results go
to stdout as JSON (sorted keys, no timestamps or durations — reruns with the
same inputs print identical bytes); diagnostics go to stderr.  File-emitting
runs also write ``<first-output>.manifest.json`` recording argv, sha256
digests of inputs and outputs, and wall time.

Exit codes: 0 success; 1 parse/validation problems; 2 transform failures;
3 oracle failures; 4 evaluator failures; 5 diverged training.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import cost, data, engine, oracle, search, transform
from .arch import load_architecture, serialize_architecture
from .engine import TrainConfig, WeightStore
from .errors import (BadLength, DivergedLoss, EmptySplit, EvaluatorFailure,
                     LabelOutOfRange, MissingCell, NonDivisibleError,
                     NotASplitArchitecture, ParseError, PlanLengthMismatch,
                     ScheduleInvalid, ShapeMismatch, SharedDepthTooLarge,
                     UnresolvableWiring, ValidationError)
from .program import SCHEDULES
from .transform import SplitPlan, parse_plan, serialize_plan

DATA_DIR_ENV = "SPLITFORGE_DATA_DIR"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        raise _UsageError(f"{self.prog}: {message}")


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _note(message: str) -> None:
    sys.stderr.write(message + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Tracks input/output files of one command for the manifest."""

    def __init__(self, command: str, argv: list[str]):
        self.command = command
        self.argv = argv
        self.started = time.monotonic()
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def read(self, path: str) -> str:
        if os.path.exists(path):
            self.inputs.append(path)
        return path

    def wrote(self, path: str) -> str:
        self.outputs.append(path)
        return path

    def finish(self) -> None:
        if not self.outputs:
            return
        doc = {
            "command": self.command,
            "argv": self.argv,
            "inputs": [{"path": p, "sha256": _sha256(p)} for p in self.inputs],
            "outputs": [{"path": p, "sha256": _sha256(p),
                         "bytes": os.path.getsize(p)} for p in self.outputs],
            "created": datetime.now(timezone.utc).isoformat(),
            "duration_s": round(time.monotonic() - self.started, 3),
        }
        path = self.outputs[0] + ".manifest.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# Shared argument helpers


def _load_arch(source: str, run: _Run):
    if not source.startswith("builtin:"):
        run.read(source)
    return load_architecture(source)


def _plan_arg(args) -> SplitPlan:
    text = args.plan
    if text is None:
        raise ValidationError("--plan is required for this command")
    if os.path.exists(text):
        with open(text) as fh:
            return parse_plan(fh.read())
    stripped = text.strip()
    if stripped.startswith("{"):
        return parse_plan(stripped)
    try:
        factors = tuple(int(tok) for tok in stripped.split(","))
    except ValueError as exc:
        raise ValidationError(f"--plan {text!r}: expected comma-separated "
                              f"integers or a plan document") from exc
    mode = getattr(args, "mode", "proposed")
    depth = getattr(args, "shared_depth", None)
    return SplitPlan(mode, factors, depth if mode == "shared" else None)


def _int_list(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"{flag} {text!r}: expected comma-separated "
                              f"integers") from exc


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        if "=" not in part:
            raise ValidationError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_data(spec: str, run: _Run):
    """``synth[:k=v,...]`` or a CIFAR-10 binary path (relative paths are
    retried under $SPLITFORGE_DATA_DIR)."""
    if spec == "synth" or spec.startswith("synth:"):
        opts = _parse_kv(spec[6:]) if spec.startswith("synth:") else {}
        known = {"n": 800, "size": 16, "seed": 0, "noise": 0.1}
        for key, val in opts.items():
            if key not in known:
                raise ValidationError(f"synth option {key!r} unknown "
                                      f"(choose from {sorted(known)})")
            known[key] = float(val) if key == "noise" else int(val)
        return data.synth_quadrant_dataset(**known)
    path = spec
    if not os.path.exists(path) and not os.path.isabs(path):
        candidate = os.path.join(os.environ.get(DATA_DIR_ENV, "data"), spec)
        if os.path.exists(candidate):
            path = candidate
    if not os.path.exists(path):
        raise ParseError(spec, "dataset not found (looked in cwd and "
                               f"${DATA_DIR_ENV})")
    return data.load_cifar10_binary(run.read(path))


def _params_dict(report: cost.CostReport) -> dict:
    return {"total": report.params.total, "conv": report.params.conv,
            "dense": report.params.dense,
            "fusion_only": report.params.fusion_only}


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_transform(args) -> int:
    run = _Run("transform", args.argv)
    arch = _load_arch(args.arch, run)
    plan = _plan_arg(args)
    out_arch = transform.apply_plan(arch, plan)
    payload = {
        "name": out_arch.name,
        "mode": plan.mode,
        "factors": list(plan.factors),
        "params": _params_dict(cost.count_params(out_arch)),
        "params_original": cost.count_params(arch).params.total,
        "output": args.out,
    }
    if args.out:
        with open(run.wrote(args.out), "w") as fh:
            fh.write(serialize_architecture(out_arch))
    run.finish()
    _emit(payload)
    return 0


def _cmd_analyze(args) -> int:
    run = _Run("analyze", args.argv)
    arch = _load_arch(args.arch, run)
    schedules = (SCHEDULES if args.schedules == "all"
                 else tuple(args.schedules.split(",")))
    for name in schedules:
        if name not in SCHEDULES:
            raise ValidationError(f"unknown schedule {name!r} "
                                  f"(choose from {SCHEDULES})")
    report = cost.analyze(arch, schedules, concat_alias=args.concat_alias)
    payload = {
        "arch": report.arch,
        "params": _params_dict(report),
        "macs": report.macs_total,
        "element_ops": report.element_ops_total,
        "memory": {name: {"peak_elements": m.peak_elements,
                          "peak_op": m.peak_op}
                   for name, m in report.memory.items()},
    }
    if args.per_layer:
        payload["per_layer"] = [
            {"uid": lc.uid, "kind": lc.kind, "params": lc.params,
             "macs": lc.macs, "element_ops": lc.element_ops}
            for lc in report.per_layer]
    if args.csv:
        with open(run.wrote(args.csv), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["schedule", "peak_elements", "peak_op"])
            for name in schedules:
                m = report.memory[name]
                writer.writerow([name, m.peak_elements, m.peak_op])
    if args.figure:
        from . import figures
        figures.memory_figure(report, run.wrote(args.figure))
    run.finish()
    _emit(payload)
    return 0


def _cmd_sweep(args) -> int:
    run = _Run("sweep", args.argv)
    grid = cost.sweep_params(args.l0, args.l1, args.l2,
                             _int_list(args.grid, "--grid"),
                             kernel=args.kernel)
    payload = {
        "l0": grid.l0, "l1": grid.l1, "l2": grid.l2,
        "cells": [{"k1": c.k1, "k2": c.k2, "params_split": c.params_split,
                   "params_org": c.params_org} for c in grid.cells],
    }
    if args.out:
        with open(run.wrote(args.out), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k1", "k2", "params_split", "params_org"])
            for c in grid.cells:
                writer.writerow([c.k1, c.k2,
                                 "" if c.params_split is None else c.params_split,
                                 c.params_org])
    if args.figure:
        from . import figures
        figures.sweep_figure(grid, run.wrote(args.figure))
    run.finish()
    _emit(payload)
    return 0


def _cmd_verify(args) -> int:
    run = _Run("verify", args.argv)
    arch = _load_arch(args.arch, run)
    plan = _plan_arg(args)
    if plan.mode not in ("proposed", "ideal"):
        raise NotASplitArchitecture(
            f"verify embeds proposed/ideal splits only, got {plan.mode!r}")
    split = transform.apply_plan(arch, plan)
    dtype = np.float64 if args.dtype == "float64" else np.float32
    tol = args.tol if args.tol is not None else (
        1e-10 if args.dtype == "float64" else 1e-5)
    weights = engine.init_weights(split, seed=args.seed, dtype=np.float64)
    base, base_w, embedding = oracle.embed_block_diagonal(split, weights)
    eq = oracle.check_equivalence(split, weights, base, base_w,
                                  trials=args.trials, seed=args.seed,
                                  tol=tol, dtype=dtype)
    payload = {
        "arch": split.name,
        "mode": plan.mode,
        "dtype": args.dtype,
        "embedding": {
            "pairs": embedding.pairs,
            "total_split": embedding.total_split,
            "total_baseline": embedding.total_baseline,
            "zero_fraction": round(embedding.zero_fraction, 6),
        },
        "equivalence": {
            "trials": eq.trials,
            "max_abs_diff": float(eq.max_abs_diff),
            "tol": tol,
            "ok": eq.ok,
        },
    }
    ok = eq.ok
    if args.grad:
        g = oracle.finite_diff_check(split, n_weights=args.grad_weights,
                                     seed=args.seed)
        payload["grad_check"] = {
            "checked": g.checked,
            "worst_rel_err": g.worst_rel_err,
            "worst_key": g.worst_key,
            "ok": g.worst_rel_err <= 1e-4,
        }
        ok = bool(ok and g.worst_rel_err <= 1e-4)
    payload["ok"] = ok
    run.finish()
    _emit(payload)
    return 0 if ok else 3


def _cmd_train(args) -> int:
    run = _Run("train", args.argv)
    arch = _load_arch(args.arch, run)
    if args.plan:
        arch = transform.apply_plan(arch, _plan_arg(args))
    x, y = _load_data(args.data, run)
    (tx, ty), eval_data = (x, y), None
    if args.test_fraction > 0:
        (tx, ty), eval_data = data.split_train_test(
            x, y, test_fraction=args.test_fraction, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, seed=args.seed)
    warm = WeightStore.load(run.read(args.warm_start)) if args.warm_start else None
    weights, history = engine.train(arch, (tx, ty), config,
                                    warm_start=warm, eval_data=eval_data)
    final = history[-1] if history else None
    payload = {
        "arch": arch.name,
        "epochs": len(history),
        "train_examples": int(tx.shape[0]),
        "test_examples": int(eval_data[0].shape[0]) if eval_data else 0,
        "final": None if final is None else {
            "train_acc": round(final.train_acc, 6),
            "test_acc": None if final.test_acc is None
            else round(final.test_acc, 6),
            "loss": round(final.loss, 6),
        },
        "weights": args.out,
    }
    if args.out:
        weights.save(run.wrote(args.out))
    if args.history:
        with open(run.wrote(args.history), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_acc", "test_acc", "loss"])
            for h in history:
                writer.writerow([h.epoch, f"{h.train_acc:.6f}",
                                 "" if h.test_acc is None else f"{h.test_acc:.6f}",
                                 f"{h.loss:.6f}"])
    if args.figure and history:
        from . import figures
        figures.history_figure(history, run.wrote(args.figure))
    run.finish()
    _emit(payload)
    return 0


def _make_evaluator(args, run: _Run):
    spec = args.evaluator
    if spec.startswith("table:"):
        return search.TableMockEvaluator.from_csv(run.read(spec[6:]))
    if spec == "internal":
        if not args.data:
            raise ValidationError("--data is required with --evaluator internal")
        x, y = _load_data(args.data, run)
        train_data, test_data = data.split_train_test(
            x, y, test_fraction=args.test_fraction, seed=args.seed)
        config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                             lr=args.lr, seed=args.seed,
                             fine_tune_epochs=args.fine_tune_epochs)
        return search.InternalEvaluator(train_data, test_data, config)
    if spec.startswith("command:"):
        return search.ExternalEvaluator(spec[8:], budget=args.budget,
                                        timeout=args.timeout)
    raise ValidationError(
        f"--evaluator {spec!r}: expected table:<csv>, internal, or "
        f"command:<cmd>")


def _cmd_search(args) -> int:
    run = _Run("search", args.argv)
    arch = _load_arch(args.arch, run)
    config = search.SearchConfig(threshold=args.threshold,
                                 ladder=_int_list(args.ladder, "--ladder"),
                                 policy=args.policy,
                                 baseline_mode=args.baseline_mode)
    evaluator = _make_evaluator(args, run)

    def progress(rec: search.TraceRecord) -> None:
        acc = "skip" if rec.accuracy is None else f"{rec.accuracy * 100:.2f}%"
        delta = "" if rec.delta_pp is None else f" (delta {rec.delta_pp:+.2f}pp)"
        _note(f"block {rec.block} factor {rec.factor}: {acc}{delta} "
              f"-> {rec.decision}")

    result = search.greedy_split_search(arch, evaluator, config,
                                        progress=progress)
    payload = {
        "arch": arch.name,
        "factors": list(result.factors),
        "accuracy": round(result.accuracy, 6),
        "baseline_accuracy": round(result.baseline_accuracy, 6),
        "evaluations": result.evaluations,
        "threshold_pp": config.threshold,
        "policy": config.policy,
        "plan_output": args.out,
    }
    if args.out:
        with open(run.wrote(args.out), "w") as fh:
            fh.write(serialize_plan(result.plan))
    if args.trace:
        table = search.trace_table(result)
        columns = [1] + [f for f in config.ladder]
        with open(run.wrote(args.trace), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block"] + columns)
            for block in sorted(table):
                row = [block]
                for f in columns:
                    v = table[block].get(f)
                    row.append("" if v is None else f"{v:.4f}")
                writer.writerow(row)
    if args.figure:
        from . import figures
        figures.trace_figure(result, run.wrote(args.figure))
    run.finish()
    _emit(payload)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="splitforge",
                     description="split CNN blocks into narrow branches, "
                                 "fuse them back, and measure what it costs")
    sub = parser.add_subparsers(dest="command", required=True)

    def arch_arg(p):
        p.add_argument("--arch", required=True,
                       help="architecture JSON file or builtin:<name>")

    def plan_args(p, modes=("proposed", "naive", "shared", "ideal")):
        p.add_argument("--plan", help="comma-separated factors, a plan JSON "
                                      "document, or a plan file")
        p.add_argument("--mode", choices=modes, default="proposed")
        p.add_argument("--shared-depth", type=int, default=None,
                       help="conv layers kept unsplit (shared mode)")

    p = sub.add_parser("transform", help="apply a split plan")
    arch_arg(p)
    plan_args(p)
    p.add_argument("-o", "--out", help="write the split architecture JSON here")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("analyze", help="parameters, MACs, peak memory")
    arch_arg(p)
    p.add_argument("--schedules", default="all",
                   help="comma-separated schedule names, or 'all'")
    p.add_argument("--concat-alias", action="store_true",
                   help="model concat as a view instead of a copy")
    p.add_argument("--per-layer", action="store_true",
                   help="include the per-layer table in the JSON")
    p.add_argument("--csv", help="write the memory table as CSV")
    p.add_argument("--figure", help="write a peak-memory chart (PNG)")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("sweep", help="closed-form parameter sweep over "
                                     "(k1, k2) for a two-layer split")
    p.add_argument("--l0", type=int, required=True)
    p.add_argument("--l1", type=int, required=True)
    p.add_argument("--l2", type=int, required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--grid", default="1,2,4,6,8",
                   help="factors to sweep (both axes)")
    p.add_argument("-o", "--out", help="write cells as CSV")
    p.add_argument("--figure", help="write the sweep chart (PNG)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("verify", help="embed a split into its baseline and "
                                      "check logit equivalence")
    arch_arg(p)
    plan_args(p, modes=("proposed", "ideal"))
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol", type=float, default=None,
                   help="max |logit diff| (default 1e-10 for float64, "
                        "1e-5 for float32)")
    p.add_argument("--dtype", choices=("float32", "float64"),
                   default="float64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad", action="store_true",
                   help="also finite-diff check the split's gradients")
    p.add_argument("--grad-weights", type=int, default=200)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("train", help="train with the bundled engine")
    arch_arg(p)
    plan_args(p)
    p.add_argument("--data", required=True,
                   help="synth[:k=v,...] or a CIFAR-10 binary batch")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--warm-start", help="weight store to adapt from")
    p.add_argument("-o", "--out", help="write trained weights here")
    p.add_argument("--history", help="write per-epoch CSV here")
    p.add_argument("--figure", help="write loss/accuracy curves (PNG)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("search", help="greedy per-block split search")
    arch_arg(p)
    p.add_argument("--evaluator", required=True,
                   help="table:<csv>, internal, or command:<cmd>")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="max accuracy drop in percentage points (strict)")
    p.add_argument("--ladder", default="2,4,6,8")
    p.add_argument("--policy", choices=search.POLICIES,
                   default="first_violation_revert")
    p.add_argument("--baseline-mode", choices=search.BASELINE_MODES,
                   default="per_block")
    p.add_argument("--data", help="dataset for the internal evaluator")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--fine-tune-epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--budget", type=int, default=10,
                   help="budget argument passed to external evaluators")
    p.add_argument("--timeout", type=float, default=None,
                   help="seconds before an external evaluator is killed")
    p.add_argument("-o", "--out", help="write the chosen plan JSON here")
    p.add_argument("--trace", help="write the evaluation table as CSV")
    p.add_argument("--figure", help="write the search trace chart (PNG)")
    p.set_defaults(func=_cmd_search)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _note(f"error: {exc}")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except (ParseError, ValidationError, BadLength, LabelOutOfRange,
            EmptySplit, ValueError) as exc:
        _note(f"error: {exc}")
        return 1
    except (NonDivisibleError, PlanLengthMismatch, UnresolvableWiring,
            SharedDepthTooLarge, NotASplitArchitecture, ScheduleInvalid) as exc:
        _note(f"error: {exc}")
        return 2
    except ShapeMismatch as exc:
        _note(f"error: {exc}")
        return 3
    except (EvaluatorFailure, MissingCell) as exc:
        _note(f"error: {exc}")
        return 4
    except DivergedLoss as exc:
        _note(f"error: {exc}")
        return 5


if __name__ == "__main__":
    sys.exit(main())
