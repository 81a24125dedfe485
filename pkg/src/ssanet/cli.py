"""Command-line interface.

Exit codes: 0 success, 1 numeric check failure or training divergence,
2 usage or file-format error.  Every command is deterministic under
--seed except bench timings.  Where a command accepts --config FILE, the
file is plain key=value text and precedence is flags > config > defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from . import blocks, datasets, ops, serialize, training
from .errors import (
    CheckFailure,
    DimensionError,
    FormatError,
    SpecError,
    TrainingDiverged,
)
from .ssa import SsaConfig, ssa_forward, ssa_forward_reference


def _parse_shift_cap(text: str) -> SsaConfig:
    if text == "all":
        return SsaConfig()
    try:
        return SsaConfig.fixed(int(text))
    except ValueError as e:
        raise SpecError(f"--shift-cap must be 'all' or an integer, got {text!r}") from e


# ---------------------------------------------------------------------------
# equiv-check


def cmd_equiv_check(args) -> int:
    ops.set_num_threads(args.threads)
    if args.trials < 1:
        raise SpecError(f"--trials must be >= 1, got {args.trials}")
    if args.max_f < 1:
        raise SpecError(f"--max-f must be >= 1, got {args.max_f}")
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(args.trials):
        f = 1 + i % args.max_f
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h, w = (int(v) for v in rng.integers(2, 7, size=2))
        cap_draw = int(rng.integers(0, f + 1))
        cfg = SsaConfig() if cap_draw == f else SsaConfig.fixed(cap_draw)
        x = rng.standard_normal((n, c, f, h, w)).astype(np.float32)
        ref = ssa_forward_reference(x, cfg)
        cum = ssa_forward(x, cfg)
        denom = max(float(np.abs(ref).max()), 1e-12)
        worst = max(worst, float(np.abs(ref - cum).max()) / denom)
    print(
        f"equiv-check: trials={args.trials} max_f={args.max_f} "
        f"max_rel_dev={worst:.3e} tolerance={args.tolerance:g}"
    )
    if worst > args.tolerance:
        raise CheckFailure(
            f"reference vs cumulative deviation {worst:.3e} exceeds "
            f"{args.tolerance:g}"
        )
    print("PASS")
    return 0


# ---------------------------------------------------------------------------
# param-count


def cmd_param_count(args) -> int:
    if bool(args.arch) == bool(args.spec):
        raise SpecError("give exactly one of --arch or --spec")
    if args.arch:
        spec = blocks.network_spec(args.arch)
    else:
        spec = blocks.parse_network_spec(Path(args.spec).read_text())
    rows = blocks.param_breakdown(spec)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["layer", "kind", "params", "zero_param"])
    for name, kind, count in rows:
        out.writerow([name, kind, count, "yes" if count == 0 else ""])
    out.writerow(["total", "", sum(n for _, _, n in rows), ""])
    return 0


# ---------------------------------------------------------------------------
# gen-data


def _write_labels_csv(path: Path, labels: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, lbl in enumerate(labels):
            w.writerow([i, int(lbl)])


def _read_labels_csv(path: Path) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index", "label"]:
        raise FormatError(f"{path} is not a label CSV (index,label)")
    return np.asarray([int(r[1]) for r in rows[1:]], dtype=np.int64)


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "motion":
        data = datasets.gen_motion_dataset(args.n_per_class, args.noise, args.seed)
        serialize.save_tensor(out / "train.ssat", data.train_x)
        serialize.save_tensor(out / "test.ssat", data.test_x)
        _write_labels_csv(out / "train_labels.csv", data.train_y)
        _write_labels_csv(out / "test_labels.csv", data.test_y)
        meta = (
            f"kind=motion\nn_per_class={args.n_per_class}\nnoise={args.noise}\n"
            f"seed={args.seed}\nclasses={'/'.join(data.class_names)}\n"
        )
        (out / "meta.txt").write_text(meta)
        print(f"wrote motion dataset to {out} "
              f"(train={data.train_x.shape[0]}, test={data.test_x.shape[0]})")
    else:
        grids, labels, names = datasets.gen_synthetic_shapes(
            args.n_per_class, args.seed
        )
        serialize.save_voxels(out / "shapes.ssav", grids, labels, len(names))
        meta = (
            f"kind=shapes\nn_per_class={args.n_per_class}\nseed={args.seed}\n"
            f"classes={'/'.join(names)}\n"
        )
        (out / "meta.txt").write_text(meta)
        print(f"wrote {grids.shape[0]} voxel grids to {out / 'shapes.ssav'}")
    return 0


# ---------------------------------------------------------------------------
# train / eval


_TRAIN_DEFAULTS = {
    "arch": "toy_ssa_net",
    "data": "motion",
    "epochs": 12,
    "batch_size": 16,
    "lr": 0.02,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "seed": 0,
    "data_seed": -1,  # -1 means: use seed
    "n_per_class": 100,
    "noise": 0.05,
    "shift_cap": "all",
}


def _resolve_options(args, defaults: dict) -> dict:
    """Apply precedence flags > config file > defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        raw = serialize.parse_key_value(Path(args.config).read_text())
        for key, val in raw.items():
            if key not in defaults:
                raise FormatError(f"unknown config key {key!r}")
            kind = type(defaults[key])
            try:
                merged[key] = kind(val)
            except ValueError as e:
                raise FormatError(f"config key {key!r}: {e}") from e
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _load_dataset(source: str, n_per_class: int, noise: float, seed: int):
    if source == "motion":
        return datasets.gen_motion_dataset(n_per_class, noise, seed)
    d = Path(source)
    if not d.is_dir():
        raise FormatError(
            f"--data must be 'motion' or a gen-data directory, got {source!r}"
        )
    return datasets.MotionDataset(
        serialize.load_tensor(d / "train.ssat"),
        _read_labels_csv(d / "train_labels.csv"),
        serialize.load_tensor(d / "test.ssat"),
        _read_labels_csv(d / "test_labels.csv"),
    )


def cmd_train(args) -> int:
    opt = _resolve_options(args, _TRAIN_DEFAULTS)
    ops.set_num_threads(args.threads)
    if args.threads > 1:
        print(f"note: {args.threads} threads; results are not golden-comparable")
    data_seed = opt["seed"] if opt["data_seed"] < 0 else opt["data_seed"]
    data = _load_dataset(opt["data"], opt["n_per_class"], opt["noise"], data_seed)
    classes = int(data.train_y.max()) + 1 if data.train_y.size else 2
    net = blocks.build_network(
        opt["arch"], seed=opt["seed"], ssa=_parse_shift_cap(str(opt["shift_cap"])),
        classes=max(classes, 2),
    )
    config = training.TrainConfig(
        lr=opt["lr"], momentum=opt["momentum"], weight_decay=opt["weight_decay"],
        batch_size=opt["batch_size"], epochs=opt["epochs"], seed=opt["seed"],
    )
    out_dir = Path(args.out_dir or f"runs/{opt['arch']}_seed{opt['seed']}")
    out_dir.mkdir(parents=True, exist_ok=True)
    history = training.train(net, data, config, log=print)
    (out_dir / "history.csv").write_text(history.to_csv())
    serialize.save_checkpoint(out_dir / "checkpoint.ssac", net)
    print(f"history: {out_dir / 'history.csv'}")
    print(f"checkpoint: {out_dir / 'checkpoint.ssac'}")
    print(f"final test_acc={history.final.test_acc:.6f}")
    return 0


_EVAL_DEFAULTS = {
    "data": "motion",
    "seed": 0,
    "data_seed": -1,
    "n_per_class": 100,
    "noise": 0.05,
}


def cmd_eval(args) -> int:
    opt = _resolve_options(args, _EVAL_DEFAULTS)
    ops.set_num_threads(args.threads)
    net = serialize.restore_network(args.checkpoint)
    data_seed = opt["seed"] if opt["data_seed"] < 0 else opt["data_seed"]
    data = _load_dataset(opt["data"], opt["n_per_class"], opt["noise"], data_seed)
    acc = training.evaluate(net, data.test_x, data.test_y)
    print(f"test_acc={acc:.6f}")
    return 0


# ---------------------------------------------------------------------------
# grad-check


_GRAD_TOLERANCES = {
    "ssa": 1e-6,
    "conv": 1e-4,
    "bn": 1e-4,
    "linear": 1e-4,
    "pool": 1e-4,
    "network": 1e-3,
}


def cmd_grad_check(args) -> int:
    targets = list(_GRAD_TOLERANCES) if args.target == "all" else [args.target]
    failures = []
    for target in targets:
        tol = _GRAD_TOLERANCES[target]
        if target == "network":
            rng = np.random.default_rng(args.seed)
            net = blocks.build_network("toy_ssa_net", seed=args.seed,
                                       dtype=np.float64)
            x = rng.standard_normal((4, 1, 8, 16, 16))
            labels = rng.integers(0, 4, size=4)
            errs = training.grad_check_network(net, x, labels, eps=args.eps,
                                               seed=args.seed)
        else:
            errs = training.op_gradient_errors(target, seed=args.seed,
                                               eps=args.eps)
        worst = max(errs.values())
        status = "ok" if worst < tol else "FAIL"
        print(f"grad-check {target}: max_rel_err={worst:.3e} "
              f"tolerance={tol:g} {status}")
        if worst >= tol:
            failures.append(target)
    if failures:
        raise CheckFailure(f"gradient check failed for: {', '.join(failures)}")
    print("PASS")
    return 0


# ---------------------------------------------------------------------------
# bench


def _time_op(fn, repeats: int) -> tuple[float, float]:
    fn()  # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    arr = np.asarray(times, dtype=np.float64)
    return float(arr.mean()), float(np.percentile(arr, 95))


def cmd_bench(args) -> int:
    ops.set_num_threads(args.threads)
    rng = np.random.default_rng(args.seed)
    f = args.frames
    x = rng.standard_normal((2, 8, f, 12, 12)).astype(np.float32)
    shape = "x".join(map(str, x.shape))
    rows = []
    rows.append(("ssa_reference", shape,
                 *_time_op(lambda: ssa_forward_reference(x), args.repeats)))
    caps = sorted({1, max(1, f // 4), max(1, f // 2), f - 1}) if f > 1 else [0]
    for cap in caps:
        cfg = SsaConfig.fixed(cap)
        rows.append((f"ssa_cumulative_cap{cap}", shape,
                     *_time_op(lambda: ssa_forward(x, cfg), args.repeats)))
    kernel = ops.Conv2dKernel(
        rng.standard_normal((8, 8, 3, 3)).astype(np.float32), padding=1
    )
    rows.append(("conv2d_k3", shape,
                 *_time_op(lambda: ops.conv2d_framewise(x, kernel), args.repeats)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["op", "shape", "mean_ns", "p95_ns"])
    for op_name, shp, mean_ns, p95_ns in rows:
        w.writerow([op_name, shp, f"{mean_ns:.0f}", f"{p95_ns:.0f}"])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# dump-tensor


def cmd_dump_tensor(args) -> int:
    info = serialize.describe_tensor(Path(args.file).read_bytes())
    print(f"magic={serialize.TENSOR_MAGIC.decode()} version=1 dtype={info['dtype']}")
    print("shape=" + "x".join(str(d) for d in info["shape"]))
    print(f"count={info['count']} min={info['min']:.6g} max={info['max']:.6g} "
          f"mean={info['mean']:.6g} std={info['std']:.6g}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ssanet",
        description="Spatio-temporal CNNs with a parameter-free temporal layer",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_threads(sp):
        sp.add_argument("--threads", type=int, default=1,
                        help="batch-axis parallelism (1 = golden mode)")

    sp = sub.add_parser("equiv-check",
                        help="reference vs cumulative temporal-layer agreement")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--max-f", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=1e-5)
    add_threads(sp)
    sp.set_defaults(func=cmd_equiv_check)

    sp = sub.add_parser("param-count", help="per-layer parameter table (CSV)")
    sp.add_argument("--arch", help="registered architecture name")
    sp.add_argument("--spec", help="path to a network spec file")
    sp.set_defaults(func=cmd_param_count)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    sp.add_argument("kind", choices=["motion", "shapes"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-per-class", type=int, default=100)
    sp.add_argument("--noise", type=float, default=0.05)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a network on a dataset")
    sp.add_argument("--arch", default=None)
    sp.add_argument("--data", default=None,
                    help="'motion' or a gen-data output directory")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--momentum", type=float, default=None)
    sp.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--data-seed", dest="data_seed", type=int, default=None)
    sp.add_argument("--n-per-class", dest="n_per_class", type=int, default=None)
    sp.add_argument("--noise", type=float, default=None)
    sp.add_argument("--shift-cap", dest="shift_cap", default=None,
                    help="'all' or an integer temporal shift cap")
    sp.add_argument("--out-dir", dest="out_dir", default=None)
    sp.add_argument("--config", default=None, help="key=value defaults file")
    add_threads(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--data-seed", dest="data_seed", type=int, default=None)
    sp.add_argument("--n-per-class", dest="n_per_class", type=int, default=None)
    sp.add_argument("--noise", type=float, default=None)
    sp.add_argument("--config", default=None)
    add_threads(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grad-check",
                        help="analytic vs finite-difference gradients (64-bit)")
    sp.add_argument("--target", default="all",
                    choices=["all", *_GRAD_TOLERANCES])
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("bench", help="time temporal-layer and conv paths (CSV)")
    sp.add_argument("--out", default=None, help="CSV path (default: stdout)")
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--frames", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    add_threads(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("dump-tensor", help="print an SSAT file header and stats")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_dump_tensor)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except (CheckFailure, TrainingDiverged) as e:
        print(f"FAIL: {e}", file=sys.stderr)
        return 1
    except (FormatError, SpecError, DimensionError, FileNotFoundError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        ops.set_num_threads(1)


if __name__ == "__main__":
    sys.exit(main())
