"""Command-line entry point: dataset generation, training, evaluation,
experiment protocols, plotting, component counting, and gradient checking.

Range flags use lo:hi syntax. Every run echoes its fully resolved config to
<out>/resolved-config.json; CCLAB_OUT sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bitgrid, datasetio, experiments, profiles, synth, tensornet as tn


def _range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None


def _out_dir(args, *parts) -> str:
    root = args.out or os.environ.get("CCLAB_OUT", "runs")
    path = os.path.join(root, *parts) if parts else root
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(out_dir: str, config: dict) -> None:
    datasetio.write_json(os.path.join(out_dir, "resolved-config.json"), config)


def cmd_gen(args) -> int:
    shape = synth.ShapeSpec(args.kind, args.size, args.count)
    config = synth.GenConfig(
        image_size=args.image_size,
        shape=shape,
        n_images=args.n,
        seed=args.seed,
        pixel_budget=args.budget,
        budget_tolerance=args.budget_tol,
        allow_overlap=args.allow_overlap,
    )
    dataset = synth.gen_dataset(config)
    out = _out_dir(args)
    path = os.path.join(out, args.name)
    n = datasetio.write_dataset(dataset, path)
    _echo_config(out, {"command": "gen", "gen_config": config.to_dict(), "path": path})
    print(f"wrote {len(dataset)} images ({n} bytes) to {path}")
    return 0


def cmd_cc(args) -> int:
    if args.cc_command == "count":
        ds = datasetio.read_dataset(args.infile, verify=False)
        if not (0 <= args.index < len(ds)):
            print(f"index {args.index} out of range (dataset has {len(ds)} images)", file=sys.stderr)
            return 1
        grid = ds.images[args.index]
        count = bitgrid.num_components(grid, args.algorithm)
        print(count)
        return 0
    if args.cc_command == "bridge":
        a, b = bitgrid.bridge_pair(args.seed, args.image_size, args.diameter, args.shapes)
        labels = np.array([bitgrid.num_components(a), bitgrid.num_components(b)], dtype=np.int64)
        ds = synth.Dataset(
            {"format_version": 1, "generator": None,
             "note": "bridge pair: images differ in one merging pixel"},
            [a, b],
            labels,
        )
        out = _out_dir(args)
        path = os.path.join(out, args.name)
        datasetio.write_dataset(ds, path)
        _echo_config(out, {"command": "cc bridge", "seed": args.seed,
                           "image_size": args.image_size, "diameter": list(args.diameter),
                           "shapes": args.shapes, "path": path})
        print(f"wrote bridge pair with counts {labels[0]} -> {labels[1]} to {path}")
        return 0
    raise AssertionError("unreachable")


def cmd_train(args) -> int:
    ds = datasetio.read_dataset(args.data, verify=args.verify)
    size = ds.images[0].width
    x, y = ds.as_arrays("conv" if args.model == "mc" else "flat")
    if args.target == "pixels":
        y = x.reshape(len(x), -1).sum(axis=1)
    spec = experiments._model_spec(args.model, size)
    state = tn.init_model(spec, args.seed)
    stage = {
        "optimizer": {"kind": args.optimizer, "lr": args.lr, "momentum": args.momentum},
        "batch_size": args.batch_size,
        "epochs": args.epochs,
    }
    state, trace = experiments._train_stages(
        spec, state, x, y, [stage], args.seed, args.val_fraction, args.loss_threshold
    )
    out = _out_dir(args)
    model_path = os.path.join(out, args.name)
    tn.save_model(model_path, spec, state)
    datasetio.write_trace_csv(os.path.join(out, "trace.csv"), trace)
    config = {"command": "train", "data": args.data, "model": args.model,
              "target": args.target, "stage": stage, "seed": args.seed,
              "val_fraction": args.val_fraction, "loss_threshold": args.loss_threshold}
    _echo_config(out, config)
    reach = trace.epochs_to_threshold
    print(f"final train loss {trace.train_loss[-1]:.6g}"
          + (f"; reached threshold at epoch {reach}" if reach else ""))
    print(f"saved model to {model_path}")
    return 0


def cmd_eval(args) -> int:
    ds = datasetio.read_dataset(args.data, verify=args.verify)
    spec, state = tn.load_model(args.model)
    x, y = ds.as_arrays("conv" if len(spec.input_shape) == 3 else "flat")
    if args.target == "pixels":
        y = x.reshape(len(x), -1).sum(axis=1)
    preds = tn.predict(spec, state, x)
    rep = experiments.EvalReport("eval", y, preds)
    out = _out_dir(args)
    datasetio.write_samples_csv(os.path.join(out, "samples.csv"), rep.samples)
    report = {"command": "eval", "data": args.data, "model": args.model,
              "target": args.target, **rep.to_dict()}
    datasetio.write_json(os.path.join(out, "report.json"), report)
    _echo_config(out, report)
    print(f"mean relative error {rep.mean_rel_err:.6g} over {len(rep.samples)} samples")
    return 0


def cmd_exp(args) -> int:
    names = list(profiles.EXPERIMENTS) if args.experiment == "run-all" else [args.experiment]
    status = 0
    for name in names:
        config = profiles.load_config(name, args.profile)
        if args.seed is not None:
            if "seeds" in config:
                config["seeds"] = [args.seed + i for i in range(len(config["seeds"]))]
            else:
                config["seed"] = args.seed
        if args.model is not None and "model" in config:
            config["model"] = args.model
        out = _out_dir(args, name) if args.experiment == "run-all" else _out_dir(args)
        report = experiments.RUNNERS[name](config, out)
        passed = report.get("passed", {})
        for check, ok in passed.items():
            print(f"{name} {check}: {'pass' if ok else 'FAIL'}")
            if not ok:
                status = 1
        if not passed:
            print(f"{name}: done (report-only)")
    return status


def cmd_plot(args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    out = _out_dir(args)
    path = os.path.join(out, args.name)
    datasetio.emit_plot(report, args.kind, path)
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    rng = np.random.default_rng(args.seed)
    for i in range(args.models):
        seed = int(rng.integers(1 << 31))
        kind = i % 4
        if kind == 0:
            spec = tn.ModelSpec((tn.flatten(), tn.dense(10, 1)), (10,))
        elif kind == 1:
            spec = tn.ModelSpec(
                (tn.flatten(), tn.dense(8, 6), tn.relu(), tn.dense(6, 1)), (8,))
        elif kind == 2:
            spec = tn.ModelSpec(
                (tn.conv2d(1, 2, 3), tn.relu(), tn.conv2d(2, 3, 3), tn.relu(),
                 tn.maxpool(2), tn.flatten(), tn.dense(12, 4), tn.relu(), tn.dense(4, 1)),
                (1, 8, 8))
        else:
            spec = tn.ModelSpec(
                (tn.conv2d(2, 3, 2, 2), tn.relu(), tn.flatten(), tn.dense(27, 1)),
                (2, 6, 6))
        dev = tn.grad_check(spec, seed, args.eps)
        worst = max(worst, dev)
    print(f"max relative deviation over {args.models} models: {worst:.3e}")
    return 0 if worst <= args.tolerance else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cclab",
        description="Counting laboratory: binary-image datasets, component labeling, "
                    "small neural networks, and counting/learnability experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled dataset")
    p.add_argument("--kind", choices=synth.KINDS, required=True)
    p.add_argument("--size", type=_range, default=(2, 10), help="object size range lo:hi")
    p.add_argument("--count", type=_range, required=True,
                   help="object count range lo:hi (pixel count for random_pixels)")
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=None, help="fixed foreground-pixel budget")
    p.add_argument("--budget-tol", type=float, default=0.02)
    p.add_argument("--allow-overlap", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--name", default="dataset.bgs")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("cc", help="component-count utilities")
    ccsub = p.add_subparsers(dest="cc_command", required=True)
    c = ccsub.add_parser("count", help="count components of one stored image")
    c.add_argument("--in", dest="infile", required=True)
    c.add_argument("--index", type=int, default=0)
    c.add_argument("--algorithm", choices=("union_find", "bfs"), default="union_find")
    c.set_defaults(func=cmd_cc)
    c = ccsub.add_parser("bridge", help="generate a one-pixel bridge pair")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--image-size", type=int, default=256)
    c.add_argument("--diameter", type=_range, default=(10, 40))
    c.add_argument("--shapes", type=int, default=4)
    c.add_argument("--out", default=None)
    c.add_argument("--name", default="bridge.bgs")
    c.set_defaults(func=cmd_cc)

    p = sub.add_parser("train", help="train a model preset on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=("m0", "m1", "mc"), default="m0")
    p.add_argument("--target", choices=("components", "pixels"), default="components")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--loss-threshold", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true", help="re-label the dataset on load")
    p.add_argument("--out", default=None)
    p.add_argument("--name", default="model.ccmdl")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="path to a saved .ccmdl file")
    p.add_argument("--target", choices=("components", "pixels"), default="components")
    p.add_argument("--verify", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("exp", help="run experiment protocols")
    p.add_argument("experiment", choices=list(profiles.EXPERIMENTS) + ["run-all"])
    p.add_argument("--profile", choices=profiles.PROFILES, default="desk")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed(s)")
    p.add_argument("--model", default=None, help="override the configured model preset")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_exp)

    p = sub.add_parser("plot", help="render an SVG figure from a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--kind", choices=("scatter_true_vs_pred", "loss_curves", "error_vs_count"),
                   required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--name", default="plot.svg")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gradcheck", help="finite-difference check of the layer gradients")
    p.add_argument("--models", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, bitgrid.GenerationError,
            datasetio.DatasetFormatError, tn.TrainDivergence) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
