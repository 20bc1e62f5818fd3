"""Command-line interface: ``gcsl <command> [options]``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config error.
Output files go under ``--out-dir``; paths inside a run config are resolved
against the directory holding the config file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import jsonschema
import numpy as np

from . import checkpoint
from .calibration import DEFAULT_BINS, Predictions, ece, read_predictions, write_predictions, write_report
from .data import Dataset, _atomic_write, apply_mask, fmt, gen_two_gaussians, parse_mask, read_csv, write_csv, write_rows
from .ebm import SgldConfig, generate
from .errors import ContractError, CsvParseError, SamplerDivergence, TrainingDiverged
from .layer import DiscriminativeParams, GenerativeParams
from .model import HybridModel
from .numerics import CholFactor, make_rng
from .trainer import FeatureNetConfig, TrainConfig, evaluate, grad_check, init_model, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or an invalid run config (exit code 2)."""


def _schema() -> dict:
    return json.loads(resources.files("gcsl").joinpath("run_config.schema.json").read_text(encoding="utf-8"))


def load_run_config(path) -> dict:
    """Read and schema-validate a run config; raises UsageError."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
    validate_run_config(doc, path)
    return doc


def validate_run_config(doc, where="config"):
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{where}: {loc}: {exc.message}") from None


def build_train_config(doc: dict, trial: int = 0) -> TrainConfig:
    t = dict(doc.get("train", {}))
    try:
        net = FeatureNetConfig(**t.pop("feature_net", {}))
        sgld = SgldConfig(**doc.get("sgld", {}))
        opt = t.pop("optimizer", "sgd")
        return TrainConfig(
            optimizer="adam" if opt == "adaptive_moment" else opt,
            lam=t.pop("lambda", 10.0),
            seed=t.pop("seed", 0) + trial,
            sgld=sgld,
            feature_net=net,
            **t,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def load_trial_data(doc: dict, trial: int = 0, base_dir: str = "."):
    """``(train, test)`` for one trial; synthetic data is redrawn with seed + trial."""
    spec = doc["data"]
    if spec["source"] == "two_gaussians":
        seed = spec.get("seed", 0) + trial
        kwargs = {"variance": spec["variance"]} if "variance" in spec else {}
        train_set, test_set = gen_two_gaussians(spec.get("n_train", 100), spec.get("n_test", 1000), seed, **kwargs)
        train_set = apply_mask(train_set, parse_mask(spec.get("mask", "none"), seed))
    else:
        train_set = read_csv(_resolve(base_dir, spec["train"]))
        test_set = read_csv(_resolve(base_dir, spec["test"])) if "test" in spec else None
    if spec.get("labeled_only"):
        train_set = train_set.labeled()
    if test_set is not None and len(test_set) == 0:
        test_set = None
    return train_set, test_set


def write_history(history, path):
    header = ["epoch", "cross_entropy", "generative_nll", "coupling_penalty", "total", "train_accuracy", "wall_time"]
    rows = (
        [r.epoch, fmt(r.loss.cross_entropy), fmt(r.loss.generative_nll), fmt(r.loss.coupling_penalty),
         fmt(r.loss.total), fmt(r.train_accuracy), fmt(r.wall_time)]
        for r in history.epochs
    )
    write_rows(path, header, rows)


def run_trial(doc: dict, trial: int, base_dir: str, out_dir: str | None = None) -> dict:
    """Train one trial; writes checkpoint, history and predictions when ``out_dir`` is set."""
    config = build_train_config(doc, trial)
    train_set, test_set = load_trial_data(doc, trial, base_dir)
    model, history = train(train_set, config)
    result = {"trial": trial, "seed": config.seed, "accuracy": None, "epochs": len(history)}
    post = None
    if test_set is not None:
        result["accuracy"], post = evaluate(model, test_set)
    if out_dir is not None:
        tdir = os.path.join(out_dir, f"trial_{trial:03d}")
        echo = {k: v for k, v in doc.items() if k != "out_dir"}
        checkpoint.save(model, os.path.join(tdir, "checkpoint.json"), {**echo, "trial": trial})
        write_history(history, os.path.join(tdir, "history.csv"))
        if post is not None:
            write_predictions(Predictions.from_posteriors(post, test_set.labels), os.path.join(tdir, "predictions.csv"))
    return result


def worker_count(n_tasks: int) -> int:
    """``GCSL_THREADS`` caps the worker count; 0 or unset means one per CPU."""
    raw = os.environ.get("GCSL_THREADS", "0").strip() or "0"
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"GCSL_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise UsageError("GCSL_THREADS must be >= 0")
    cap = cap or os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def run_trials(doc: dict, base_dir: str = ".", out_dir: str | None = None, trials: int | None = None):
    """All trials of a config; results come back in trial order whatever the worker count."""
    n = trials or doc.get("trials", 1)
    workers = worker_count(n)
    if workers == 1:
        return [run_trial(doc, t, base_dir, out_dir) for t in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_trial, doc, t, base_dir, out_dir) for t in range(n)]
        return [f.result() for f in futures]


def summarize(results) -> dict:
    accs = np.array([r["accuracy"] for r in results if r["accuracy"] is not None], dtype=np.float64)
    summary = {"trials": len(results), "mean_accuracy": None, "std_accuracy": None}
    if accs.size:
        summary["mean_accuracy"] = float(accs.mean())
        summary["std_accuracy"] = float(accs.std(ddof=1)) if accs.size > 1 else None
    return summary


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}%"


# commands


def cmd_gen_data(args):
    if args.n_train < 0 or args.n_test < 0:
        raise UsageError("sample counts must be >= 0")
    train_set, test_set = gen_two_gaussians(args.n_train, args.n_test, args.seed, args.variance)
    try:
        rule = parse_mask(args.mask, args.seed)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    train_set = apply_mask(train_set, rule)
    write_csv(train_set, os.path.join(args.out_dir, "train.csv"))
    write_csv(test_set, os.path.join(args.out_dir, "test.csv"))
    print(f"train: {len(train_set)} rows ({train_set.n_labeled} labeled); test: {len(test_set)} rows")


def cmd_train(args):
    doc = load_run_config(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out_dir = args.out_dir or _resolve(base_dir, doc.get("out_dir", "."))
    trials = args.trials or doc.get("trials", 1)
    results = run_trials(doc, base_dir, out_dir, trials)
    for r in results:
        print(f"trial {r['trial']} seed {r['seed']}: accuracy {_pct(r['accuracy'])}")
    summary = summarize(results)
    summary["name"] = doc.get("name", os.path.splitext(os.path.basename(args.config))[0])
    write_rows(
        os.path.join(out_dir, "trials.csv"),
        ["trial", "seed", "accuracy"],
        ([r["trial"], r["seed"], "" if r["accuracy"] is None else fmt(r["accuracy"])] for r in results),
    )
    _atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(
        f"{summary['name']}: mean accuracy {_pct(summary['mean_accuracy'])} "
        f"(std {_pct(summary['std_accuracy'])}) over {summary['trials']} trials"
    )


def cmd_eval(args):
    model = checkpoint.load(args.checkpoint)
    data = read_csv(args.data)
    acc, post = evaluate(model, data)
    preds = Predictions.from_posteriors(post, data.labels)
    write_predictions(preds, os.path.join(args.out_dir, "predictions.csv"))
    metrics = {"accuracy": acc, "n": len(data), "n_classes": model.n_classes}
    _atomic_write(os.path.join(args.out_dir, "metrics.json"), json.dumps(metrics, indent=2) + "\n")
    print(f"accuracy {_pct(acc)} on {len(data)} samples")


def cmd_calibrate(args):
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    preds = read_predictions(args.predictions)
    report = ece(preds, args.bins)
    write_report(report, preds, args.out_dir)
    print(f"ECE {report.ece:.6f} over {report.n} predictions, {args.bins} bins")


def _grid_axis(text, flag):
    parts = text.split(":")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise UsageError(f"{flag} must look like LOW:HIGH:COUNT, got {text!r}") from None
    if len(parts) != 3 or n < 0:
        raise UsageError(f"{flag} must look like LOW:HIGH:COUNT with COUNT >= 0")
    return np.linspace(lo, hi, n)


def boundary_grid(model: HybridModel, x1, x2):
    """Rows ``(x1, x2, p_class1)`` over the grid, ``x1`` varying slowest."""
    if model.input_dim != 2:
        raise ContractError(f"decision-boundary grids need a 2-D model, got input dimension {model.input_dim}")
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    if len(pts) == 0:
        return pts, np.empty(0)
    return pts, model.predict_proba(pts)[:, 0]


def cmd_boundary(args):
    model = checkpoint.load(args.checkpoint)
    pts, p = boundary_grid(model, _grid_axis(args.x1, "--x1"), _grid_axis(args.x2, "--x2"))
    write_rows(
        os.path.join(args.out_dir, args.out),
        ["x1", "x2", "p_class1"],
        ([fmt(a), fmt(b), fmt(c)] for (a, b), c in zip(pts, p)),
    )
    print(f"wrote {len(p)} grid points")


def cmd_generate(args):
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    model = checkpoint.load(args.checkpoint)
    cls = None
    if args.cls is not None:
        if not 1 <= args.cls <= model.n_classes:
            raise UsageError(f"--class must lie in [1, {model.n_classes}]")
        cls = args.cls - 1
    noise = math.sqrt(args.step_size) if args.noise_std is None else args.noise_std
    try:
        cfg = SgldConfig(
            steps=args.steps,
            step_size=args.step_size,
            noise_std=noise,
            init_low=args.init_low,
            init_high=args.init_high,
            clip=args.clip,
            persistent=False,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    samples = generate(model, args.n, cfg, make_rng(args.seed), cls=cls)
    labels = np.full(len(samples), -1 if cls is None else cls)
    write_csv(Dataset(samples.reshape(args.n, model.input_dim), labels), os.path.join(args.out_dir, args.out))
    print(f"wrote {args.n} samples")


def _random_model(n_classes, dim, rng) -> HybridModel:
    a = rng.standard_normal((dim, dim))
    spd = a @ a.T + dim * np.eye(dim)
    gen = GenerativeParams(rng.standard_normal(n_classes), rng.standard_normal((n_classes, dim)), CholFactor.from_matrix(spd))
    disc = DiscriminativeParams(rng.standard_normal((n_classes, dim)), rng.standard_normal(n_classes))
    return HybridModel(disc, gen)


def cmd_gradcheck(args):
    if args.config:
        doc = load_run_config(args.config)
        config = build_train_config(doc)
        if config.mode != "standalone_tractable":
            raise UsageError("gradcheck needs a standalone_tractable config")
        data, _ = load_trial_data(doc, 0, os.path.dirname(os.path.abspath(args.config)))
        model = init_model(data, config)
        x, labels = data.features, data.labels
        lam = config.lam if args.lam is None else args.lam
    else:
        rng = make_rng(args.seed)
        model = _random_model(args.classes, args.dim, rng)
        x = rng.standard_normal((args.n, args.dim))
        labels = rng.integers(-1, args.classes, size=args.n)
        lam = 10.0 if args.lam is None else args.lam
    report = grad_check(model, x, labels, lam, args.tolerance, args.h)
    for line in report.lines():
        print(line)
    write_rows(
        os.path.join(args.out_dir, "gradcheck.csv"),
        ["block", "max_rel_error", "passed"],
        ([name, fmt(err), int(err < report.tolerance)] for name, err in report.max_rel_error.items()),
    )
    print("gradient check " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcsl", description="Softmax classifiers coupled to shared-covariance Gaussians.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func, usage=p.print_usage)
        if name != "train":
            p.add_argument("--out-dir", default=".", help="directory for every output file (default: .)")
        return p

    p = command("gen-data", cmd_gen_data, "write the two-Gaussian train/test CSVs")
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", default="none", help="none, extremal:K or random:K (default: none)")
    p.add_argument("--variance", type=float, default=0.5, help="per-axis class variance (default: 0.5)")

    p = command("train", cmd_train, "train from a JSON run config")
    p.add_argument("config", help="run config (see run_config.schema.json)")
    p.add_argument("--out-dir", default=None, help="output directory (default: the config's out_dir, else .)")
    p.add_argument("--trials", type=int, default=None, help="override the config's trial count")

    p = command("eval", cmd_eval, "accuracy and prediction dump for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="fully labeled CSV")

    p = command("calibrate", cmd_calibrate, "ECE, reliability bins and confidence histogram")
    p.add_argument("--predictions", required=True, help="confidence,predicted,true CSV")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)

    p = command("boundary", cmd_boundary, "class-1 posterior on a grid (2-D models)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x1", default="-2:2:101", help="LOW:HIGH:COUNT (default: -2:2:101)")
    p.add_argument("--x2", default="-2:2:101", help="LOW:HIGH:COUNT (default: -2:2:101)")
    p.add_argument("--out", default="boundary.csv")

    p = command("generate", cmd_generate, "draw SGLD samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--class", dest="cls", type=int, default=None, help="1-based class; omit for the marginal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--noise-std", type=float, default=None, help="default: sqrt(step size)")
    p.add_argument("--init-low", type=float, default=-1.0)
    p.add_argument("--init-high", type=float, default=1.0)
    p.add_argument("--clip", action="store_true", help="keep chains inside the init box")
    p.add_argument("--out", default="samples.csv")

    p = command("gradcheck", cmd_gradcheck, "compare analytic and finite-difference gradients")
    p.add_argument("--config", default=None, help="run config; otherwise a random model is used")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except UsageError as exc:
        args.usage(sys.stderr)
        print(f"gcsl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, SamplerDivergence) as exc:
        print(f"gcsl {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ContractError, CsvParseError, OSError) as exc:
        print(f"gcsl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
