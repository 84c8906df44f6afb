"""Command-line front end.

Usage examples::

    convlstm-rain --out run synth --hours 20000
    convlstm-rain ingest run/synth.csv
    convlstm-rain --out run correlate run/synth.csv
    convlstm-rain --config run.cfg train
    convlstm-rain --out run predict --checkpoint run/checkpoint.txt --data run/synth.csv
    convlstm-rain --out run report run
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config, override
from .convlstm import NetworkSpec
from .datapipe import UNITS, VARIABLES, load_csv, save_csv
from .metrics import compare_reference_correlations, correlation_matrix
from .synth import SynthConfig, gen_advection
from .training import grad_check


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key=value run configuration file")
    parser.add_argument("--seed", type=int, default=default, help="random seed (overrides the config)")
    parser.add_argument("--out", default=default, help="output directory (overrides the config)")


def build_parser():
    parser = _Parser(prog="convlstm-rain", description=__doc__.split("\n\n")[0])
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a long-format CSV")
    p.add_argument("data")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset CSV")
    p.add_argument("--hours", type=int, default=2000)
    p.add_argument("--lead", type=int, default=6)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--dynamics", choices=["advection", "correlated-noise"], default="advection")
    p.add_argument("--name", default="synth.csv")

    p = sub.add_parser("correlate", parents=[common], help="predictor correlation matrix")
    p.add_argument("data")
    p.add_argument("--mode", choices=["mean", "pooled"], default="mean")

    p = sub.add_parser("train", parents=[common], help="train a network from the run config")
    p.add_argument("--data", help="dataset CSV (overrides the config)")

    p = sub.add_parser("predict", parents=[common], help="predict training/testing splits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lead", type=int)
    p.add_argument("--stats", help="normalization stats file (default: next to the checkpoint)")

    p = sub.add_parser("evaluate", parents=[common], help="CC/NSE/NRMSE for prediction files")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--obs", help="dataset CSV supplying observed tp instead of the file's column")
    p.add_argument("--phase", choices=["training", "testing"])
    p.add_argument("--lead", type=int)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--filters", default="4,2", help="layer1,layer2 filters of the check network")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--fd-step", type=float, default=1e-5)

    p = sub.add_parser("report", parents=[common], help="per-grid metrics table and figures from prediction files")
    p.add_argument("directory", nargs="?")
    return parser


def _run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    return override(cfg, seed=args.seed, out=args.out)


def _need_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def cmd_ingest(args, cfg):
    ds = load_csv(_need_file(args.data, "data file"))
    lines = [
        f"file: {args.data}",
        "status: ok",
        f"start: {ds.time_at(0).strftime('%Y-%m-%dT%H:00:00Z')}",
        f"end: {ds.time_at(ds.hours - 1).strftime('%Y-%m-%dT%H:00:00Z')}",
        f"hours: {ds.hours}",
    ]
    for k, code in enumerate(VARIABLES):
        v = ds.values[:, k]
        lines.append(f"{code} [{UNITS[code]}]: min={v.min()!r} max={v.max()!r} mean={v.mean()!r}")
    text = "\n".join(lines) + "\n"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ingest_report.txt").write_text(text)
    print(text, end="")


def cmd_synth(args, cfg):
    ds = gen_advection(SynthConfig(
        seed=cfg.seed, hours=args.hours, dynamics=args.dynamics,
        signal_to_noise=args.snr, lead=args.lead,
    ))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.name
    save_csv(ds, path)
    print(f"wrote {path} ({ds.hours} hours)")


def cmd_correlate(args, cfg):
    from .plotting import correlation_heatmap

    ds = load_csv(_need_file(args.data, "data file"))
    matrix = correlation_matrix(ds, mode=args.mode)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "correlation_matrix.csv").write_text(matrix.to_csv())
    lines = [f"mode: {args.mode}", f"undefined: {','.join(matrix.undefined) or 'none'}"]
    lines += [f"tp-{code}: {matrix.get('tp', code):+.4f}" for code in VARIABLES[:-1]]
    lines.append("reference comparison (advisory, not asserted):")
    lines += ["  " + s for s in compare_reference_correlations(matrix)]
    text = "\n".join(lines) + "\n"
    (out / "correlation_summary.txt").write_text(text)
    correlation_heatmap(matrix, out / "correlation_matrix.svg")
    print(text, end="")


def cmd_train(args, cfg):
    data = args.data or cfg.data
    if not data:
        raise UsageError("train needs a dataset: set data= in the config or pass --data")
    ds = load_csv(_need_file(data, "data file"))
    _, history, prep = pipeline.run_training(cfg, ds, cfg.out, log=print)
    print(f"stop={history.stop_reason} best_epoch={history.best_epoch} "
          f"train={len(prep.train)} validation={len(prep.validation)} test={len(prep.test)}")


def cmd_predict(args, cfg):
    ds = load_csv(_need_file(args.data, "data file"))
    written = pipeline.run_predict(
        _need_file(args.checkpoint, "checkpoint"), ds, cfg.out,
        stats_path=args.stats, lead=args.lead,
    )
    for path in written:
        print(f"wrote {path}")


def cmd_evaluate(args, cfg):
    paths = [_need_file(p, "predictions file") for p in args.predictions]
    obs = load_csv(_need_file(args.obs, "observation file")) if args.obs else None
    report, _ = pipeline.evaluate_files(paths, phase=args.phase, lead=args.lead, obs_dataset=obs)
    pipeline.write_report(report, cfg.out)
    print(report.to_text(), end="")


def cmd_gradcheck(args, cfg):
    try:
        f1, f2 = (int(v) for v in args.filters.split(","))
    except ValueError:
        raise UsageError(f"--filters expects two integers, got {args.filters!r}") from None
    spec = NetworkSpec(
        layer1_filters=f1, layer2_filters=f2, kernel=tuple(cfg.kernel),
        activation=cfg.activation, peepholes=cfg.peepholes,
    )
    params, x, y = pipeline.gradcheck_instance(spec, steps=args.steps, batch=args.batch, seed=cfg.seed)
    err = grad_check(spec, params, x, y, fd_step=args.fd_step)
    print(f"max_relative_error={err!r}")


def cmd_report(args, cfg):
    directory = args.directory or cfg.out
    report = pipeline.build_report(directory, cfg.out)
    print(report.to_text(), end="")


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "correlate": cmd_correlate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _run_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        kind = type(exc).__name__
        message = " ".join(str(exc).split())
        print(f"error: {kind}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
