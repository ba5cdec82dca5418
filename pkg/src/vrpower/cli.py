"""Command-line front end.

Every command writes its primary outputs plus a ``<output>.manifest.json``
recording the command, flags, tool version and SHA-256 digests of inputs
and outputs. Errors go to stderr as ``error[<category>]: message`` and the
exit code is non-zero.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    MEASUREMENT_HEADER,
    RAW_UNITS,
    SCALED_UNITS,
    VARIABLES,
    Measurement,
    ModelSpec,
    _measurement_from_row,
    build_design,
    dump_measurements,
    load_measurements,
)
from .errors import ParseError, ValidationError, VRPowerError
from .evaluation import (
    breakdown_csv,
    contributions,
    contributions_csv,
    cross_validate,
    estimate_savings,
    evaluation_csv,
    folds_csv,
    format_table,
    prune_audit,
    prune_csv,
    summary_csv,
)
from .solver import fit, load_model, predict, save_model
from .synth import DEFAULT_GROUND_TRUTH, SynthConfig, generate
from .trace import WindowSpec, mean_power, net_power, parse_trace

SESSION_HEADER = ("trace",) + MEASUREMENT_HEADER[:-1]
SPEC_SCHEMA_VERSION = 1


class Run:
    """Tracks files read and written by one command for its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.params = {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")
        }
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def read(self, path) -> bytes:
        data = Path(path).read_bytes()
        self.inputs[str(path)] = hashlib.sha256(data).hexdigest()
        return data

    def write(self, path, data: bytes) -> None:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.outputs[str(path)] = hashlib.sha256(data).hexdigest()

    def manifest(self, primary) -> None:
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "parameters": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.params.items()},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        Path(f"{primary}.manifest.json").write_text(
            json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8"
        )


def _context(exc: VRPowerError, where) -> VRPowerError:
    exc.context = str(where)
    return exc


def _spec(text: str, run: Run | None = None) -> ModelSpec:
    """Preset name, comma-separated tags, or a spec file written by ``prune``."""
    if text.endswith(".json") and Path(text).is_file():
        data = run.read(text) if run else Path(text).read_bytes()
        return load_spec(data)
    return ModelSpec.parse(text)


def dump_spec(spec: ModelSpec) -> bytes:
    doc = {"schema_version": SPEC_SCHEMA_VERSION, "variables": list(spec.variables)}
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def load_spec(data: bytes) -> ModelSpec:
    try:
        doc = json.loads(data.decode("utf-8"))
        variables = doc["variables"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"invalid spec file: {exc}") from None
    return ModelSpec(tuple(variables))


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _measurements(run: Run, path) -> list[Measurement]:
    try:
        return load_measurements(run.read(path))
    except VRPowerError as exc:
        raise _context(exc, path)


# -- commands -----------------------------------------------------------------

def load_sessions(data: bytes) -> list[tuple[str, dict[str, str], int]]:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    header = [h.strip() for h in next(reader, [])]
    missing = [c for c in SESSION_HEADER if c not in header]
    if missing:
        raise ParseError(f"session file missing column(s): {', '.join(missing)}", line=1)
    rows = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(f"expected {len(header)} fields, got {len(row)}", row=row_no)
        rec = dict(zip(header, row))
        rows.append((rec.pop("trace"), rec, row_no))
    return rows


def cmd_ingest(args, run: Run) -> None:
    window = WindowSpec(args.window_start, args.window_dur)
    if args.idle_w is not None:
        idle = args.idle_w
    elif args.idle_trace is not None:
        try:
            idle = mean_power(parse_trace(run.read(args.idle_trace)), window)
        except VRPowerError as exc:
            raise _context(exc, args.idle_trace)
    else:
        raise ValidationError("give the idle power with --idle-w or --idle-trace")

    base = Path(args.sessions).parent
    try:
        sessions = load_sessions(run.read(args.sessions))
    except VRPowerError as exc:
        raise _context(exc, args.sessions)
    out = []
    for trace_name, rec, row_no in sessions:
        path = base / trace_name
        try:
            gross = mean_power(parse_trace(run.read(path)), window)
            rec["power_w"] = repr(net_power(gross, idle))
            out.append(_measurement_from_row(rec, row_no))
        except FileNotFoundError:
            raise _context(ValidationError("trace file not found", row=row_no), path) from None
        except VRPowerError as exc:
            raise _context(exc, path)
    run.write(args.output, dump_measurements(out))
    print(f"wrote {len(out)} measurement(s) to {args.output}")


def _param_table(model) -> str:
    rows = []
    for i, name in enumerate(model.spec.columns):
        rows.append([
            name,
            f"{model.params[i]:.6g}", SCALED_UNITS.get(name, "W"),
            f"{model.params_raw[i]:.6g}", RAW_UNITS.get(name, "W"),
        ])
    return format_table(["param", "scaled", "unit", "raw", "raw unit"], rows)


def cmd_fit(args, run: Run) -> None:
    spec = _spec(args.spec, run)
    ms = _measurements(run, args.measurements)
    model = fit(build_design(ms, spec), args.bounds)
    run.write(args.output, save_model(model))
    print(_param_table(model))
    print(f"rss = {model.rss:.6g} W^2 over {model.n_train} measurements")


def cmd_cv(args, run: Run) -> None:
    spec = _spec(args.spec, run)
    ms = _measurements(run, args.measurements)
    report = cross_validate(ms, spec, args.bounds, args.jobs)
    prefix = args.output
    run.write(f"{prefix}.measurements.csv", evaluation_csv(report, ms))
    run.write(f"{prefix}.folds.csv", folds_csv(report))
    run.write(f"{prefix}.summary.csv", summary_csv(report))
    print(f"spec: {str(spec) or '(intercept only)'}  folds: {len(report.folds)}  N = {len(ms)}")
    print(f"mean relative error: {report.mean_rel_error * 100:.3f} %")
    print(f"max relative error:  {report.max_rel_error * 100:.3f} %")


def cmd_prune(args, run: Run) -> None:
    baseline = _spec(args.baseline, run)
    ms = _measurements(run, args.measurements)
    result = prune_audit(ms, baseline, args.threshold, mode=args.mode,
                         threshold_kind=args.threshold_kind, criterion=args.criterion,
                         bounds=args.bounds, jobs=args.jobs)
    run.write(args.output, dump_spec(result.spec))
    if args.audit:
        run.write(args.audit, prune_csv(result))
    unit = "pp" if args.threshold_kind == "absolute" else "%"
    rows = [[s.variable, f"{s.error_without * 100:.3f}", f"{s.increase:+.3f}",
             "keep" if s.retained else "drop"] for s in result.steps]
    print(f"baseline error: {result.baseline_error * 100:.3f} %  threshold: {args.threshold} {unit}")
    print(format_table(["variable", "error without [%]", f"increase [{unit}]", "decision"], rows))
    print(f"retained: {str(result.spec) or '(intercept only)'}")


def _query_features(args) -> dict[str, float]:
    w, h = args.resolution
    feats = {"S": float(w * h), "f": args.fps, "b": args.bitrate_bps}
    for flag in VARIABLES[3:]:
        feats[flag] = 0.0
    for item in filter(None, (args.flags or "").split(",")):
        name, _, value = item.partition("=")
        if name.strip() not in feats or name.strip() in ("S", "f", "b"):
            raise ValidationError(f"unknown flag {name!r}")
        feats[name.strip()] = float(value or 1)
    return feats


def cmd_predict(args, run: Run) -> None:
    model = load_model(run.read(args.model))
    if args.measurements:
        ms = _measurements(run, args.measurements)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "sequence", "measured_w", "estimated_w", "negative"])
        negatives = 0
        for j, m in enumerate(ms):
            est = predict(model, m)
            negatives += est < 0
            writer.writerow([j, m.sequence.name, repr(m.power), repr(est), int(est < 0)])
        if args.output:
            run.write(args.output, buf.getvalue().encode("utf-8"))
        else:
            sys.stdout.write(buf.getvalue())
        if negatives:
            print(f"warning: {negatives} negative prediction(s) (extrapolation)", file=sys.stderr)
        return
    if args.resolution is None:
        raise ValidationError("predict needs --measurements or --resolution")
    est = predict(model, _query_features(args))
    note = "  (negative: extrapolation outside the training range)" if est < 0 else ""
    print(f"estimated power: {est!r} W{note}")


def cmd_contrib(args, run: Run) -> None:
    model = load_model(run.read(args.model))
    ms = _measurements(run, args.measurements)
    report = contributions(model, ms)
    run.write(f"{args.output}.contrib.csv", contributions_csv(report))
    run.write(f"{args.output}.breakdown.csv", breakdown_csv(model, ms))
    rows = [[c.variable, f"{c.c_max * 100:.2f}", c.witness_sequence, c.witness_index]
            for c in report.per_variable]
    print(format_table(["variable", "C_max [%]", "witness", "row"], rows))


def cmd_savings(args, run: Run) -> None:
    model = load_model(run.read(args.model))
    est = estimate_savings(model, args.from_res, args.to_res, args.reference_w)
    doc = {
        "from_resolution": est.from_resolution,
        "to_resolution": est.to_resolution,
        "delta_p_w": est.delta_p,
        "reference_power_w": est.reference_power,
        "relative_saving": est.relative_saving,
    }
    if args.output:
        run.write(args.output, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
    print(f"delta_p: {est.delta_p:.6f} W")
    if est.relative_saving is not None:
        print(f"relative saving: {est.relative_saving * 100:.3f} % of {est.reference_power!r} W")


def cmd_synth(args, run: Run) -> None:
    truth = dict(DEFAULT_GROUND_TRUTH)
    if args.truth:
        model = load_model(run.read(args.truth))
        truth = {c: float(v) for c, v in zip(model.spec.columns, model.params_raw)}
    cfg = SynthConfig(truth, noise_sigma=args.sigma, seed=args.seed)
    ms = generate(cfg)
    run.write(args.output, dump_measurements(ms))
    truth_path = args.truth_out or f"{args.output}.truth.json"
    run.write(truth_path, save_model(cfg.ground_truth_model()))
    print(f"wrote {len(ms)} measurement(s) to {args.output}, ground truth to {truth_path}")


# -- parser -------------------------------------------------------------------

GLOBAL_DEFAULTS = {
    "window_start": 2.0,
    "window_dur": 7.0,
    "bounds": "none",
    "threshold": 0.5,
    "jobs": os.cpu_count() or 1,
    "seed": 0,
}


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    s = argparse.SUPPRESS
    g.add_argument("--window-start", type=float, default=s, help="window start in s after trace start (default 2.0)")
    g.add_argument("--window-dur", type=float, default=s, help="window length in s (default 7.0)")
    g.add_argument("--bounds", choices=["none", "nonneg"], default=s, help="parameter bounds (default none)")
    g.add_argument("--threshold", type=float, default=s, help="pruning threshold (default 0.5)")
    g.add_argument("--jobs", type=int, default=s, help="parallel folds (default: CPU count)")
    g.add_argument("--seed", type=int, default=s, help="RNG seed for synth (default 0)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="vrpower", parents=[common],
        description="Fit and analyse linear power models for VR video playback.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="reduce traces to a measurement CSV")
    p.add_argument("sessions", help="session CSV mapping trace files to metadata")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--idle-w", type=float, help="idle power in W (takes precedence)")
    p.add_argument("--idle-trace", help="idle trace file, reduced with the same window")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", parents=[common], help="fit a model")
    p.add_argument("measurements")
    p.add_argument("--spec", default="advanced", help="advanced, simplified, tag list or spec file")
    p.add_argument("-o", "--output", required=True, help="model JSON file")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", parents=[common], help="leave-one-sequence-out cross-validation")
    p.add_argument("measurements")
    p.add_argument("--spec", default="advanced")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("prune", parents=[common], help="drop variables that barely help")
    p.add_argument("measurements")
    p.add_argument("--baseline", default="advanced")
    p.add_argument("--mode", choices=["one-at-a-time", "sequential"], default="one-at-a-time")
    p.add_argument("--threshold-kind", choices=["absolute", "relative"], default="absolute",
                   help="absolute: percentage points; relative: percent of baseline error")
    p.add_argument("--criterion", choices=["cv", "train"], default="cv")
    p.add_argument("-o", "--output", required=True, help="spec JSON file")
    p.add_argument("--audit", help="CSV with per-variable error deltas")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("predict", parents=[common], help="estimate power with a model")
    p.add_argument("model")
    p.add_argument("--measurements", help="measurement CSV to predict row by row")
    p.add_argument("-o", "--output")
    p.add_argument("--resolution", type=_resolution, help="WxH")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--bitrate-bps", type=float, default=0.0)
    p.add_argument("--flags", help="e.g. F_st=1,F_360=1")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("contrib", parents=[common], help="maximum contribution per variable")
    p.add_argument("model")
    p.add_argument("measurements")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_contrib)

    p = sub.add_parser("savings", parents=[common], help="power saved by a resolution change")
    p.add_argument("model")
    p.add_argument("--from", dest="from_res", type=_resolution, required=True)
    p.add_argument("--to", dest="to_res", type=_resolution, required=True)
    p.add_argument("--reference-w", type=float, help="total power the saving is relative to")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_savings)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic measurement set")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="multiplicative noise std-dev")
    p.add_argument("--truth", help="model file with ground-truth parameters")
    p.add_argument("--truth-out", help="where to write the ground-truth model")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    run = Run(args.command, args)
    try:
        args.func(args, run)
    except VRPowerError as exc:
        where = getattr(exc, "context", None)
        prefix = f"{where}: " if where else ""
        print(f"error[{exc.category}]: {prefix}{exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 1
    primary = getattr(args, "output", None)
    if primary and run.outputs:
        run.manifest(primary)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
