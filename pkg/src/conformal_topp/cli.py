"""Batch command-line front door.

Subcommands: synth, validate, calibrate, evaluate, curve, decode. Every
command prints a single-line JSON summary to stdout and writes its artifacts
to files atomically (temp file + rename), so failures never leave partial
output. Exit codes: 0 success, 2 usage/config error, 3 data validation
failure, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

from . import conformal, decoding, evaluation, records, synth

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class UsageError(ValueError):
    pass


def parse_alphas(text: str) -> list:
    """Parse `start:stop:step` into an inclusive sweep (stop within 1e-12)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--alphas expects start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(x) for x in parts)
    except ValueError as e:
        raise UsageError(f"bad --alphas value: {e}") from e
    if step <= 0 or stop < start:
        raise UsageError("--alphas needs step > 0 and stop >= start")
    out = []
    a = start
    while a <= stop + 1e-12:
        if not (0.0 < a < 1.0):
            raise UsageError(f"alpha {a} outside (0,1)")
        out.append(a)
        a = start + len(out) * step
    return out


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise UsageError(f"--alpha must be in (0,1), got {alpha}")


def cmd_synth(args) -> dict:
    with open(args.spec, "r", encoding="utf-8") as f:
        try:
            spec = synth.spec_from_json(f.read())
        except (ValueError, TypeError) as e:
            raise UsageError(f"bad synth spec: {e}") from e
    ds = synth.generate(spec)
    records.write_dataset(ds, args.out)
    return {"n_records": len(ds), "out": args.out}


def cmd_validate(args) -> dict:
    ds, report = records.read_dataset(args.path, strict=args.strict, eps=args.eps)
    return {"n_kept": report.n_kept, "n_dropped": report.n_dropped,
            "violations": report.violations}


def cmd_calibrate(args) -> dict:
    _check_alpha(args.alpha)
    if args.bins < 0:
        raise UsageError("--bins must be >= 0")
    ds, _ = records.read_dataset(args.input, strict=True, eps=args.eps)
    if not ds.records:
        raise records.RecordFormatError("no records in input")
    if args.bins >= 2:
        model = conformal.fit_binned(ds, args.alpha, args.bins, eps=args.eps)
    else:
        model = conformal.fit_global(ds, args.alpha, eps=args.eps)
    conformal.save_model(model, args.out)
    return {"mode": model.mode, "num_bins": model.num_bins,
            "qhats": list(model.qhats), "n": model.n_calibration, "out": args.out}


def cmd_evaluate(args) -> dict:
    model = conformal.load_model(args.model)
    ds, _ = records.read_dataset(args.test, strict=True, eps=args.eps)
    rep = evaluation.empirical_coverage(model, ds, eps=args.eps)
    obj = evaluation.report_to_obj(rep)
    records.atomic_write_text(args.report, json.dumps(obj) + "\n")
    return {"coverage": rep.coverage, "target": rep.target,
            "theorem_upper": rep.theorem_upper, "mean_set_size": rep.mean_set_size,
            "report": args.report}


def cmd_curve(args) -> dict:
    alphas = parse_alphas(args.alphas)
    if args.bins < 0:
        raise UsageError("--bins must be >= 0")
    ds, _ = records.read_dataset(args.input, strict=True, eps=args.eps)
    mode = "binned" if args.bins >= 2 else "global"
    pts = evaluation.qhat_curve(ds, alphas, mode=mode, num_bins=max(args.bins, 1),
                                eps=args.eps)
    evaluation.write_curve_csv(pts, args.csv)
    return {"n_points": len(pts), "mode": mode, "csv": args.csv}


def cmd_decode(args) -> dict:
    if args.max_steps < 1:
        raise UsageError("--max-steps must be >= 1")
    model = conformal.load_model(args.model)
    rng = decoding.make_rng(args.seed)
    lines = []
    n = 0
    # stream line-by-line so large-vocab files never need to be memory-resident
    with open(args.stream, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise records.RecordFormatError(f"line {lineno}: bad JSON ({e.msg})") from e
            if lineno == 1 and isinstance(obj, dict) and set(obj) == {"meta"}:
                continue
            if "probs" not in obj or "ids" in obj:
                raise records.RecordFormatError(f"line {lineno}: decode stream needs dense probs")
            step = decoding.conformal_decode_step(obj["probs"], model, rng)
            lines.append(json.dumps(decoding.step_to_obj(step)))
            n += 1
            if n >= args.max_steps:
                break
    records.atomic_write_text(args.trace, "\n".join(lines) + ("\n" if lines else ""))
    return {"n_steps": n, "trace": args.trace}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conformal-topp",
                                description="Conformal calibration of top-p decoding")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic record file from a spec")
    sp.add_argument("spec", help="SynthSpec JSON config file")
    sp.add_argument("out", help="output JSONL record file")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("validate", help="validate a record file")
    sp.add_argument("path")
    sp.add_argument("--strict", action="store_true",
                    help="abort on first bad row instead of dropping")
    sp.add_argument("--eps", type=float, default=records.SUM_EPS,
                    help="probability-sum tolerance")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("calibrate", help="fit a calibration model")
    sp.add_argument("input")
    sp.add_argument("out", help="output model JSON")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--bins", type=int, default=0,
                    help="entropy bins; 0 or 1 fits a global model")
    sp.add_argument("--eps", type=float, default=records.SUM_EPS)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("evaluate", help="measure coverage of a model on a test file")
    sp.add_argument("model")
    sp.add_argument("test")
    sp.add_argument("report", help="output report JSON")
    sp.add_argument("--eps", type=float, default=records.SUM_EPS)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("curve", help="q-hat vs confidence sweep to CSV")
    sp.add_argument("input")
    sp.add_argument("csv", help="output CSV (x,y,series)")
    sp.add_argument("--alphas", required=True, help="start:stop:step, inclusive")
    sp.add_argument("--bins", type=int, default=0)
    sp.add_argument("--eps", type=float, default=records.SUM_EPS)
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("decode", help="conformal decoding over a distribution stream")
    sp.add_argument("model")
    sp.add_argument("stream", help="JSONL of dense distributions")
    sp.add_argument("trace", help="output decode trace JSONL")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-steps", type=int, default=2**62)
    sp.set_defaults(func=cmd_decode)
    return p


def main(argv=None) -> int:
    t0 = time.perf_counter()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0

    def summary(status, extra, error=None):
        out = {"command": args.command, "status": status,
               "elapsed_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
        if error is not None:
            out["error"] = str(error)
        out.update(extra)
        print(json.dumps(out))

    try:
        extra = args.func(args)
    except UsageError as e:
        summary("error", {}, e)
        return EXIT_USAGE
    except FileNotFoundError as e:
        summary("error", {}, e)
        return EXIT_USAGE
    except (records.RecordFormatError, records.InvalidRecordError) as e:
        summary("error", {}, e)
        return EXIT_DATA
    except ValueError as e:
        summary("error", {}, e)
        return EXIT_USAGE
    except Exception as e:   # noqa: BLE001 - contract: internal breach -> 4
        summary("error", {}, e)
        return EXIT_INTERNAL
    summary("ok", extra)
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
