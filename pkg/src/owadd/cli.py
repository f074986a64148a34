"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 method failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from . import harness
from .harness import DataError, ExperimentSpec, MethodError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_METHOD = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


def _load_spec(args) -> ExperimentSpec:
    if not args.spec:
        raise UsageError("--spec is required")
    try:
        spec = ExperimentSpec.load(args.spec)
    except FileNotFoundError as exc:
        raise DataError(f"spec file {args.spec} not found") from exc
    if getattr(args, "seed", None) is not None:
        spec.with_seed(args.seed)
    return spec


def _out_dir(args, spec: ExperimentSpec | None = None) -> Path:
    out = args.out or (spec.output_dir if spec else None)
    if not out:
        raise UsageError("--out is required (or set output_dir in the spec)")
    return Path(out)


def _methods(args, manifest_methods: list[dict] | None) -> list[dict]:
    overrides = _overrides(args.set)
    if args.method:
        return [{"id": m, "overrides": overrides} for m in args.method]
    methods = manifest_methods or [{"id": "owadd"}]
    return [{"id": m["id"], "overrides": {**m.get("overrides", {}), **overrides}} for m in methods]


def cmd_generate(args) -> None:
    spec = _load_spec(args)
    out = _out_dir(args, spec)
    manifest = harness.cmd_generate(spec, out)
    print(f"wrote {len(manifest['streams'])} streams and manifest.json to {out}")


def cmd_detect(args) -> None:
    spec = _load_spec(args) if args.spec else None
    out = _out_dir(args, spec)
    auto = tuple(args.auto_confirm) if args.auto_confirm else None
    if args.streams:
        streams = [(Path(p).name.removesuffix(".ows"), Path(p)) for p in args.streams]
        methods = _methods(args, spec.methods if spec else None)
        if auto is None and spec is not None:
            auto = spec.auto_confirm
    else:
        manifest = harness.load_manifest(out)
        streams = [(e["stream"], out / e["path"]) for e in manifest["streams"]]
        methods = _methods(args, manifest["spec"]["methods"])
        if auto is None and manifest["spec"].get("auto_confirm"):
            ac = manifest["spec"]["auto_confirm"]
            auto = (ac["fraction"], ac["consecutive"])
    if auto is not None:
        auto = (float(auto[0]), int(auto[1]))
    # stage into a scratch dir so a failure leaves no partial output behind
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out, prefix=".staging-") as staging:
        metas = harness.cmd_detect(streams, methods, staging, auto, args.jobs)
        for sub in ("verdicts", "labels", "runs"):
            (out / sub).mkdir(exist_ok=True)
            for f in sorted((Path(staging) / sub).iterdir()):
                shutil.move(str(f), out / sub / f.name)
    print(f"ran {len(metas)} detector runs into {out}")


def cmd_evaluate(args) -> None:
    out = _out_dir(args)
    report = harness.cmd_evaluate(out, args.method, args.r_variant)
    print(f"scored {len(report['runs'])} runs; wrote report.json and summary.csv to {out}")


def cmd_report(args) -> None:
    out = _out_dir(args)
    ranks = harness.cmd_report(out, args.diagnose, args.stream)
    for row in ranks:
        cells = " ".join(f"{k[:-5]}={v:.3f}" for k, v in row.items() if k != "method" and v is not None)
        print(f"{row['method']:>10} {cells}")


def cmd_run(args) -> None:
    spec = _load_spec(args)
    out = _out_dir(args, spec)
    report = harness.run_pipeline(spec, out, args.jobs)
    harness.cmd_report(out)
    print(f"pipeline complete: {len(report['runs'])} runs scored in {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="owadd", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="generate a stream corpus from an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override every group's base seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run a detector over stream files")
    p.add_argument("streams", nargs="*", help="stream files; defaults to the manifest in --out")
    p.add_argument("--spec")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", action="append", choices=harness.METHODS)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="method config override")
    p.add_argument("--auto-confirm", nargs=2, type=float, metavar=("FRACTION", "CHUNKS"))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score verdicts against ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--method", action="append", choices=harness.METHODS)
    p.add_argument("--r-variant", choices=harness.evaluation.R_VARIANTS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="rank table and KDE diagnostics")
    p.add_argument("--out", required=True)
    p.add_argument("--diagnose", type=int, nargs="+", metavar="CHUNK")
    p.add_argument("--stream")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="generate, detect, evaluate and report in one go")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"owadd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"owadd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MethodError as exc:
        print(f"owadd: method failure: {exc}", file=sys.stderr)
        return EXIT_METHOD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
