"""Command-line entry point: ``homoglab <subcommand> --config FILE``.

Exit codes: 0 success, 2 partial success (some samples failed), 1 hard
failure, 64 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import build_config, parse_config
from .errors import ConfigError, HomogLabError, ParseError, ValidationError

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2, 64

CAMPAIGN_COMMANDS = {
    "ahom": "Ahom",
    "avg-decay": "AvgDecay",
    "growth": "Growth",
    "two-scale": "TwoScale",
    "appendix-a": "AppendixA",
    "helmholtz-probe": "HelmholtzProbe",
}

log = logging.getLogger("homoglab")


def build_parser() -> argparse.ArgumentParser:
    from .runner import default_threads

    parser = argparse.ArgumentParser(prog="homoglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML experiment file")
    common.add_argument("--out", type=Path, help="output directory (overrides [output].dir)")
    common.add_argument("--threads", type=int, default=default_threads(), help="worker threads")
    common.add_argument("--seed", type=int, help="override sampling.master_seed")
    common.add_argument("--verbose", action="store_true")

    gen = sub.add_parser("generate", parents=[common], help="sample coefficient fields")
    gen.add_argument("--count", type=int, help="number of samples (default: sampling.N)")
    cor = sub.add_parser("corrector", parents=[common], help="extended corrector of one sample")
    cor.add_argument("--index", type=int, default=0, help="sample index")
    for name in CAMPAIGN_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {CAMPAIGN_COMMANDS[name]} campaign")
    sub.add_parser("plotdata", parents=[common], help="CSV panels from an existing report.json")
    return parser


def _load(args):
    config = parse_config(args.config)
    kind = CAMPAIGN_COMMANDS.get(args.command)
    if kind is not None and config.campaign.kind != kind:
        raw = dict(config.raw)
        raw["campaign"] = dict(raw["campaign"], kind=kind)
        config = build_config(raw, config.source)
    return config.with_overrides(seed=args.seed, out=None if args.out is None else str(args.out))


def _generate(config, args) -> int:
    from .fields import FieldKind, save_field
    from .runner import check_writable, map_samples

    out = check_writable(config.output_dir)
    count = args.count if args.count is not None else config.sampling.N

    def one(i):
        a = config.medium(i)
        save_field(out / f"medium_{i:04d}.hglb", a.grid, a.values, FieldKind.COEFFICIENT)
        return {"index": i, "lam": a.lam, **{k: v for k, v in a.meta.items() if isinstance(v, (int, float, str))}}

    rows = map_samples(one, count, args.threads)
    (out / "media.json").write_text(
        json.dumps({"config_hash": config.hash(), "samples": rows}, indent=2, sort_keys=True) + "\n"
    )
    return EXIT_OK


def _corrector(config, args) -> int:
    from .corrector import compute_corrector, save_corrector
    from .runner import check_writable

    out = check_writable(config.output_dir)
    corr = compute_corrector(config.medium(args.index), config.solver)
    save_corrector(corr, out / f"corrector_{args.index:04d}")
    print(json.dumps({"ahom_sample": corr.ahom_sample.tolist()}))
    return EXIT_OK


def _plotdata(config, args) -> int:
    from .runner import emit_plotdata, load_report

    report_path = config.output_dir / "report.json"
    if not report_path.exists():
        log.error("no report at %s; run the campaign first", report_path)
        return EXIT_FAIL
    for p in emit_plotdata(load_report(report_path), config.output_dir / "plotdata"):
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load(args)
    except ParseError as exc:
        where = f" (line {exc.line})" if exc.line is not None else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        for fieldname, msg in exc.errors:
            print(f"config error: {fieldname}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "generate":
            return _generate(config, args)
        if args.command == "corrector":
            return _corrector(config, args)
        if args.command == "plotdata":
            return _plotdata(config, args)
        from .runner import run_campaign

        manifest, code = run_campaign(config, threads=args.threads)
        if manifest.error:
            print(f"campaign failed: {manifest.error}", file=sys.stderr)
        elif code == EXIT_PARTIAL:
            print(f"{len(manifest.failures)} sample(s) failed; see manifest.json", file=sys.stderr)
        print(config.output_dir / "report.json" if code != EXIT_FAIL else config.output_dir / "manifest.json")
        return code
    except (HomogLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
