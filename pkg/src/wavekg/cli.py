"""Command-line entry point: ``wavekg run | verify | resume | print-config-schema``.

Exit codes: 0 all enabled checks passed, 1 a check failed, 2 invalid
configuration, 3 blow-up, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, RunConfig, config_schema, parse_config, preset
from .fields import BlowUpError, InitialDataError
from .propagate import CallbackError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO = 0, 1, 2, 3, 4


def _load(args) -> RunConfig | None:
    if getattr(args, "preset", None):
        return preset(args.preset)
    if getattr(args, "config", None):
        return parse_config(Path(args.config).read_text())
    return None


def _report(checks, path: Path | None) -> int:
    failed = [c for c in checks if not c.passed]
    doc = {"passed": not failed, "checks": {c.name: c.to_dict() for c in checks}}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    print(text)
    for c in failed:
        print(f"FAILED {c.name}: {c.value!r} vs threshold {c.threshold!r}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_CHECK


def cmd_run(args) -> int:
    from .runner import simulate

    cfg = _load(args)
    if cfg is None:
        raise ConfigError("config", "give a config file or --preset")
    out = simulate(cfg, args.output, stop_at=args.stop_at)
    print(f"wrote {len(out.records)} records to {out.directory}")
    return _report(out.checks, None)


def cmd_resume(args) -> int:
    from .runner import latest_checkpoint, resume_run

    ck = Path(args.checkpoint)
    if ck.is_dir():
        found = latest_checkpoint(ck)
        if found is None:
            raise FileNotFoundError(f"no checkpoints under {ck}")
        ck = found
    out = resume_run(ck, args.output)
    print(f"resumed from {ck}; {len(out.records)} records in {out.directory}")
    return _report(out.checks, None)


def cmd_verify(args) -> int:
    from .runner import output_directory
    from .verify import run_suite

    cfg = _load(args)
    checks = run_suite(args.suite, cfg, args.output)
    report = None
    if args.output is not None or cfg is not None:
        report = output_directory(cfg or preset("smoke"), args.output) / f"verify-{args.suite}.json"
    return _report(checks, report)


def cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=2, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavekg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation with diagnostics")
    r.add_argument("config", nargs="?", help="TOML configuration file")
    r.add_argument("--preset", choices=sorted(PRESETS), help="use a built-in configuration")
    r.add_argument("--output", help="output directory (overrides the config and environment)")
    r.add_argument("--stop-at", type=float, default=None, help="stop early at this time")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run a check battery")
    v.add_argument("suite", choices=("identities", "oracles", "decay"))
    v.add_argument("config", nargs="?", help="TOML configuration file")
    v.add_argument("--preset", choices=sorted(PRESETS))
    v.add_argument("--output")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("resume", help="continue from a checkpoint file or output directory")
    c.add_argument("checkpoint")
    c.add_argument("--output")
    c.set_defaults(func=cmd_resume)

    s = sub.add_parser("print-config-schema", help="print every accepted configuration key")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InitialDataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except CallbackError as exc:
        if isinstance(exc.__cause__, BlowUpError):
            print(f"blow-up: {exc}", file=sys.stderr)
            return EXIT_BLOWUP
        print(f"diagnostics failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
