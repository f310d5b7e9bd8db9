"""Command line entry point: ``curiodyn validate|run|simulate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, CuriodynError, IngestionError, NonFiniteLikelihood, UnstableDrift
from .pipeline import (EXIT_CONFIG, EXIT_INGEST, EXIT_NONCONVERGENCE, EXIT_OK, STAGES,
                       PipelineConfig, run, validate, write_corpus)
from .simgen import simulate_corpus


def _stages(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="curiodyn", description="Curiosity dynamics pipeline.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="schema-check the configured inputs")
    v.add_argument("--config", required=True)

    r = sub.add_parser("run", help="run the pipeline stages")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--stages", type=_stages,
                   help=f"comma-separated subset of {','.join(STAGES)} (empty for none)")

    s = sub.add_parser("simulate", help="write a synthetic corpus and a config for it")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--groups", type=int, default=2)
    s.add_argument("--per-group", type=int, default=3)
    s.add_argument("--slices", type=int, default=180)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            corpus = simulate_corpus(args.seed, n_groups=args.groups,
                                     n_per_group=args.per_group, n_slices=args.slices)
            print(write_corpus(corpus, args.out, args.seed))
            return EXIT_OK
        overrides = {}
        if args.command == "run":
            overrides = {"seed": args.seed, "out_dir": args.out, "stages": args.stages}
        cfg = PipelineConfig.load(args.config, **overrides)
        if args.command == "validate":
            report = validate(cfg)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_INGEST if report["errors"] else EXIT_OK
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (NonFiniteLikelihood, UnstableDrift) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except CuriodynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
