"""Command line entry point: ``ptqec run|reproduce|export-decoder``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .codes import CodeDefinitionError
from .experiment import ConfigError, PUBLISHED_TABLES, decoder_export, load_config, reproduce, run, write_csv
from .process import CapabilityError

log = logging.getLogger("ptqec")

# exit codes
EXIT_CONFIG = 2
EXIT_CAPABILITY = 3
EXIT_INTERNAL = 1


def _error(kind: str, exc: Exception, code: int) -> int:
    json.dump({"error": kind, "message": str(exc)}, sys.stderr)
    sys.stderr.write("\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ptqec", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate a config grid")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override output path")
    p.add_argument("--format", choices=["csv", "json"], help="override output format")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("reproduce", help="Steane results table against published values")
    p.add_argument("table_id", choices=sorted(PUBLISHED_TABLES))
    p.add_argument("--chis", type=int, nargs="+", default=[128, 256, 512, 1024])
    p.add_argument("--reference-bond", type=int, default=2048)
    p.add_argument("--sv-threshold", type=float, default=1e-8)
    p.add_argument("--convention", default="total_over_three")
    p.add_argument("--block-order", default=None)
    p.add_argument("-o", "--output", help="write JSON here instead of stdout")

    p = sub.add_parser("export-decoder", help="write the decoder table of a single-point config")
    p.add_argument("config")
    p.add_argument("path")
    return ap


def _print_table(result: dict) -> None:
    print(f"# {result['table']}  params={result['params']}  block_order={','.join(result['block_order'])}")
    print(f"{'chi':>22} {'p_est':>12} {'p_perf':>12} {'1-F':>12} {'ref p_est':>12} {'ref p_perf':>12} {'dev est':>9} {'dev perf':>9}")
    for r in result["rows"]:
        ref_e = r["published_p_est"]
        cells = [
            f"{r['chi']!s:>22}",
            f"{r['p_est']:12.4e}",
            f"{r['p_perf']:12.4e}",
            f"{r['one_minus_fidelity']:12.4e}",
            f"{ref_e:12.4e}" if ref_e is not None else f"{'-':>12}",
            f"{r['published_p_perf']:12.4e}" if r["published_p_perf"] is not None else f"{'-':>12}",
            f"{r['rel_dev_p_est']:+9.2%}" if r["rel_dev_p_est"] is not None else f"{'-':>9}",
            f"{r['rel_dev_p_perf']:+9.2%}" if r["rel_dev_p_perf"] is not None else f"{'-':>9}",
        ]
        print(" ".join(cells))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.output:
                cfg.output_path = args.output
            if args.format:
                cfg.output_format = args.format
            if args.workers:
                cfg.workers = args.workers
            manifest = run(cfg)
            if not cfg.output_path:
                if cfg.output_format == "json":
                    print(manifest.to_json())
                else:
                    write_csv(manifest.rows, cfg.backend, sys.stdout)
            else:
                log.info("wrote %d rows to %s", len(manifest.rows), cfg.output_path)
        elif args.command == "reproduce":
            result = reproduce(
                args.table_id,
                chis=args.chis,
                reference_bond=args.reference_bond,
                depolarizing_convention=args.convention,
                block_order=args.block_order,
                sv_threshold=args.sv_threshold,
            )
            if args.output:
                with open(args.output, "w") as fh:
                    json.dump(result, fh, indent=2)
            _print_table(result)
        elif args.command == "export-decoder":
            path = decoder_export(load_config(args.config), args.path)
            log.info("wrote %s", path)
    except (ConfigError, CodeDefinitionError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except CapabilityError as exc:
        return _error("capability", exc, EXIT_CAPABILITY)
    except Exception as exc:  # noqa: BLE001 - surfaced as machine-readable error
        return _error(type(exc).__name__, exc, EXIT_INTERNAL)
    return 0


if __name__ == "__main__":
    sys.exit(main())
