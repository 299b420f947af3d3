"""
Command-line entry point of topoprobe
"""

import argparse
import logging
import sys
from datetime import datetime, timezone
from typing import List, Optional

from dotenv import load_dotenv

from src import __version__
from src.backend import SimulatorBackend
from src.config import BACKENDS, RunConfig
from src.device import DeviceSpec
from src.engine import BenchmarkEngine
from src.errors import ConfigError, TopoprobeError
from src.probes import ProbeSettings
from src.profiles import BUILTIN_NAMES, SCALABLE_LEVELS, resolve_device, scale_profile
from src.report import (
    SCHEMA_PATH,
    Provenance,
    assemble_report,
    emit_json,
    emit_markdown,
    write_sweep_csvs,
)

logger = logging.getLogger("topoprobe")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2

JSON_REPORT = "topology_report.json"
MARKDOWN_REPORT = "topology_report.md"


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        prog="topoprobe",
        description="topoprobe: discover a GPU memory topology with pointer-chase microbenchmarks",
    )
    parser.add_argument(
        "--device",
        type=str,
        default="synthetic-h100",
        help=f"Builtin profile ({', '.join(BUILTIN_NAMES)}) or path to a device spec JSON file",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Seed for the simulated noise (default: $TOPOPROBE_SEED or 0)",
    )
    parser.add_argument(
        "--alpha",
        type=float,
        action="append",
        help="Significance level of the change-point test; repeat for a grid",
    )
    parser.add_argument("-j", "--json", action="store_true", help="Write the JSON report to out-dir")
    parser.add_argument(
        "-p", "--markdown", action="store_true", help="Write a Markdown report to out-dir"
    )
    parser.add_argument(
        "-o", "--raw", action="store_true", help="Write raw size-sweep latencies as CSV"
    )
    parser.add_argument(
        "-g", "--graphs", action="store_true", help="Write reduced size-sweep series as CSV"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="Only log warnings and hide progress bars"
    )
    parser.add_argument(
        "--only",
        type=str,
        action="append",
        help="Restrict the run to one memory element; repeat for more",
    )
    parser.add_argument(
        "--out-dir",
        type=str,
        default=None,
        help="Directory for report files (default: $TOPOPROBE_OUT_DIR or the current directory)",
    )
    parser.add_argument(
        "--no-timestamp",
        action="store_true",
        help="Leave the timestamp out of the report for byte-identical reruns",
    )
    parser.add_argument("--backend", type=str, default="sim", choices=BACKENDS)
    parser.add_argument(
        "--workers", type=int, default=1, help="Elements benchmarked in parallel (default: 1)"
    )
    parser.add_argument(
        "--scale",
        type=int,
        default=None,
        help="Divide L2/L3 sizes of the device by this factor",
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    parser.add_argument(
        "--print-schema", action="store_true", help="Print the JSON schema of the report and exit"
    )
    parser.add_argument("--version", action="version", version=f"topoprobe {__version__}")
    return parser.parse_args(argv)


def configure_logging(config: RunConfig) -> None:
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    if config.debug:
        level = logging.DEBUG
    elif config.quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.getLogger("topoprobe").setLevel(level)


def build_device(config: RunConfig) -> DeviceSpec:
    spec = resolve_device(config.device)
    if config.scale is not None:
        spec = scale_profile(spec, config.scale, levels=SCALABLE_LEVELS)
    return spec


def run(config: RunConfig) -> int:
    """
    Run all planned benchmarks for one device and emit the reports

    Returns:
        0 on success, 2 when a benchmark was inconclusive, 1 on errors
    """
    try:
        spec = build_device(config)
        settings = ProbeSettings(alpha_grid=config.alpha_grid)
        engine = BenchmarkEngine(
            lambda seed: SimulatorBackend(spec, seed),
            settings=settings,
            seed=config.seed,
            workers=config.workers,
            only=config.only,
            show_progress=not config.quiet,
        )
        outcome = engine.run()

        timestamp = (
            datetime.now(timezone.utc).isoformat(timespec="seconds") if config.timestamp else None
        )
        provenance = Provenance(
            seed=config.seed,
            backend_id=outcome.backend_id,
            timestamp=timestamp,
            alpha_grid=list(config.alpha_grid),
        )
        report = assemble_report(
            outcome.api_info,
            outcome.results,
            present=outcome.present,
            only=config.only,
            provenance=provenance,
        )
        text = emit_json(report)

        if config.writes_files:
            config.out_dir.mkdir(parents=True, exist_ok=True)
        if config.json_to_stdout:
            sys.stdout.write(text + "\n")
            sys.stdout.flush()
        else:
            path = config.out_dir / JSON_REPORT
            path.write_text(text + "\n", encoding="utf-8")
            logger.info(f"Wrote {path}")
        if config.write_markdown:
            path = config.out_dir / MARKDOWN_REPORT
            path.write_text(emit_markdown(report), encoding="utf-8")
            logger.info(f"Wrote {path}")
        if config.write_raw or config.write_graphs:
            write_sweep_csvs(
                outcome.sweeps, config.out_dir, raw=config.write_raw, reduced=config.write_graphs
            )
    except TopoprobeError as e:
        logger.error(f"topoprobe failed: {e!s}")
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"Cannot write output: {e!s}")
        return EXIT_ERROR

    if outcome.inconclusive:
        logger.warning(f"{len(outcome.inconclusive)} inconclusive result(s)")
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point"""
    load_dotenv()
    args = parse_args(argv)
    if args.print_schema:
        sys.stdout.write(SCHEMA_PATH.read_text(encoding="utf-8"))
        sys.exit(EXIT_OK)
    try:
        config = RunConfig.from_args(args)
    except ConfigError as e:
        logging.basicConfig(format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        logger.error(f"{e!s}")
        sys.exit(EXIT_ERROR)
    configure_logging(config)
    sys.exit(run(config))


if __name__ == "__main__":
    main()
