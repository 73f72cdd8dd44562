"""Command-line entry point: ``sdec --config run.json [--seed N] [--out DIR]``.

Writes ``<command>.csv`` (header row plus data rows) and ``<command>.json``
(resolved configuration, version, wall time, run metadata) into the output
directory. Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

from . import __version__
from .bench import run_command
from .config import parse_config, serialize_config
from .errors import ContractError, NumericalAbort, RankDeficiencyError
from .seeding import check_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("sdec")


def version_string() -> str:
    """Package version, plus the git commit when running from a checkout."""
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=False,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def worker_cap() -> int:
    raw = os.environ.get("SDEC_THREADS", "")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ContractError(f"SDEC_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ContractError(f"SDEC_THREADS must be a positive integer, got {raw!r}")
    return value


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdec", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit); overrides the config")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output' or '.')")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": check_seed(args.seed)})
        workers = worker_cap()
    except (OSError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    try:
        header, rows, meta = run_command(cfg)
    except (NumericalAbort, RankDeficiencyError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(diag, default=str), file=sys.stderr)
        return EXIT_NUMERICAL
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_csv(out / f"{cfg.command}.csv", header, rows)
    sidecar = {
        "config": json.loads(serialize_config(cfg)),
        "version": version_string(),
        "wall_time_seconds": meta.pop("wall_time_seconds", None),
        "workers": workers,
        "rows": len(rows),
        "metadata": meta,
    }
    (out / f"{cfg.command}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str), encoding="utf-8")
    log.info("wrote %d rows to %s", len(rows), out / f"{cfg.command}.csv")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
