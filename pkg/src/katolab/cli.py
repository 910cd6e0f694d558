"""Command-line entry point: ``katolab <subcommand> --config cfg.yaml --out DIR``.

Exit codes: 0 when every gated check passes, 1 when a gate fails, 2 on a
configuration error (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._accel import use_numba
from .config import SUBCOMMANDS, ConfigError, load_config

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2


def fingerprint(cfg: dict) -> dict:
    return {
        "katolab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": use_numba(),
        "dim": cfg["grid"]["dim"],
        "N": cfg["grid"]["N"],
        "seed": cfg["seed"],
    }


def _run_one(name: str, cfg: dict) -> list[dict]:
    from .campaigns import RUNNERS

    return [r.as_dict() for r in RUNNERS[name](cfg)]


def _flatten(prefix: str, v, out: list):
    if isinstance(v, dict):
        for k in v:
            _flatten(f"{prefix}.{k}" if prefix else str(k), v[k], out)
    elif isinstance(v, list) and v and isinstance(v[0], (list, dict)):
        for i, x in enumerate(v):
            _flatten(f"{prefix}[{i}]", x, out)
    else:
        out.append((prefix, json.dumps(v) if isinstance(v, list) else v))


def write_reports(out: Path, name: str, cfg: dict, records: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"subcommand": name, "environment": fingerprint(cfg), "config": cfg, "records": records}
    (out / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "anchor", "gate", "passed", "key", "value"])
        for r in records:
            rows = []
            _flatten("", r["values"], rows)
            for key, val in rows:
                w.writerow([r["name"], r["anchor"], r["gate"], r["passed"], key, val])


def _failures(records: list[dict]) -> list[str]:
    return [r["name"] for r in records if r["gate"] and not r["passed"]]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="katolab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"katolab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS + ("all",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML campaign file")
        p.add_argument("--out", required=True, help="output directory for JSON and CSV reports")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel subcommands under 'all'")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    names = list(SUBCOMMANDS) if args.command == "all" else [args.command]
    out = Path(args.out)
    if args.jobs > 1 and len(names) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = dict(zip(names, pool.map(_run_one, names, [cfg] * len(names))))
    else:
        results = {n: _run_one(n, cfg) for n in names}
    failed = []
    for n in names:
        write_reports(out, n, cfg, results[n])
        bad = _failures(results[n])
        failed += bad
        gates = sum(r["gate"] for r in results[n])
        print(f"{n}: {len(results[n])} records, {gates} gated, {len(bad)} failed")
    if args.command == "all":
        summary = {"environment": fingerprint(cfg), "failed": failed,
                   "subcommands": {n: len(results[n]) for n in names}}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name in failed:
        print(f"FAILED gate: {name}", file=sys.stderr)
    return EXIT_GATE if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
