"""Regenerate every figure's data through the command line.

Usage: python scripts/run_figures.py [--only fig3 fig7] [--out runs] [--threads N] [--seed S]

Each job writes its own run directory ``<out>/<figure>/<config stem>`` with
CSV, JSON and SVG outputs plus a manifest.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from gibbsforge.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

JOBS = {
    "fig1": [("spectrum", "fig1/spectrum.toml")],
    "fig3": [("thermalize", "fig3/nonintegrable.toml"), ("thermalize", "fig3/integrable.toml")],
    "fig4": [
        ("mi", "fig4/equidistant.toml"),
        ("mi", "fig4/unequal.toml"),
        ("mi", "fig4/overlap.toml"),
        ("mi", "fig4/cascade.toml"),
    ],
    "fig5": [("thermalize", "fig5/phase_flip.toml"), ("sweep", "fig5/phase_flip.toml")],
    "fig6": [("circuit", "fig6/circuit.toml")],
    "fig7": [("sweep", "fig7/frequency.toml"), ("sweep", "fig7/frequency_nonintegrable.toml")],
    "fig8": [("sweep", "fig8/noisy_sites.toml")],
    "fig9": [("sweep", "fig9/size.toml")],
}


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--only", nargs="*", choices=sorted(JOBS), help="figures to run (default: all)")
    p.add_argument("--out", type=Path, default=ROOT / "runs")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", default="csv,json,svg")
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    failures = 0
    for fig in args.only or sorted(JOBS):
        for command, config in JOBS[fig]:
            out = args.out / fig / f"{Path(config).stem}-{command}"
            cli = [command, "--config", str(CONFIGS / config), "--out", str(out), "--format", args.format]
            if args.threads is not None:
                cli += ["--threads", str(args.threads)]
            if args.seed is not None:
                cli += ["--seed", str(args.seed)]
            start = time.perf_counter()
            code = cli_main(cli)
            status = "ok" if code == 0 else f"exit {code}"
            print(f"{fig:5s} {command:10s} {config:36s} {status:8s} {time.perf_counter() - start:8.1f} s -> {out}")
            failures += code != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
