#!/usr/bin/env python3
"""Run the scaling experiments from the JSON configs next to this script.

    python3 scripts/run_experiments.py                  # every config
    python3 scripts/run_experiments.py kakeya_compression hormander --out results/
"""
import argparse
import json
import sys
from pathlib import Path

from oscint.experiments import run_named

CONFIGS = Path(__file__).resolve().parent / "configs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help="experiment names (default: all configs)")
    ap.add_argument("--out", default="results", help="output directory")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = args.names or sorted(p.stem for p in CONFIGS.glob("*.json"))
    for name in names:
        cfg = json.loads((CONFIGS / f"{name}.json").read_text())
        rep = run_named(name, cfg)
        rep.write(out / f"{name}.json", out / f"{name}.csv")
        slope = "n/a" if rep.fit is None else f"{rep.fit.slope:+.4f} [{rep.fit.ci[0]:+.4f}, {rep.fit.ci[1]:+.4f}]"
        print(f"{name:30s} slope {slope}  expected {rep.expected}  ({rep.seconds:.1f}s)", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
