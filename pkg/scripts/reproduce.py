"""Adaptive design runs for the four initial guesses, with a reflection table.

    python scripts/reproduce.py                  # h = 0.02, several minutes
    python scripts/reproduce.py --config configs/coarse.toml
"""
import argparse
import time
from pathlib import Path

from photodesign.cli import main as cli_main
from photodesign.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "full.toml")
    ap.add_argument("--out", type=Path)
    ap.add_argument("--parallel-guesses", action="store_true")
    args = ap.parse_args()

    out = args.out or ROOT / load_config(args.config).run.out
    argv = ["optimize", "--config", str(args.config), "--out", str(out)]
    if args.parallel_guesses:
        argv.append("--parallel-guesses")
    t0 = time.perf_counter()
    status = cli_main(argv)
    print(f"finished in {time.perf_counter() - t0:.0f} s; results under {out}")
    return status


if __name__ == "__main__":
    raise SystemExit(main())
