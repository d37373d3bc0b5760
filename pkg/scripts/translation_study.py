"""Single translation-only run with CSV output and a terminal summary.

    python scripts/translation_study.py --seed 0 --out runs/translation
"""
import argparse
from dataclasses import replace
from pathlib import Path

from cubepose import config
from cubepose.logio import emit_results
from cubepose.sim import consistency_check, run_translation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/translation"))
    args = ap.parse_args()

    log = run_translation(replace(config.preset_translation(), seed=args.seed))
    rep = consistency_check(log)
    emit_results(log, rep, args.out)
    for key, value in rep.rows():
        print(f"{key},{value}")


if __name__ == "__main__":
    main()
