"""Seeded Monte Carlo batch of the pose-acquisition scenario.

    python scripts/monte_carlo.py --runs 50 --out runs/mc
"""
import argparse
import time
from pathlib import Path

from cubepose import config
from cubepose.logio import emit_monte_carlo
from cubepose.sim import monte_carlo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0, help="seed of the first run")
    ap.add_argument("--preset", default="pose_acquisition", choices=sorted(config.PRESETS))
    ap.add_argument("--out", type=Path, default=Path("runs/mc"))
    args = ap.parse_args()

    t0 = time.perf_counter()
    mc = monte_carlo(config.preset(args.preset), args.runs, seed0=args.seed)
    elapsed = time.perf_counter() - t0
    emit_monte_carlo(mc, args.out)
    print(f"{args.runs} runs in {elapsed:.1f} s")
    print("containment " + " ".join(f"{k}={v:.4f}" for k, v in mc.containment.items()))
    print(f"mean position NEES {mc.mean_nees_pos:.3f}, reject fraction {mc.reject_fraction:.4f}")
    print(f"worst tail RMSE {mc.max_tail_rmse:.4f} m")
    print(f"results in {args.out}")


if __name__ == "__main__":
    main()
