"""Run the 12 x 12 selector/model grid on a calibrated synthetic cohort.

    python scripts/full_grid.py --seed 0 --workers 1 [--mode leak-free] [--out DIR]
"""

import argparse
import json
import time
from pathlib import Path

from bwpipe.evaluation import CVConfig, leaderboard_rows, run_grid
from bwpipe.models import LINEAR_FAMILIES, MODEL_ENTRIES
from bwpipe.selectors import SELECTOR_NAMES
from bwpipe.synthgen import TARGET, CohortSpec, generate_cohort


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--mode", default="paper")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    t0 = time.perf_counter()
    data, truth = generate_cohort(CohortSpec(seed=args.seed))
    run = run_grid(list(SELECTOR_NAMES), list(MODEL_ENTRIES), data, TARGET,
                   CVConfig(seed=args.seed), mode=args.mode, workers=args.workers)
    elapsed = time.perf_counter() - t0

    print(f"seed={args.seed} mode={run.mode} records={len(run.records)} "
          f"failures={len(run.failures)} noise={truth.noise_scale:.1f} time={elapsed:.0f}s")
    for row in leaderboard_rows(run.leaderboard)[:10]:
        sel, _, model, r2, rmse, _ = row
        print(f"  {sel:>14} {model:<20} r2={float(r2):.4f} rmse={float(rmse):.1f}")
    best_linear = next(r for r in run.leaderboard if r.family in LINEAR_FAMILIES)
    print(f"best linear: {best_linear.selector}/{best_linear.model} "
          f"r2={best_linear.holdout_metrics.r2:.4f}")
    print("selector frequency (top 20 rows):", run.frequency)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"grid_seed{args.seed}_{run.mode}.json").write_text(
            json.dumps([r.to_dict() for r in run.leaderboard], indent=1))


if __name__ == "__main__":
    main()
