"""Wall time and trained-policy quality as DP epochs are grouped.

group_size k folds k consecutive periods into one decision epoch, cutting
the number of backward-induction steps while the trained network still acts
every period. Run serially so the timings are comparable.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from execkit.config import load_config
from execkit.pipeline import run_pipeline

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config",
                    default=ROOT / "configs/three_asset_two_regime_t20.yaml")
    ap.add_argument("--group-sizes", default="1,2,4")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/grouping")
    args = ap.parse_args()

    cfg = load_config(args.config)
    sizes = [int(s) for s in args.group_sizes.split(",")]
    rows = []
    for g in sizes:
        res = run_pipeline(cfg, seed=args.seed, group_size=g, serial=True,
                           out_dir=Path(args.out_dir) / f"group_{g}")
        rows.append((g, res.manifest["stage_seconds"]["dp"],
                     res.reports["mlp"], res.reports["orthodp"]))

    t_base = rows[0][1]
    print(f"{'group':>5} {'dp secs':>8} {'ratio':>6} {'mlp mean':>9} "
          f"{'mlp std':>8} {'baseline mean':>14}")
    for g, secs, mlp, dp in rows:
        print(f"{g:5d} {secs:8.1f} {secs / t_base:6.2f} {mlp.mean:9.3f} "
              f"{mlp.std:8.3f} {dp.mean:14.3f}")


if __name__ == "__main__":
    main()
