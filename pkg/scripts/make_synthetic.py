#!/usr/bin/env python3
"""Generate synthetic lane-following fleets as ingest-ready CSV files.

Writes a training fleet plus two held-out sets: tracks with a heading
change inside the forecast window, and pure-linear tracks.
"""

import argparse
from pathlib import Path

from trackgpt import synthetic as syn


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--n-tracks", type=int, default=500)
    ap.add_argument("--n-turn-holdout", type=int, default=12)
    ap.add_argument("--n-linear-holdout", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--speed-mps", type=float, default=4.0)
    ap.add_argument(
        "--turn-window",
        type=float,
        nargs=2,
        default=(2100.0, 3300.0),
        metavar=("LO", "HI"),
        help="seconds after track start when held-out heading changes occur",
    )
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = syn.FleetConfig(n_tracks=args.n_tracks, seed=args.seed, speed_mps=args.speed_mps)

    fleet = syn.make_fleet(cfg)
    syn.write_csv(fleet, out / "train.csv")
    turn = syn.make_turn_holdouts(cfg, args.n_turn_holdout, tuple(args.turn_window))
    syn.write_csv(turn, out / "holdout_turn.csv")
    linear = syn.make_linear_holdouts(cfg, args.n_linear_holdout)
    syn.write_csv(linear, out / "holdout_linear.csv")

    n_obs = sum(len(t.track.obs) for t in fleet)
    print(
        f"wrote {len(fleet)} training tracks ({n_obs} observations), "
        f"{len(turn)} turn holdouts, {len(linear)} linear holdouts -> {out}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
