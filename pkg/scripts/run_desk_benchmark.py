#!/usr/bin/env python3
"""End-to-end desk benchmark on synthetic lanes: prep, train, eval vs baseline.

Reports mean ADE of the model against the constant-velocity baseline on
held-out tracks with heading changes, and the fraction of forecast steps
within two cells of truth on pure-linear held-out tracks.
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

import torch

from trackgpt import geocodec as gc
from trackgpt import gptcore as core
from trackgpt import harness as hn
from trackgpt import metrics as mx
from trackgpt import regulator as reg
from trackgpt import synthetic as syn
from trackgpt import trackprep as tp


def eval_tracks(ckpt, tracks, protocol, seed, with_cells=False):
    groomed = hn.groom_for_eval(tracks, protocol, ckpt)
    need = protocol.prompt_len + protocol.horizon
    scores, base_scores, cell_hits = [], [], []
    for i, g in enumerate(groomed):
        if len(g.points) < need:
            continue
        prompt = tp.GroomedTrack(g.entity_id, g.t0, g.dt, g.points[: protocol.prompt_len])
        truth = g.points[protocol.prompt_len : need]
        sampler = replace(protocol.sampler, max_steps=protocol.horizon, seed=seed + 7919 * i)
        ens = hn.forecast_resilient(ckpt, prompt, sampler, protocol.regulator)
        if ens is None:
            print(f"  {g.entity_id}: no valid forecast step in any sample")
            continue
        score = mx.score_track(truth, ens, protocol.eval, dt=g.dt, track_id=g.entity_id)
        scores.append(score)
        base = hn.baseline_const_velocity(prompt, protocol.horizon, ckpt.codec)
        base_scores.append(
            mx.score_track(
                truth, base, replace(protocol.eval, best_of_n=1), dt=g.dt, track_id=g.entity_id
            )
        )
        if with_cells:
            depth = ckpt.codec.full_depth
            for k in range(protocol.horizon):
                cell_hits.append(
                    k < len(ens.mean_route)
                    and gc.hop_distance(
                        gc.encode_point(ens.mean_route[k], depth),
                        gc.encode_point(truth[k], depth),
                    )
                    <= 2
                )
    return scores, base_scores, cell_hits


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--n-tracks", type=int, default=500)
    ap.add_argument("--steps", type=int, default=1200)
    ap.add_argument("--batch-size", type=int, default=3)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=1337)
    ap.add_argument("--deterministic", action="store_true")
    args = ap.parse_args()
    if args.deterministic:
        torch.set_num_threads(1)

    t0 = time.time()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    protocol = hn.builtin_protocols(args.seed)["synthetic-desk"]

    cfg = syn.FleetConfig(n_tracks=args.n_tracks, seed=args.seed)
    fleet = syn.make_fleet(cfg)
    syn.write_csv(fleet, out / "train.csv")
    turn_hold = syn.make_turn_holdouts(cfg, 12, turn_after=(2100.0, 3300.0))
    linear_hold = syn.make_linear_holdouts(cfg, 12)

    tracks = hn.ingest(out / "train.csv", hn.IngestSpec())
    prep = hn.run_prep(tracks, protocol, out)
    print(f"[{time.time() - t0:6.1f}s] prep done")

    params = core.TrainParams(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=100,
        seed=args.seed,
        log_every=100,
    )
    model_cfg = core.ModelConfig(seed=args.seed)  # desk defaults
    ckpt_path = hn.run_train(prep.corpus_path, out, params, model_cfg=model_cfg)
    ckpt = core.load_checkpoint(ckpt_path)
    print(f"[{time.time() - t0:6.1f}s] train done")

    turn_scores, turn_base, _ = eval_tracks(
        ckpt, [t.track for t in turn_hold], protocol, args.seed
    )
    model_ade = sum(s.ade for s in turn_scores) / len(turn_scores)
    base_ade = sum(s.ade for s in turn_base) / len(turn_base)
    print(f"[{time.time() - t0:6.1f}s] turn holdouts: model ADE {model_ade:.3f} km "
          f"vs baseline {base_ade:.3f} km ({len(turn_scores)} tracks)")

    lin_scores, lin_base, hits = eval_tracks(
        ckpt, [t.track for t in linear_hold], protocol, args.seed, with_cells=True
    )
    frac = sum(hits) / len(hits)
    lin_ade = sum(s.ade for s in lin_scores) / len(lin_scores)
    print(f"[{time.time() - t0:6.1f}s] linear holdouts: within-2-cells {frac:.1%}, "
          f"model ADE {lin_ade:.3f} km ({len(lin_scores)} tracks)")

    ok = model_ade <= base_ade and frac >= 0.9
    print(f"total {time.time() - t0:.1f}s | {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
