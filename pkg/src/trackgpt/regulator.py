"""Hallucination truncation and K-sample forecast ensembling.

Generated cells that jump more than a configured hop count from their
predecessor are treated as hallucinations: the sample is truncated at the
first offending step.  Surviving samples are averaged into a mean route
and a consensus destination (the modal coarse cell of the endpoints).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import geocodec as gc
from . import gptcore as core
from . import trackprep as tp
from .errors import ConfigError, EmptyEnsembleError

CONSENSUS_COARSEN_BITS = 6
WAYPOINT_STRIDE = 6


@dataclass(frozen=True)
class RegulatorConfig:
    max_hops: int = 3  # 3 suits slower entities at coarse cells, 10 faster ones
    min_valid_steps: int = 0

    def __post_init__(self) -> None:
        if self.max_hops < 1:
            raise ConfigError(f"max_hops must be >= 1: {self.max_hops}")
        if self.min_valid_steps < 0:
            raise ConfigError("min_valid_steps must be >= 0")


@dataclass
class ForecastSample:
    tokens: list[int]
    cells: list[gc.CellId]
    truncated_at: int | None
    valid_len: int
    discarded: bool

    @property
    def valid_cells(self) -> list[gc.CellId]:
        return self.cells[: self.valid_len]


@dataclass
class ForecastEnsemble:
    samples: list[ForecastSample]
    mean_route: list[gc.GeoPoint]
    consensus_destination: gc.GeoPoint | None
    consensus_support: int
    horizon_times: list[float]

    def waypoints(self, stride: int = WAYPOINT_STRIDE) -> list[tuple[int, gc.GeoPoint]]:
        """Mean-route points at a fixed stride, a thinned view for display."""
        return [(k, p) for k, p in enumerate(self.mean_route) if (k + 1) % stride == 0]


def regulate(
    tokens: list[int],
    last_prompt_cell: gc.CellId,
    cfg: RegulatorConfig,
    codec: gc.CodecConfig,
) -> ForecastSample:
    """Truncate at the first consecutive pair more than max_hops apart.

    The check includes the prompt-to-first-step transition.  An undecodable
    token truncates immediately at its step.
    """
    cells: list[gc.CellId] = []
    truncated_at = None
    prev = last_prompt_cell
    for k, tok in enumerate(tokens):
        try:
            cell = gc.cell_of_token(tok, codec)
        except gc.InputError:
            truncated_at = k
            break
        cells.append(cell)
        if gc.hop_distance(prev, cell) > cfg.max_hops:
            truncated_at = k
            break
        prev = cell
    valid_len = truncated_at if truncated_at is not None else len(cells)
    return ForecastSample(
        tokens=list(tokens),
        cells=cells,
        truncated_at=truncated_at,
        valid_len=valid_len,
        discarded=valid_len < cfg.min_valid_steps,
    )


def _mean_lon(lons: list[float]) -> float:
    lo, hi = min(lons), max(lons)
    if hi - lo <= 180.0:
        return float(np.mean(lons))
    # spans the antimeridian: fall back to the circular mean
    rad = np.radians(lons)
    return gc.normalize_lon(
        math.degrees(math.atan2(float(np.mean(np.sin(rad))), float(np.mean(np.cos(rad)))))
    )


def ensemble(samples: list[ForecastSample], horizon_times: list[float]) -> ForecastEnsemble:
    """Average kept samples per step; pick the modal coarse endpoint cell."""
    kept = [s for s in samples if not s.discarded and s.valid_len > 0]
    if not kept:
        raise EmptyEnsembleError("all forecast samples were discarded")

    route_len = max(s.valid_len for s in kept)
    mean_route = []
    for k in range(route_len):
        centers = [gc.cell_center(s.cells[k]) for s in kept if s.valid_len > k]
        mean_route.append(
            gc.GeoPoint(float(np.mean([c.lat for c in centers])), _mean_lon([c.lon for c in centers]))
        )

    groups: dict[gc.CellId, list[ForecastSample]] = {}
    for s in kept:
        final = s.cells[s.valid_len - 1]
        coarse = final.truncate(max(final.depth - CONSENSUS_COARSEN_BITS, 0))
        groups.setdefault(coarse, []).append(s)
    # modal cell; ties prefer the group with the largest summed validity,
    # then the lowest cell id
    best = max(
        groups.items(),
        key=lambda kv: (len(kv[1]), sum(s.valid_len for s in kv[1]), -kv[0].bits),
    )
    return ForecastEnsemble(
        samples=list(samples),
        mean_route=mean_route,
        consensus_destination=gc.cell_center(best[0]),
        consensus_support=len(best[1]),
        horizon_times=list(horizon_times),
    )


def forecast(
    ckpt: core.Checkpoint,
    prompt_track: tp.GroomedTrack,
    sampler: core.SamplerConfig,
    reg_cfg: RegulatorConfig,
) -> ForecastEnsemble:
    """Tokenize the prompt, draw K regulated samples, and ensemble them.

    Sample RNG streams derive from (sampler.seed, index), so a fixed seed
    reproduces the whole ensemble bit for bit.
    """
    if ckpt.codec is None:
        raise ConfigError("checkpoint carries no codec; cannot tokenize prompts")
    token_track = tp.tokenize(prompt_track, ckpt.codec)
    prompt_tokens = token_track.tokens[-ckpt.config.block_size :]
    last_cell = gc.cell_of_token(prompt_tokens[-1], ckpt.codec)
    rngs = [np.random.default_rng([sampler.seed, i]) for i in range(sampler.k_samples)]
    rows = core.generate_rows(ckpt, prompt_tokens, sampler, rngs)
    samples = [regulate(row, last_cell, reg_cfg, ckpt.codec) for row in rows]
    dt = prompt_track.dt
    t_end = prompt_track.t0 + (len(prompt_track.points) - 1) * dt
    horizon_times = [t_end + (k + 1) * dt for k in range(sampler.max_steps)]
    return ensemble(samples, horizon_times)


def sample_from_cells(
    cells: list[gc.CellId], last_prompt_cell: gc.CellId, cfg: RegulatorConfig
) -> ForecastSample:
    """Wrap externally produced cells (e.g. a baseline) as a regulated sample."""
    truncated_at = None
    prev = last_prompt_cell
    for k, cell in enumerate(cells):
        if gc.hop_distance(prev, cell) > cfg.max_hops:
            truncated_at = k
            break
        prev = cell
    valid_len = truncated_at if truncated_at is not None else len(cells)
    return ForecastSample(
        tokens=[],
        cells=list(cells),
        truncated_at=truncated_at,
        valid_len=valid_len,
        discarded=valid_len < cfg.min_valid_steps,
    )


def _linestring(coords, props):
    return {
        "type": "Feature",
        "properties": props,
        "geometry": (
            {"type": "LineString", "coordinates": coords} if len(coords) >= 2 else None
        ),
    }


def to_geojson(ens: ForecastEnsemble) -> dict:
    """FeatureCollection: sample routes, the mean route, consensus, waypoints."""
    feats = []
    for i, s in enumerate(ens.samples):
        coords = [
            [gc.cell_center(c).lon, gc.cell_center(c).lat] for c in s.valid_cells
        ]
        feats.append(
            _linestring(
                coords,
                {
                    "kind": "sample",
                    "index": i,
                    "valid_len": s.valid_len,
                    "truncated_at": s.truncated_at,
                    "discarded": s.discarded,
                    "times": ens.horizon_times[: s.valid_len],
                },
            )
        )
    feats.append(
        _linestring(
            [[p.lon, p.lat] for p in ens.mean_route],
            {
                "kind": "mean_route",
                "times": ens.horizon_times[: len(ens.mean_route)],
            },
        )
    )
    if ens.consensus_destination is not None:
        feats.append(
            {
                "type": "Feature",
                "properties": {
                    "kind": "consensus_destination",
                    "support": ens.consensus_support,
                },
                "geometry": {
                    "type": "Point",
                    "coordinates": [
                        ens.consensus_destination.lon,
                        ens.consensus_destination.lat,
                    ],
                },
            }
        )
    for k, p in ens.waypoints():
        feats.append(
            {
                "type": "Feature",
                "properties": {
                    "kind": "waypoint",
                    "step": k,
                    "time": ens.horizon_times[k],
                },
                "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]},
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def write_geojson(ens: ForecastEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_geojson(ens), f, indent=2)
        f.write("\n")
