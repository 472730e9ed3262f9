"""Synthetic vessel fleets on a ~100 km area for tests and benchmarks.

Entities follow a small set of shipping lanes (some straight, some with a
single heading change) at near-constant speed with lateral noise and
irregular observation times.  Lane geometry is fixed per seed, so a model
can learn where traffic turns while a straight-line extrapolator cannot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import geocodec as gc
from . import trackprep as tp

# center of a depth-16 geohash cell, so the whole fleet shares a clean prefix
AOI_CENTER = gc.GeoPoint(40.4296875, -72.421875)
KM_PER_DEG_LAT = math.pi * 6371.0088 / 180.0


def local_to_geo(x_km: float, y_km: float, center: gc.GeoPoint = AOI_CENTER) -> gc.GeoPoint:
    lat = center.lat + y_km / KM_PER_DEG_LAT
    lon = center.lon + x_km / (KM_PER_DEG_LAT * math.cos(math.radians(center.lat)))
    return gc.GeoPoint(lat, lon)


@dataclass(frozen=True)
class Lane:
    name: str
    waypoints: tuple[tuple[float, float], ...]  # (x, y) km, in travel order
    turn_index: int | None = None  # interior waypoint where heading changes

    def segment_lengths(self) -> list[float]:
        return [
            math.dist(a, b) for a, b in zip(self.waypoints, self.waypoints[1:])
        ]

    @property
    def length(self) -> float:
        return sum(self.segment_lengths())

    def turn_arclength(self) -> float | None:
        if self.turn_index is None:
            return None
        return sum(self.segment_lengths()[: self.turn_index])

    def point_at(self, s: float) -> tuple[float, float, tuple[float, float]]:
        """Position and unit heading at arclength s (clamped to the lane)."""
        s = max(0.0, min(s, self.length))
        lengths = self.segment_lengths()
        for i, seg in enumerate(lengths):
            if s <= seg or i == len(lengths) - 1:
                a, b = self.waypoints[i], self.waypoints[i + 1]
                f = min(s / seg, 1.0) if seg > 0 else 0.0
                x = a[0] + f * (b[0] - a[0])
                y = a[1] + f * (b[1] - a[1])
                ux, uy = (b[0] - a[0]) / seg, (b[1] - a[1]) / seg
                return x, y, (ux, uy)
            s -= seg
        raise AssertionError("unreachable")


def straight_lanes() -> list[Lane]:
    return [
        Lane("E0", ((-42.0, -26.0), (42.0, -26.0))),
        Lane("W0", ((42.0, -18.0), (-42.0, -18.0))),
        Lane("E1", ((-42.0, 28.0), (42.0, 28.0))),
    ]


def turn_lanes() -> list[Lane]:
    return [
        Lane("T0", ((-42.0, -8.0), (-2.0, -8.0), (22.0, 16.0)), turn_index=1),
        Lane("T1", ((42.0, -2.0), (2.0, -2.0), (-22.0, 22.0)), turn_index=1),
        Lane("T2", ((-42.0, 8.0), (10.0, 8.0), (28.0, -10.0)), turn_index=1),
    ]


def default_lanes() -> list[Lane]:
    return straight_lanes() + turn_lanes()


@dataclass(frozen=True)
class FleetConfig:
    n_tracks: int = 500
    seed: int = 0
    speed_mps: float = 4.0
    speed_jitter: float = 0.08  # relative, constant per track
    lateral_noise_km: float = 0.07
    lane_offset_km: float = 0.35  # constant per-track offset across the lane
    obs_interval: float = 20.0
    obs_jitter: float = 0.3  # relative jitter of raw observation spacing
    duration: float = 6600.0
    lanes: tuple[Lane, ...] = field(default_factory=lambda: tuple(default_lanes()))


@dataclass
class SyntheticTrack:
    track: tp.RawTrack
    lane: Lane
    t_turn: float | None  # seconds after t0 when the lane's heading change is crossed


def _gen_one(
    rng: np.random.Generator,
    lane: Lane,
    entity_id: str,
    cfg: FleetConfig,
    start_s: float | None = None,
) -> SyntheticTrack:
    speed = cfg.speed_mps / 1000.0 * (1.0 + cfg.speed_jitter * rng.uniform(-1, 1))  # km/s
    travel = speed * cfg.duration
    max_start = max(lane.length - travel, 0.0)
    s0 = rng.uniform(0.0, max_start) if start_s is None else start_s
    offset = cfg.lane_offset_km * rng.uniform(-1, 1)

    records = []
    t = 0.0
    while t <= cfg.duration:
        x, y, (ux, uy) = lane.point_at(s0 + speed * t)
        nx, ny = -uy, ux  # lane-perpendicular
        wobble = rng.normal(0.0, cfg.lateral_noise_km)
        p = local_to_geo(x + (offset + wobble) * nx, y + (offset + wobble) * ny)
        records.append((t, p.lat, p.lon))
        t += cfg.obs_interval * (1.0 + cfg.obs_jitter * rng.uniform(-1, 1))

    t_turn = None
    s_turn = lane.turn_arclength()
    if s_turn is not None and s0 < s_turn < s0 + travel:
        t_turn = (s_turn - s0) / speed
    return SyntheticTrack(
        track=tp.RawTrack.from_records(entity_id, records), lane=lane, t_turn=t_turn
    )


def make_fleet(cfg: FleetConfig) -> list[SyntheticTrack]:
    """n_tracks entities spread round-robin over the configured lanes."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for i in range(cfg.n_tracks):
        lane = cfg.lanes[i % len(cfg.lanes)]
        out.append(_gen_one(rng, lane, f"syn{i:05d}", cfg))
    return out


def make_turn_holdouts(
    cfg: FleetConfig, n: int, turn_after: tuple[float, float], seed_offset: int = 1
) -> list[SyntheticTrack]:
    """Held-out tracks whose heading change lands turn_after seconds into the track."""
    rng = np.random.default_rng(cfg.seed + seed_offset)
    lanes = [ln for ln in cfg.lanes if ln.turn_index is not None]
    out = []
    for i in range(n):
        lane = lanes[i % len(lanes)]
        speed = cfg.speed_mps / 1000.0
        t_turn = rng.uniform(*turn_after)
        s0 = max(lane.turn_arclength() - speed * t_turn, 0.0)
        out.append(_gen_one(rng, lane, f"turn{i:04d}", cfg, start_s=s0))
    return out


def make_linear_holdouts(cfg: FleetConfig, n: int, seed_offset: int = 2) -> list[SyntheticTrack]:
    rng = np.random.default_rng(cfg.seed + seed_offset)
    lanes = [ln for ln in cfg.lanes if ln.turn_index is None]
    out = []
    for i in range(n):
        lane = lanes[i % len(lanes)]
        out.append(_gen_one(rng, lane, f"lin{i:04d}", cfg))
    return out


def write_csv(tracks: list[SyntheticTrack], path, t_base: float = 1_700_000_000.0) -> None:
    """Ingest-shaped CSV: entity_id, timestamp (epoch seconds), lat, lon."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["entity_id", "timestamp", "lat", "lon"])
        for st in tracks:
            for o in st.track.obs:
                w.writerow(
                    [
                        st.track.entity_id,
                        f"{t_base + o.t:.3f}",
                        f"{o.point.lat:.7f}",
                        f"{o.point.lon:.7f}",
                    ]
                )
