"""Track grooming: split on blackouts, filter, interpolate, resample, tokenize.

Raw observation streams are irregular; the model wants uniformly sampled
token sequences whose consecutive cells are neighbors.  The sampling
interval dt is the larger of two derived bounds: the smallest dt letting
every (already duration-capped) track fit one model block, and the largest
dt keeping consecutive cells adjacent for nearly all samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import geocodec as gc
from .errors import ConfigError, DataError, InputError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    point: gc.GeoPoint
    t: float


@dataclass
class RawTrack:
    entity_id: str
    obs: list[Observation]

    def __post_init__(self) -> None:
        for a, b in zip(self.obs, self.obs[1:]):
            if b.t <= a.t:
                raise InputError(f"track {self.entity_id}: times not strictly ascending")

    @classmethod
    def from_records(cls, entity_id: str, records: list[tuple[float, float, float]]) -> "RawTrack":
        """Build from (t, lat, lon) records; sorts and drops duplicate timestamps."""
        records = sorted(records, key=lambda r: r[0])
        obs = []
        last_t = None
        for t, lat, lon in records:
            if t == last_t:
                continue
            obs.append(Observation(gc.GeoPoint(lat, lon), t))
            last_t = t
        return cls(entity_id, obs)

    @property
    def span(self) -> float:
        return self.obs[-1].t - self.obs[0].t if len(self.obs) > 1 else 0.0


@dataclass
class GroomedTrack:
    entity_id: str
    t0: float
    dt: float
    points: list[gc.GeoPoint]

    @property
    def times(self) -> list[float]:
        return [self.t0 + k * self.dt for k in range(len(self.points))]

    @property
    def span(self) -> float:
        return (len(self.points) - 1) * self.dt


@dataclass
class TokenTrack:
    entity_id: str
    t0: float
    dt: float
    tokens: list[int]
    gap_fraction: float = 0.0  # fraction of consecutive pairs with hop > 1


@dataclass(frozen=True)
class PrepConfig:
    max_gap: float
    min_duration: float
    max_duration: float
    dt_override: float | None = None

    def __post_init__(self) -> None:
        if self.max_gap <= 0:
            raise ConfigError("max_gap must be positive")
        if not self.min_duration < self.max_duration:
            raise ConfigError("min_duration must be < max_duration")


def split_on_blackout(track: RawTrack, max_gap: float) -> list[RawTrack]:
    """Cut the track wherever the time to the next observation exceeds max_gap."""
    pieces = []
    start = 0
    for i in range(len(track.obs) - 1):
        if track.obs[i + 1].t - track.obs[i].t > max_gap:
            pieces.append(RawTrack(track.entity_id, track.obs[start : i + 1]))
            start = i + 1
    pieces.append(RawTrack(track.entity_id, track.obs[start:]))
    return pieces


def is_stationary(track: RawTrack, codec: gc.CodecConfig) -> bool:
    """True when every observation resolves to the same full-depth cell."""
    depth = codec.full_depth
    first = None
    for o in track.obs:
        cell = gc.encode_point(o.point, depth)
        if first is None:
            first = cell
        elif cell != first:
            return False
    return True


def filter_tracks(
    tracks: list[RawTrack], min_duration: float, codec: gc.CodecConfig | None = None
) -> list[RawTrack]:
    """Drop short, single-point, and (when a codec is given) stationary tracks."""
    kept = []
    for tr in tracks:
        if len(tr.obs) < 2 or tr.span < min_duration:
            continue
        if codec is not None and is_stationary(tr, codec):
            continue
        kept.append(tr)
    return kept


def _lerp_lon(lon0: float, lon1: float, f: float) -> float:
    d = math.fmod(lon1 - lon0 + 540.0, 360.0) - 180.0
    return gc.normalize_lon(lon0 + f * d)


def interpolate_at(track: RawTrack, t: float) -> gc.GeoPoint:
    """Piecewise-linear position at time t; longitude follows the shorter arc."""
    obs = track.obs
    if not obs or t < obs[0].t or t > obs[-1].t:
        raise InputError(f"time {t} outside track span [{obs[0].t}, {obs[-1].t}]")
    ts = [o.t for o in obs]
    i = np.searchsorted(ts, t, side="right") - 1
    if i >= len(obs) - 1:
        return obs[-1].point
    a, b = obs[i], obs[i + 1]
    if t == a.t:
        return a.point
    f = (t - a.t) / (b.t - a.t)
    lat = a.point.lat + f * (b.point.lat - a.point.lat)
    lon = _lerp_lon(a.point.lon, b.point.lon, f)
    return gc.GeoPoint(lat, lon)


def resample(track: RawTrack, dt: float) -> GroomedTrack | None:
    """Uniform samples at t0 + k*dt, k = 0..n with n*dt <= span < (n+1)*dt.

    Returns None when the span is shorter than one interval.
    """
    if dt <= 0:
        raise InputError(f"dt must be positive: {dt}")
    span = track.span
    n = int(math.floor(span / dt + 1e-9))
    while n * dt > span:
        n -= 1
    if n < 1:
        return None
    t0 = track.obs[0].t
    t_end = track.obs[-1].t
    # clamp guards against t0 + n*dt overshooting t_end by one float ulp
    points = [interpolate_at(track, min(t0 + k * dt, t_end)) for k in range(n + 1)]
    return GroomedTrack(track.entity_id, t0, dt, points)


def compute_dt_mc(tracks: list[RawTrack], block_size: int, max_duration: float | None = None) -> float:
    """Smallest dt at which every track (span capped at max_duration) fits one block."""
    if block_size < 2:
        raise InputError(f"block_size must be >= 2: {block_size}")
    if not tracks:
        raise DataError("compute_dt_mc: no tracks")
    spans = [tr.span if max_duration is None else min(tr.span, max_duration) for tr in tracks]
    return max(spans) / (block_size - 1)


def _hop_quantile(tracks: list[RawTrack], dt: float, depth: int, q: float) -> float:
    hops = []
    for tr in tracks:
        groomed = resample(tr, dt)
        if groomed is None or len(groomed.points) < 2:
            continue
        cells = [gc.encode_point(p, depth) for p in groomed.points]
        hops.extend(
            gc.hop_distance(a, b) for a, b in zip(cells, cells[1:])
        )
    if not hops:
        return 0.0
    return float(np.quantile(np.asarray(hops, dtype=np.float64), q))


def compute_dt_an(
    tracks: list[RawTrack],
    codec: gc.CodecConfig,
    quantile: float = 0.99,
    iterations: int = 10,
) -> float:
    """Largest dt keeping the q-quantile of consecutive-sample hops <= 1.

    Found by bisection on [1 s, longest span]; robust to occasional jumps
    from positional glitches.
    """
    if not tracks:
        raise DataError("compute_dt_an: no tracks")
    depth = codec.full_depth
    lo = 1.0
    hi = max(tr.span for tr in tracks)
    if hi <= lo:
        return lo
    if _hop_quantile(tracks, hi, depth, quantile) <= 1.0:
        return hi
    if _hop_quantile(tracks, lo, depth, quantile) > 1.0:
        log.warning("adjacency violated even at dt = 1 s; returning the floor")
        return lo
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if _hop_quantile(tracks, mid, depth, quantile) <= 1.0:
            lo = mid
        else:
            hi = mid
    return lo


def choose_dt(dt_an: float, dt_mc: float) -> float:
    if dt_an <= 0 or dt_mc <= 0:
        raise InputError("dt bounds must be positive")
    if dt_mc > dt_an:
        log.warning(
            "dt_mc (%.3f s) exceeds dt_an (%.3f s): block fitting will break cell adjacency",
            dt_mc,
            dt_an,
        )
    return max(dt_an, dt_mc)


def split_long(track: GroomedTrack, max_duration: float) -> list[GroomedTrack]:
    """Chop into consecutive segments no longer than max_duration, keeping all points."""
    per_seg = int(math.floor(max_duration / track.dt + 1e-9)) + 1
    if per_seg < 2:
        raise ConfigError(f"max_duration {max_duration} shorter than one dt step")
    n = len(track.points)
    if n <= per_seg:
        return [track]
    bounds = list(range(0, n, per_seg))
    if n - bounds[-1] == 1 and per_seg >= 3:
        bounds[-1] -= 1  # avoid a stranded single-point tail
    segments = []
    for j, start in enumerate(bounds):
        end = bounds[j + 1] if j + 1 < len(bounds) else n
        segments.append(
            GroomedTrack(
                track.entity_id,
                track.t0 + start * track.dt,
                track.dt,
                track.points[start:end],
            )
        )
    return segments


def tokenize(track: GroomedTrack, codec: gc.CodecConfig) -> TokenTrack:
    """Map points to tokens; records the fraction of consecutive hops > 1."""
    tokens = [gc.token_of(p, codec) for p in track.points]
    gap_fraction = 0.0
    if len(tokens) > 1:
        cells = [gc.cell_of_token(t, codec) for t in tokens]
        rough = sum(
            1 for a, b in zip(cells, cells[1:]) if gc.hop_distance(a, b) > 1
        )
        gap_fraction = rough / (len(tokens) - 1)
    return TokenTrack(track.entity_id, track.t0, track.dt, tokens, gap_fraction)


def write_corpus(path, tracks: list[TokenTrack], codec: gc.CodecConfig, dt: float) -> None:
    """One track per line, space-separated decimal tokens, codec + dt in the header."""
    fields = codec.to_fields()
    header = "# " + " ".join(f"{k}={v}" for k, v in fields.items()) + f" dt={dt!r}"
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for tr in tracks:
            f.write(" ".join(str(t) for t in tr.tokens) + "\n")


def read_corpus(path) -> tuple[list[TokenTrack], gc.CodecConfig, float]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("# "):
            raise ParseError(f"{path}: missing corpus header")
        fields = {}
        for item in header[2:].split():
            if "=" not in item:
                raise ParseError(f"{path}: bad header item {item!r}")
            k, _, v = item.partition("=")
            fields[k] = v
        try:
            dt = float(fields.pop("dt"))
        except (KeyError, ValueError) as e:
            raise ParseError(f"{path}: bad dt in header: {e}") from e
        codec = gc.CodecConfig.from_fields(fields)
        tracks = []
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                tokens = [int(x) for x in line.split()]
            except ValueError as e:
                raise ParseError(f"{path}:{i + 2}: bad token line: {e}") from e
            tracks.append(TokenTrack(f"track_{i:05d}", 0.0, dt, tokens))
    return tracks, codec, dt
