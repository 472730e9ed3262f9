"""Geodesic scoring of forecast ensembles against time-aligned truth.

Error per step is zero when the true position falls inside the predicted
cell (closed edges), otherwise the great-circle distance to the nearest
bbox corner.  A best-of-N rule picks the lowest-ADE sample per track.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import geocodec as gc
from .errors import ConfigError, InputError
from .regulator import ForecastEnsemble

EARTH_RADIUS_KM = 6371.0088
KM_PER_NM = 1.852  # exact by definition


def geodesic(a: gc.GeoPoint, b: gc.GeoPoint) -> float:
    """Haversine great-circle distance in kilometers."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    s = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def km_to_nm(km: float) -> float:
    return km / KM_PER_NM


def nm_to_km(nm: float) -> float:
    return nm * KM_PER_NM


def cell_error(truth: gc.GeoPoint, predicted: gc.CellId) -> float:
    """0 inside the predicted cell's closed bbox, else distance to the nearest corner (km)."""
    box = gc.cell_bbox(predicted)
    if box.contains_closed(truth):
        return 0.0
    return min(geodesic(truth, corner) for corner in box.corners())


@dataclass(frozen=True)
class EvalConfig:
    best_of_n: int = 16
    interval_marks: tuple[float, ...] = ()  # seconds past the prompt end
    units: str = "km"  # "km" or "nm"

    def __post_init__(self) -> None:
        if self.best_of_n < 1:
            raise ConfigError("best_of_n must be >= 1")
        if self.units not in ("km", "nm"):
            raise ConfigError(f"units must be 'km' or 'nm': {self.units}")

    def convert(self, km: float) -> float:
        return km_to_nm(km) if self.units == "nm" else km


@dataclass
class TrackScore:
    track_id: str
    per_step_error: list[float]  # configured units, over the chosen sample's valid steps
    ade: float
    fde: float
    interval_errors: list[tuple[float, float]]  # (offset seconds, error or nan)
    chosen_sample: int
    coverage: float  # chosen sample's valid_len / horizon


# a truncated sample loses to any full-length sample whose ADE is within 10%
TRUNCATION_PENALTY = 1.1


def _sample_ade(errors_km: list[float]) -> float:
    return float(np.mean(errors_km)) if errors_km else float("inf")


def choose_best(per_sample_errors: list[list[float]], horizon: int) -> int:
    """Best-of-N selection by ADE over valid steps.

    Samples shorter than the horizon compete with a 10% handicap so a
    trivially short sample cannot outrank a comparable full-length one.
    """
    best_idx = -1
    best_key = (float("inf"), 0)
    for i, errs in enumerate(per_sample_errors):
        ade = _sample_ade(errs)
        effective = ade if len(errs) >= horizon else ade * TRUNCATION_PENALTY
        key = (effective, 0 if len(errs) >= horizon else 1)
        if key < best_key:
            best_key = key
            best_idx = i
    if best_idx < 0:
        raise InputError("no scoreable sample in ensemble")
    return best_idx


def score_track(
    truth: list[gc.GeoPoint],
    ensemble: ForecastEnsemble,
    cfg: EvalConfig,
    dt: float,
    track_id: str = "",
) -> TrackScore:
    """Score the first best_of_n samples against truth aligned to horizon_times."""
    horizon = len(ensemble.horizon_times)
    if len(truth) < horizon:
        raise InputError(
            f"truth covers {len(truth)} steps but the forecast horizon is {horizon}"
        )
    if len(ensemble.samples) < cfg.best_of_n:
        raise InputError(
            f"ensemble has {len(ensemble.samples)} samples; best_of_n={cfg.best_of_n}"
        )
    candidates = ensemble.samples[: cfg.best_of_n]
    # regulator-discarded samples stay visible in diagnostics but cannot win
    # selection; fall back to everything only if the whole slate is discarded
    eligible = [i for i, s in enumerate(candidates) if not s.discarded]
    if not eligible:
        eligible = list(range(len(candidates)))
    per_sample: list[list[float]] = []
    for i in eligible:
        s = candidates[i]
        errs = [cell_error(truth[k], s.cells[k]) for k in range(min(s.valid_len, horizon))]
        per_sample.append(errs)
    chosen_pos = choose_best(per_sample, horizon)
    chosen = eligible[chosen_pos]
    errors_km = per_sample[chosen_pos]
    errors = [cfg.convert(e) for e in errors_km]
    interval_errors = []
    for off in cfg.interval_marks:
        k = int(round(off / dt)) - 1
        if 0 <= k < len(errors):
            interval_errors.append((off, errors[k]))
        else:
            interval_errors.append((off, float("nan")))
    return TrackScore(
        track_id=track_id,
        per_step_error=errors,
        ade=float(np.mean(errors)) if errors else float("nan"),
        fde=errors[-1] if errors else float("nan"),
        interval_errors=interval_errors,
        chosen_sample=chosen,
        coverage=len(errors) / horizon if horizon else 0.0,
    )


@dataclass
class BenchmarkReport:
    units: str
    n_tracks: int
    mean_ade: float
    mean_fde: float
    interval_means: list[tuple[float, float]]
    mean_coverage: float
    scores: list[TrackScore] = field(default_factory=list)

    def to_table(self) -> str:
        lines = [
            f"tracks evaluated: {self.n_tracks}    units: {self.units}",
        ]
        if self.interval_means:
            hourly = all(off >= 3600 for off, _ in self.interval_means)
            scale, unit = (3600.0, "h") if hourly else (1.0, "s")
            offs = [f"{off / scale:g}" for off, _ in self.interval_means]
            vals = [f"{v:.3f}" if not math.isnan(v) else "-" for _, v in self.interval_means]
            w = max(len(a) for a in offs + vals) + 2
            lines.append(f"forecast time ({unit}) " + "".join(o.rjust(w) for o in offs))
            lines.append(f"error ({self.units})        " + "".join(v.rjust(w) for v in vals))
        lines.append(
            f"mean ADE ({self.units}): {self.mean_ade:.3f}    "
            f"mean FDE ({self.units}): {self.mean_fde:.3f}    "
            f"mean coverage: {self.mean_coverage:.2%}"
        )
        return "\n".join(lines) + "\n"


def aggregate(scores: list[TrackScore], cfg: EvalConfig) -> BenchmarkReport:
    """Mean ADE/FDE and per-mark interval means across tracks (NaN-skipping)."""
    if not scores:
        raise InputError("aggregate: no track scores")
    marks = [off for off, _ in scores[0].interval_errors]
    interval_means = []
    for j, off in enumerate(marks):
        vals = [s.interval_errors[j][1] for s in scores]
        finite = [v for v in vals if not math.isnan(v)]
        interval_means.append((off, float(np.mean(finite)) if finite else float("nan")))
    return BenchmarkReport(
        units=cfg.units,
        n_tracks=len(scores),
        mean_ade=float(np.mean([s.ade for s in scores])),
        mean_fde=float(np.mean([s.fde for s in scores])),
        interval_means=interval_means,
        mean_coverage=float(np.mean([s.coverage for s in scores])),
        scores=list(scores),
    )


def write_report_csv(report: BenchmarkReport, path) -> None:
    """Long-format rows: one per (track, interval mark), or one per track."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "track_id",
                "ade",
                "fde",
                "interval_offset",
                "interval_error",
                "chosen_sample",
                "coverage",
            ]
        )
        for s in report.scores:
            rows = s.interval_errors or [("", "")]
            for off, err in rows:
                w.writerow(
                    [
                        s.track_id,
                        f"{s.ade:.6f}",
                        f"{s.fde:.6f}",
                        off,
                        "" if err == "" or (isinstance(err, float) and math.isnan(err)) else f"{err:.6f}",
                        s.chosen_sample,
                        f"{s.coverage:.4f}",
                    ]
                )


def write_report_text(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_table())
