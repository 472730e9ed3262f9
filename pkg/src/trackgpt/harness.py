"""CLI and pipeline drivers: ingest CSV tracks, prep, train, forecast, eval, plot.

Subcommands wire the other modules together following one protocol spec
(built-in or from a config file).  Every run is reproducible: the global
seed comes from --seed or TRACKGPT_SEED, and --deterministic pins torch to
a single thread.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import geocodec as gc
from . import gptcore as core
from . import metrics as mx
from . import plotting
from . import regulator as reg
from . import trackprep as tp
from .errors import ConfigError, DataError, ParseError, TrackGptError

DEFAULT_SEED = 1337
SEED_ENV = "TRACKGPT_SEED"


@dataclass(frozen=True)
class IngestSpec:
    col_entity: str = "entity_id"
    col_time: str = "timestamp"
    col_lat: str = "lat"
    col_lon: str = "lon"
    col_alt: str | None = None
    time_format: str = "auto"  # auto | epoch | iso8601
    max_altitude: float | None = None
    aoi_bbox: tuple[float, float, float, float] | None = None  # lat0, lat1, lon0, lon1
    aoi_center: tuple[float, float, float] | None = None  # lat, lon, radius_km


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    prep: tp.PrepConfig
    prompt_len: int  # steps
    horizon: int  # steps
    dt: float | None  # None means "derive"
    resolution_bits: int
    block_size: int
    eval: mx.EvalConfig
    regulator: reg.RegulatorConfig
    sampler: core.SamplerConfig

    def to_config(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        cp["protocol"] = {
            "name": self.name,
            "prompt_len": str(self.prompt_len),
            "horizon": str(self.horizon),
            "dt": "derive" if self.dt is None else repr(self.dt),
            "resolution_bits": str(self.resolution_bits),
            "block_size": str(self.block_size),
        }
        cp["prep"] = {
            "max_gap": repr(self.prep.max_gap),
            "min_duration": repr(self.prep.min_duration),
            "max_duration": repr(self.prep.max_duration),
        }
        cp["eval"] = {
            "best_of_n": str(self.eval.best_of_n),
            "interval_marks": " ".join(repr(m) for m in self.eval.interval_marks),
            "units": self.eval.units,
        }
        cp["regulator"] = {
            "max_hops": str(self.regulator.max_hops),
            "min_valid_steps": str(self.regulator.min_valid_steps),
        }
        cp["sampler"] = {
            "temperature": repr(self.sampler.temperature),
            "k_samples": str(self.sampler.k_samples),
        }
        return cp

    @classmethod
    def from_config(cls, cp: configparser.ConfigParser, seed: int = DEFAULT_SEED) -> "ProtocolSpec":
        try:
            p = cp["protocol"]
            prep = cp["prep"]
            ev = cp["eval"]
            rg = cp["regulator"]
            sm = cp["sampler"]
            dt_raw = p.get("dt", "derive")
            horizon = int(p["horizon"])
            marks = tuple(float(x) for x in ev.get("interval_marks", "").split())
            return cls(
                name=p.get("name", "custom"),
                prep=tp.PrepConfig(
                    max_gap=float(prep["max_gap"]),
                    min_duration=float(prep["min_duration"]),
                    max_duration=float(prep["max_duration"]),
                ),
                prompt_len=int(p["prompt_len"]),
                horizon=horizon,
                dt=None if dt_raw == "derive" else float(dt_raw),
                resolution_bits=int(p["resolution_bits"]),
                block_size=int(p["block_size"]),
                eval=mx.EvalConfig(
                    best_of_n=int(ev["best_of_n"]),
                    interval_marks=marks,
                    units=ev.get("units", "km"),
                ),
                regulator=reg.RegulatorConfig(
                    max_hops=int(rg["max_hops"]),
                    min_valid_steps=int(rg.get("min_valid_steps", "0")),
                ),
                sampler=core.SamplerConfig(
                    temperature=float(sm.get("temperature", "0.92")),
                    k_samples=int(sm.get("k_samples", "16")),
                    max_steps=horizon,
                    seed=seed,
                ),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad protocol config: {e}") from e


def builtin_protocols(seed: int = DEFAULT_SEED) -> dict[str, ProtocolSpec]:
    """Two benchmark-shaped protocols plus a fast synthetic desk protocol."""
    dma = ProtocolSpec(
        name="dma-ais",
        prep=tp.PrepConfig(max_gap=3600.0, min_duration=4 * 3600.0, max_duration=20 * 3600.0),
        prompt_len=30,  # 5 h at 10-minute steps
        horizon=90,  # 15 h
        dt=600.0,
        resolution_bits=25,  # 5 geohash characters
        block_size=121,  # a 20-hour track in one block
        eval=mx.EvalConfig(
            best_of_n=16,
            interval_marks=tuple(3600.0 * h for h in range(1, 16)),
            units="nm",
        ),
        regulator=reg.RegulatorConfig(max_hops=3, min_valid_steps=22),
        sampler=core.SamplerConfig(temperature=0.92, k_samples=16, max_steps=90, seed=seed),
    )
    trajair = ProtocolSpec(
        name="trajair-adsb",
        prep=tp.PrepConfig(max_gap=10.0, min_duration=30.0, max_duration=120.0),
        prompt_len=44,  # 11 s at 250 ms steps
        horizon=436,  # 109 s
        dt=0.25,
        resolution_bits=40,  # 8 geohash characters
        block_size=481,  # a 120-second track in one block
        eval=mx.EvalConfig(
            best_of_n=5,
            interval_marks=(10.0, 30.0, 60.0, 109.0),
            units="km",
        ),
        regulator=reg.RegulatorConfig(max_hops=10, min_valid_steps=109),
        sampler=core.SamplerConfig(temperature=0.92, k_samples=5, max_steps=436, seed=seed),
    )
    synthetic = ProtocolSpec(
        name="synthetic-desk",
        prep=tp.PrepConfig(max_gap=600.0, min_duration=4200.0, max_duration=7620.0),
        prompt_len=24,
        horizon=48,
        dt=60.0,
        resolution_bits=28,
        block_size=128,
        eval=mx.EvalConfig(
            best_of_n=16,
            interval_marks=(600.0, 1200.0, 1800.0, 2400.0, 2880.0),
            units="km",
        ),
        regulator=reg.RegulatorConfig(max_hops=3, min_valid_steps=12),
        sampler=core.SamplerConfig(temperature=0.92, k_samples=16, max_steps=48, seed=seed),
    )
    return {p.name: p for p in (dma, trajair, synthetic)}


def resolve_protocol(name_or_path: str, seed: int) -> ProtocolSpec:
    builtins = builtin_protocols(seed)
    if name_or_path in builtins:
        return builtins[name_or_path]
    if os.path.exists(name_or_path):
        cp = configparser.ConfigParser()
        cp.read(name_or_path)
        return ProtocolSpec.from_config(cp, seed=seed)
    raise ConfigError(
        f"unknown protocol {name_or_path!r}; built-ins: {', '.join(sorted(builtins))}"
    )


def _parse_time(raw: str, fmt: str) -> float:
    if fmt == "epoch":
        return float(raw)
    # iso8601
    s = raw.replace("Z", "+00:00")
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _detect_format(raw: str) -> str | None:
    try:
        float(raw)
        return "epoch"
    except ValueError:
        pass
    try:
        _parse_time(raw, "iso8601")
        return "iso8601"
    except ValueError:
        return None


def ingest(path, spec: IngestSpec) -> list[tp.RawTrack]:
    """Parse, filter, dedupe, and group a CSV of observation rows.

    Malformed rows are skipped and counted; more than 50% malformed is a
    hard error.  Mixed epoch/ISO timestamp formats in one file are rejected.
    """
    by_entity: dict[str, list[tuple[float, float, float]]] = {}
    seen: set[tuple[str, float]] = set()
    n_rows = 0
    n_bad = 0
    fmt = None if spec.time_format == "auto" else spec.time_format
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        required = [spec.col_entity, spec.col_time, spec.col_lat, spec.col_lon]
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}; header is {header}")
        for row in reader:
            n_rows += 1
            try:
                raw_t = row[spec.col_time].strip()
                if fmt is None:
                    fmt = _detect_format(raw_t)
                    if fmt is None:
                        raise ValueError(f"unparseable timestamp {raw_t!r}")
                else:
                    if spec.time_format == "auto" and _detect_format(raw_t) not in (None, fmt):
                        raise ParseError(
                            f"{path}: mixed timestamp formats ({fmt} then {_detect_format(raw_t)})"
                        )
                t = _parse_time(raw_t, fmt)
                lat = float(row[spec.col_lat])
                lon = gc.normalize_lon(float(row[spec.col_lon]))
                if not (-90 <= lat <= 90) or not math.isfinite(t):
                    raise ValueError("coordinates out of range")
                entity = row[spec.col_entity].strip()
                if not entity:
                    raise ValueError("empty entity id")
            except ParseError:
                raise
            except (ValueError, TypeError, KeyError):
                n_bad += 1
                continue
            if spec.col_alt and spec.max_altitude is not None:
                try:
                    alt = float(row[spec.col_alt])
                except (ValueError, TypeError, KeyError):
                    n_bad += 1
                    continue
                if alt > spec.max_altitude:
                    continue
            if spec.aoi_bbox is not None:
                lat0, lat1, lon0, lon1 = spec.aoi_bbox
                if not (lat0 <= lat <= lat1 and lon0 <= lon <= lon1):
                    continue
            if spec.aoi_center is not None:
                clat, clon, radius = spec.aoi_center
                if mx.geodesic(gc.GeoPoint(lat, lon), gc.GeoPoint(clat, clon)) > radius:
                    continue
            key = (entity, t)
            if key in seen:
                continue  # duplicate (id, time): keep the first
            seen.add(key)
            by_entity.setdefault(entity, []).append((t, lat, lon))
    if n_rows and n_bad > n_rows / 2:
        raise DataError(f"{path}: {n_bad}/{n_rows} rows malformed")
    if n_bad:
        print(f"ingest: skipped {n_bad} malformed rows of {n_rows}", file=sys.stderr)
    if not by_entity:
        print(f"ingest: {path} produced no tracks", file=sys.stderr)
    tracks = [
        tp.RawTrack.from_records(entity, recs)
        for entity, recs in sorted(by_entity.items())
    ]
    return [t for t in tracks if t.obs]


@dataclass
class PrepResult:
    corpus_path: Path
    codec_path: Path
    codec: gc.CodecConfig
    dt: float
    tracks_in: int
    tracks_out: int
    gap_fraction: float


def run_prep(tracks: list[tp.RawTrack], protocol: ProtocolSpec, out_dir) -> PrepResult:
    """Grooming pipeline: codec, stationary/blackout/duration filters, dt, tokenize."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not tracks:
        raise DataError("prep: no input tracks")
    points = [o.point for tr in tracks for o in tr.obs]
    codec = gc.derive_codec(points, max_full_depth=protocol.resolution_bits)

    moving = [tr for tr in tracks if not tp.is_stationary(tr, codec)]
    pieces: list[tp.RawTrack] = []
    for tr in moving:
        pieces.extend(tp.split_on_blackout(tr, protocol.prep.max_gap))
    pieces = tp.filter_tracks(pieces, protocol.prep.min_duration, codec)
    if not pieces:
        raise DataError("prep: no tracks survived filtering")

    if protocol.dt is not None:
        dt = protocol.dt
    else:
        dt_an = tp.compute_dt_an(pieces, codec)
        dt_mc = tp.compute_dt_mc(
            pieces, protocol.block_size, max_duration=protocol.prep.max_duration
        )
        dt = tp.choose_dt(dt_an, dt_mc)

    token_tracks: list[tp.TokenTrack] = []
    for piece in sorted(pieces, key=lambda tr: (tr.entity_id, tr.obs[0].t)):
        groomed = tp.resample(piece, dt)
        if groomed is None:
            continue
        for seg in tp.split_long(groomed, protocol.prep.max_duration):
            # splitting can leave a short tail; hold every segment to the
            # same duration floor as whole tracks
            if len(seg.points) < 2 or seg.span < protocol.prep.min_duration:
                continue
            token_tracks.append(tp.tokenize(seg, codec))
    if not token_tracks:
        raise DataError("prep: empty token corpus after grooming")

    corpus_path = out_dir / "corpus.txt"
    codec_path = out_dir / "codec.txt"
    tp.write_corpus(corpus_path, token_tracks, codec, dt)
    codec_path.write_text(codec.to_text(), encoding="utf-8")
    gap = float(np.mean([t.gap_fraction for t in token_tracks]))
    result = PrepResult(
        corpus_path=corpus_path,
        codec_path=codec_path,
        codec=codec,
        dt=dt,
        tracks_in=len(tracks),
        tracks_out=len(token_tracks),
        gap_fraction=gap,
    )
    print(
        f"prep: {result.tracks_in} tracks in -> {result.tracks_out} token tracks"
        f" | dt={dt:g}s depth={codec.full_depth} prefix={codec.prefix.display() or '<root>'}"
        f" | hop>1 fraction {gap:.4f}"
    )
    return result


def run_train(
    corpus_path,
    out_dir,
    params: core.TrainParams,
    model_cfg: core.ModelConfig | None = None,
    resume: str | None = None,
    save_every: int = 0,
) -> Path:
    """Train (or resume) on a corpus file; writes checkpoint.bin and train.log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks, codec, dt = tp.read_corpus(corpus_path)
    corpus = [t.tokens for t in tracks]
    ckpt_path = out_dir / "checkpoint.bin"
    if resume:
        ckpt = core.load_checkpoint(resume)
    else:
        ckpt = core.init_model(model_cfg or core.ModelConfig())
        ckpt.codec = codec
        ckpt.dt = dt
    log_path = out_dir / "train.log"
    # pin the cosine horizon up front so periodic checkpointing cannot
    # reshape the schedule chunk by chunk
    total = params.total_steps if params.total_steps is not None else ckpt.step + params.steps
    params = replace(params, log_path=str(log_path), total_steps=total)
    remaining = params.steps
    chunk = save_every if save_every > 0 else remaining
    while remaining > 0:
        n = min(chunk, remaining)
        core.train(ckpt, corpus, replace(params, steps=n))
        remaining -= n
        core.save_checkpoint(ckpt, ckpt_path)
    if params.steps == 0:
        core.save_checkpoint(ckpt, ckpt_path)
    print(f"train: step {ckpt.step} -> {ckpt_path}")
    return ckpt_path


def groom_for_eval(
    tracks: list[tp.RawTrack], protocol: ProtocolSpec, ckpt: core.Checkpoint
) -> list[tp.GroomedTrack]:
    """Groom test tracks with the checkpoint's codec and dt (never re-derived)."""
    if ckpt.codec is None or ckpt.dt is None:
        raise ConfigError("checkpoint lacks codec/dt; was it trained via run_train?")
    moving = [tr for tr in tracks if not tp.is_stationary(tr, ckpt.codec)]
    pieces: list[tp.RawTrack] = []
    for tr in moving:
        pieces.extend(tp.split_on_blackout(tr, protocol.prep.max_gap))
    pieces = tp.filter_tracks(pieces, protocol.prep.min_duration, ckpt.codec)
    groomed: list[tp.GroomedTrack] = []
    for piece in sorted(pieces, key=lambda tr: (tr.entity_id, tr.obs[0].t)):
        g = tp.resample(piece, ckpt.dt)
        if g is None:
            continue
        groomed.extend(
            s for s in tp.split_long(g, protocol.prep.max_duration) if len(s.points) >= 2
        )
    return groomed


def forecast_resilient(
    ckpt: core.Checkpoint,
    prompt: tp.GroomedTrack,
    sampler: core.SamplerConfig,
    reg_cfg: reg.RegulatorConfig,
) -> reg.ForecastEnsemble | None:
    """forecast(), but when every sample fails the discard threshold, retry
    keeping any sample with at least one valid step.  None only when even
    the first forecast step hallucinates in all samples."""
    try:
        return reg.forecast(ckpt, prompt, sampler, reg_cfg)
    except reg.EmptyEnsembleError:
        pass
    try:
        return reg.forecast(ckpt, prompt, sampler, replace(reg_cfg, min_valid_steps=0))
    except reg.EmptyEnsembleError:
        return None


def baseline_const_velocity(
    prompt: tp.GroomedTrack, horizon: int, codec: gc.CodecConfig
) -> reg.ForecastEnsemble:
    """Linear extrapolation of the prompt's last-quarter mean velocity, as a K=1 ensemble."""
    pts = prompt.points
    if len(pts) < 2:
        raise DataError("baseline needs at least 2 prompt points")
    q = max(1, len(pts) // 4)
    a, b = pts[-1 - q], pts[-1]
    dt_total = q * prompt.dt
    vlat = (b.lat - a.lat) / dt_total
    dlon = math.fmod(b.lon - a.lon + 540.0, 360.0) - 180.0
    vlon = dlon / dt_total
    cells = []
    for k in range(horizon):
        t = (k + 1) * prompt.dt
        lat = min(90.0, max(-90.0, b.lat + vlat * t))
        lon = gc.normalize_lon(b.lon + vlon * t)
        cells.append(gc.encode_point(gc.GeoPoint(lat, lon), codec.full_depth))
    sample = reg.ForecastSample(
        tokens=[], cells=cells, truncated_at=None, valid_len=horizon, discarded=False
    )
    t_end = prompt.t0 + (len(pts) - 1) * prompt.dt
    times = [t_end + (k + 1) * prompt.dt for k in range(horizon)]
    return reg.ensemble([sample], times)


@dataclass
class EvalResult:
    report_path: Path
    csv_path: Path
    report: mx.BenchmarkReport
    skipped: int
    baseline_report: mx.BenchmarkReport | None = None


def run_eval(
    ckpt: core.Checkpoint,
    test_tracks: list[tp.RawTrack],
    protocol: ProtocolSpec,
    out_dir,
    with_baseline: bool = False,
    seed: int = DEFAULT_SEED,
) -> EvalResult:
    """Prompt-split every eligible test track, forecast, score, and aggregate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groomed = groom_for_eval(test_tracks, protocol, ckpt)
    need = protocol.prompt_len + protocol.horizon
    scores: list[mx.TrackScore] = []
    base_scores: list[mx.TrackScore] = []
    skipped = 0
    failed = 0
    for i, g in enumerate(groomed):
        if len(g.points) < need:
            skipped += 1
            continue
        prompt = tp.GroomedTrack(g.entity_id, g.t0, g.dt, g.points[: protocol.prompt_len])
        truth = g.points[protocol.prompt_len : need]
        sampler = replace(
            protocol.sampler, max_steps=protocol.horizon, seed=seed + 7919 * i
        )
        ens = forecast_resilient(ckpt, prompt, sampler, protocol.regulator)
        if ens is None:
            failed += 1
            continue
        scores.append(
            mx.score_track(truth, ens, protocol.eval, dt=g.dt, track_id=f"{g.entity_id}#{i}")
        )
        if with_baseline:
            base = baseline_const_velocity(prompt, protocol.horizon, ckpt.codec)
            base_cfg = replace(protocol.eval, best_of_n=1)
            base_scores.append(
                mx.score_track(truth, base, base_cfg, dt=g.dt, track_id=f"{g.entity_id}#{i}")
            )
    if failed:
        print(f"eval: {failed} tracks produced no valid forecast step", file=sys.stderr)
    if not scores:
        raise DataError(
            f"eval: no scoreable test track ({skipped} too short, {failed} all-hallucinated)"
        )
    report = mx.aggregate(scores, protocol.eval)
    report_path = out_dir / "report.txt"
    csv_path = out_dir / "report.csv"
    mx.write_report_text(report, report_path)
    mx.write_report_csv(report, csv_path)
    baseline_report = None
    if with_baseline:
        baseline_report = mx.aggregate(base_scores, protocol.eval)
        mx.write_report_text(baseline_report, out_dir / "baseline_report.txt")
        mx.write_report_csv(baseline_report, out_dir / "baseline_report.csv")
    print(f"eval: {len(scores)} tracks scored, {skipped} skipped")
    print(report.to_table(), end="")
    if baseline_report:
        print("constant-velocity baseline:")
        print(baseline_report.to_table(), end="")
    return EvalResult(
        report_path=report_path,
        csv_path=csv_path,
        report=report,
        skipped=skipped,
        baseline_report=baseline_report,
    )


def run_forecast(
    ckpt: core.Checkpoint,
    tracks: list[tp.RawTrack],
    protocol: ProtocolSpec,
    out_path,
    entity: str | None = None,
    track_index: int = 0,
    seed: int = DEFAULT_SEED,
) -> Path:
    """Forecast one track's continuation from its trailing prompt window."""
    groomed = groom_for_eval(tracks, protocol, ckpt)
    if entity is not None:
        groomed = [g for g in groomed if g.entity_id == entity]
    if not groomed:
        raise DataError("forecast: no groomed track matches the selection")
    if not 0 <= track_index < len(groomed):
        raise DataError(f"forecast: track index {track_index} out of range ({len(groomed)})")
    g = groomed[track_index]
    if len(g.points) < protocol.prompt_len:
        raise DataError(
            f"forecast: track has {len(g.points)} steps; prompt needs {protocol.prompt_len}"
        )
    start = len(g.points) - protocol.prompt_len
    prompt = tp.GroomedTrack(
        g.entity_id, g.t0 + start * g.dt, g.dt, g.points[start:]
    )
    sampler = replace(protocol.sampler, max_steps=protocol.horizon, seed=seed)
    ens = reg.forecast(ckpt, prompt, sampler, protocol.regulator)
    reg.write_geojson(ens, out_path)
    kept = [s for s in ens.samples if not s.discarded]
    truncated = [s for s in ens.samples if s.truncated_at is not None]
    dest = ens.consensus_destination
    print(
        f"forecast: {g.entity_id}: {len(kept)}/{len(ens.samples)} samples kept, "
        f"{len(truncated)} truncated | consensus ({dest.lat:.5f}, {dest.lon:.5f}) "
        f"support {ens.consensus_support} | {out_path}"
    )
    return Path(out_path)


def ingest_spec_from_config(cp: configparser.ConfigParser) -> IngestSpec:
    if "ingest" not in cp:
        return IngestSpec()
    s = cp["ingest"]
    bbox = None
    if s.get("aoi_bbox"):
        vals = [float(x) for x in s["aoi_bbox"].split()]
        if len(vals) != 4:
            raise ConfigError("aoi_bbox wants: lat_min lat_max lon_min lon_max")
        bbox = tuple(vals)
    center = None
    if s.get("aoi_center"):
        vals = [float(x) for x in s["aoi_center"].split()]
        if len(vals) != 3:
            raise ConfigError("aoi_center wants: lat lon radius_km")
        center = tuple(vals)
    return IngestSpec(
        col_entity=s.get("col_entity", "entity_id"),
        col_time=s.get("col_time", "timestamp"),
        col_lat=s.get("col_lat", "lat"),
        col_lon=s.get("col_lon", "lon"),
        col_alt=s.get("col_alt") or None,
        time_format=s.get("time_format", "auto"),
        max_altitude=float(s["max_altitude"]) if s.get("max_altitude") else None,
        aoi_bbox=bbox,
        aoi_center=center,
    )


def _load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _global_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer: {env!r}") from e
    return DEFAULT_SEED


def _apply_determinism(args) -> None:
    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)


def _protocol_for(args, seed: int) -> ProtocolSpec:
    cp = _load_config(getattr(args, "config", None))
    if cp.has_section("protocol"):
        return ProtocolSpec.from_config(cp, seed=seed)
    return resolve_protocol(args.protocol, seed)


def cmd_prep(args) -> int:
    seed = _global_seed(args)
    _apply_determinism(args)
    protocol = _protocol_for(args, seed)
    spec = ingest_spec_from_config(_load_config(args.config))
    tracks = ingest(args.input, spec)
    run_prep(tracks, protocol, args.out_dir)
    return 0


def cmd_train(args) -> int:
    seed = _global_seed(args)
    _apply_determinism(args)
    model_cfg = core.ModelConfig(
        block_size=args.block_size,
        n_layer=args.n_layer,
        n_head=args.n_head,
        d_model=args.d_model,
        dropout=args.dropout,
        seed=seed,
    )
    params = core.TrainParams(
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        warmup_steps=args.warmup,
        total_steps=args.total_steps,
        weight_decay=args.weight_decay,
        seed=seed,
        log_every=args.log_every,
    )
    run_train(
        args.corpus,
        args.out_dir,
        params,
        model_cfg=model_cfg,
        resume=args.resume,
        save_every=args.save_every,
    )
    return 0


def cmd_forecast(args) -> int:
    seed = _global_seed(args)
    _apply_determinism(args)
    protocol = _protocol_for(args, seed)
    spec = ingest_spec_from_config(_load_config(args.config))
    ckpt = core.load_checkpoint(args.checkpoint)
    tracks = ingest(args.input, spec)
    run_forecast(
        ckpt,
        tracks,
        protocol,
        args.out,
        entity=args.entity,
        track_index=args.track_index,
        seed=seed,
    )
    return 0


def cmd_eval(args) -> int:
    seed = _global_seed(args)
    _apply_determinism(args)
    protocol = _protocol_for(args, seed)
    spec = ingest_spec_from_config(_load_config(args.config))
    ckpt = core.load_checkpoint(args.checkpoint)
    tracks = ingest(args.input, spec)
    run_eval(ckpt, tracks, protocol, args.out_dir, with_baseline=args.baseline, seed=seed)
    return 0


def cmd_plot(args) -> int:
    plotting.render_file(args.input, args.out)
    print(f"plot: {args.input} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="trackgpt",
        description="Trajectory forecasting over 16-bit geohash tokens.",
    )
    ap.add_argument("--seed", type=int, default=None, help=f"global seed (default ${SEED_ENV} or {DEFAULT_SEED})")
    ap.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded torch for bit-reproducible runs",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="groom a CSV of tracks into a token corpus")
    p.add_argument("--input", required=True, help="observation CSV")
    p.add_argument("--protocol", default="synthetic-desk")
    p.add_argument("--config", default=None, help="INI config (ingest/protocol overrides)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_prep)

    p = sub.add_parser("train", help="train or resume a model on a token corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=3)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--n-layer", type=int, default=4)
    p.add_argument("--n-head", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--save-every", type=int, default=0, help="checkpoint every N steps")
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("forecast", help="forecast one track and export GeoJSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--protocol", default="synthetic-desk")
    p.add_argument("--config", default=None)
    p.add_argument("--entity", default=None)
    p.add_argument("--track-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("eval", help="benchmark a checkpoint on test tracks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--protocol", default="synthetic-desk")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--baseline", action="store_true", help="also score constant velocity")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render GeoJSON or a report CSV to SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TrackGptError as e:
        print(f"error code={e.code} msg={e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error code=io msg={e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
