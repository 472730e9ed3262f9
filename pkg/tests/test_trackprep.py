import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackgpt import geocodec as gc
from trackgpt import trackprep as tp
from trackgpt.errors import ConfigError, DataError, InputError


def make_track(entity, records):
    return tp.RawTrack.from_records(entity, records)


def linear_track(entity="lin", t0=0.0, n=50, step=30.0, lat0=40.0, lon0=-72.0, vlat=1e-4, vlon=2e-4):
    return make_track(
        entity,
        [(t0 + i * step, lat0 + vlat * i * step, lon0 + vlon * i * step) for i in range(n)],
    )


def small_codec(center=gc.GeoPoint(40.05, -71.95), prefix_depth=14):
    return gc.CodecConfig(prefix=gc.encode_point(center, prefix_depth))


class TestSplitOnBlackout:
    def test_no_gaps(self):
        tr = linear_track()
        pieces = tp.split_on_blackout(tr, max_gap=60.0)
        assert len(pieces) == 1
        assert pieces[0].obs == tr.obs

    def test_single_gap(self):
        records = [(0, 40, -72), (10, 40.01, -72), (210, 40.02, -72), (220, 40.03, -72)]
        tr = make_track("g", records)
        pieces = tp.split_on_blackout(tr, max_gap=100.0)
        assert len(pieces) == 2
        assert [len(p.obs) for p in pieces] == [2, 2]

    def test_matches_rescan_oracle(self):
        rng = random.Random(20)
        for _ in range(30):
            ts = [0.0]
            for _ in range(60):
                ts.append(ts[-1] + rng.choice([5.0, 20.0, 150.0]))
            tr = make_track("r", [(t, 40 + 1e-5 * t, -72) for t in ts])
            max_gap = 100.0
            pieces = tp.split_on_blackout(tr, max_gap)
            # oracle: boundaries are exactly the oversized deltas
            expected_cuts = sum(1 for a, b in zip(ts, ts[1:]) if b - a > max_gap)
            assert len(pieces) == expected_cuts + 1
            rebuilt = [o for p in pieces for o in p.obs]
            assert rebuilt == tr.obs
            for p in pieces:
                assert all(b.t - a.t <= max_gap for a, b in zip(p.obs, p.obs[1:]))


class TestFilterTracks:
    def test_span_equal_to_min_kept(self):
        tr = make_track("a", [(0, 40, -72), (600, 40.01, -72)])
        assert tp.filter_tracks([tr], min_duration=600.0) == [tr]

    def test_single_point_dropped(self):
        tr = make_track("b", [(0, 40, -72)])
        assert tp.filter_tracks([tr], min_duration=0.0) == []

    def test_stationary_dropped(self):
        codec = small_codec()
        box = gc.point_of(100, codec)
        mid = box.center()
        eps_lat = (box.lat_max - box.lat_min) * 1e-4
        tr = make_track(
            "s", [(i * 60.0, mid.lat + (i % 2) * eps_lat, mid.lon) for i in range(20)]
        )
        assert tp.filter_tracks([tr], min_duration=0.0, codec=codec) == []
        moving = linear_track()
        assert tp.filter_tracks([moving], min_duration=0.0, codec=codec) == [moving]


class TestInterpolateAt:
    def test_exact_observation(self):
        tr = linear_track()
        for o in tr.obs[:5]:
            assert tp.interpolate_at(tr, o.t) == o.point

    def test_meridian_midpoint(self):
        tr = make_track("m", [(0, 10.0, 5.0), (100, 20.0, 5.0)])
        p = tp.interpolate_at(tr, 50.0)
        assert p.lat == pytest.approx(15.0)
        assert p.lon == pytest.approx(5.0)

    def test_antimeridian_shorter_arc(self):
        tr = make_track("w", [(0, 0.0, 179.9), (100, 0.0, -179.9)])
        p = tp.interpolate_at(tr, 50.0)
        assert p.lon == pytest.approx(-180.0)
        quarter = tp.interpolate_at(tr, 25.0)
        assert quarter.lon == pytest.approx(179.95)

    def test_outside_span(self):
        tr = linear_track(t0=100.0)
        with pytest.raises(InputError):
            tp.interpolate_at(tr, 99.0)

    def test_continuity(self):
        tr = make_track(
            "c", [(0, 40, -72), (60, 40.01, -71.98), (180, 40.05, -71.9), (200, 40.06, -71.89)]
        )
        prev = None
        for i in range(400):
            t = i * 0.5
            p = tp.interpolate_at(tr, t)
            if prev is not None:
                assert abs(p.lat - prev.lat) < 0.01
                assert abs(p.lon - prev.lon) < 0.01
            prev = p


class TestResample:
    def test_exact_multiple_span(self):
        tr = make_track("e", [(0, 40, -72), (1000, 40.1, -72)])
        groomed = tp.resample(tr, 100.0)
        assert len(groomed.points) == 11
        assert groomed.times[-1] == 1000.0

    def test_fractional_span(self):
        tr = make_track("f", [(0, 40, -72), (1050, 40.1, -72)])
        groomed = tp.resample(tr, 100.0)
        assert len(groomed.points) == 11
        assert groomed.times[-1] == 1000.0

    def test_matches_analytic_linear_motion(self):
        vlat, vlon = 3e-5, -2e-5
        tr = make_track(
            "l",
            [(t, 40 + vlat * t, -72 + vlon * t) for t in (0, 17.3, 101.9, 250.0, 377.7, 500.1)],
        )
        groomed = tp.resample(tr, 25.0)
        for k, p in enumerate(groomed.points):
            t = 25.0 * k
            assert p.lat == pytest.approx(40 + vlat * t, abs=1e-9)
            assert p.lon == pytest.approx(-72 + vlon * t, abs=1e-9)

    def test_too_short(self):
        tr = make_track("t", [(0, 40, -72), (50, 40.01, -72)])
        assert tp.resample(tr, 100.0) is None

    @given(st.integers(2, 40), st.floats(10.0, 500.0))
    @settings(max_examples=60, deadline=None)
    def test_spacing_exact(self, n, dt):
        tr = make_track("p", [(i * 61.7, 40 + 1e-5 * i, -72) for i in range(n)])
        groomed = tp.resample(tr, dt)
        if groomed is None:
            assert tr.span < dt
        else:
            times = groomed.times
            assert all(
                times[k + 1] - times[k] == pytest.approx(dt, rel=1e-12)
                for k in range(len(times) - 1)
            )
            assert times[-1] <= tr.obs[-1].t + 1e-9
            assert tr.obs[-1].t - times[-1] < dt


class TestDtRules:
    def test_dt_mc_hand_case(self):
        # one 20-hour track and a 121-token block: 72000 s / 120 = 600 s
        tr = make_track("h", [(0, 40, -72), (72000, 41, -70)])
        assert tp.compute_dt_mc([tr], 121) == pytest.approx(600.0)

    def test_dt_mc_caps_spans(self):
        tr = make_track("h", [(0, 40, -72), (144000, 41, -70)])
        assert tp.compute_dt_mc([tr], 121, max_duration=72000.0) == pytest.approx(600.0)

    def test_dt_mc_empty(self):
        with pytest.raises(DataError):
            tp.compute_dt_mc([], 121)

    def test_dt_an_stationary_hits_upper_bound(self):
        tr = make_track("s", [(i * 60.0, 40.0, -72.0) for i in range(100)])
        codec = small_codec()
        assert tp.compute_dt_an([tr], codec) == pytest.approx(tr.span)

    def _cell_per_interval_track(self, codec, seconds_per_cell):
        # constant-speed eastward motion crossing one full-depth cell per
        # seconds_per_cell, following cell-center latitude to keep hops clean
        depth = codec.full_depth
        box = gc.cell_bbox(codec.prefix)
        lat = (box.lat_min + box.lat_max) / 2
        cell_w = 360.0 / (1 << gc.n_lon_bits(depth))
        lon0 = box.lon_min + cell_w / 2
        v = cell_w / seconds_per_cell
        n = int((box.lon_max - box.lon_min - cell_w) / cell_w * seconds_per_cell / 10)
        return tp.RawTrack(
            "v",
            [
                tp.Observation(gc.GeoPoint(lat, lon0 + v * (i * 10.0)), i * 10.0)
                for i in range(n)
            ],
        )

    def test_dt_an_constant_speed_bracket(self):
        codec = small_codec(prefix_depth=16)
        tr = self._cell_per_interval_track(codec, seconds_per_cell=60.0)
        # 16 iterations resolve the span to well under a second so the
        # analytic bracket is meaningful; the default 10 stays coarser
        dt_an = tp.compute_dt_an([tr], codec, iterations=16)
        assert 60.0 <= dt_an < 130.0

    def test_dt_an_scales_with_speed(self):
        codec = small_codec(prefix_depth=16)
        slow = self._cell_per_interval_track(codec, seconds_per_cell=120.0)
        fast = self._cell_per_interval_track(codec, seconds_per_cell=60.0)
        dt_slow = tp.compute_dt_an([slow], codec, iterations=16)
        dt_fast = tp.compute_dt_an([fast], codec, iterations=16)
        assert dt_slow == pytest.approx(2 * dt_fast, rel=0.25)

    def test_choose_dt(self):
        assert tp.choose_dt(600.0, 300.0) == 600.0
        assert tp.choose_dt(300.0, 600.0) == 600.0
        assert tp.choose_dt(600.0, 600.0) == 600.0

    @given(st.floats(0.1, 1e5), st.floats(0.1, 1e5))
    @settings(max_examples=100, deadline=None)
    def test_choose_dt_is_max(self, a, b):
        out = tp.choose_dt(a, b)
        assert out == max(a, b)
        assert out >= a and out >= b


class TestSplitLong:
    def groomed(self, n, dt=600.0):
        return tp.GroomedTrack(
            "g", 0.0, dt, [gc.GeoPoint(40 + 1e-4 * i, -72) for i in range(n)]
        )

    def test_forty_hours_splits_in_two(self):
        tr = self.groomed(241)  # 40 h at 10-minute spacing
        segs = tp.split_long(tr, max_duration=72000.0)
        assert len(segs) == 2
        assert all(s.span <= 72000.0 for s in segs)
        assert sum(len(s.points) for s in segs) == 241

    def test_under_cap_unchanged(self):
        tr = self.groomed(100)
        assert tp.split_long(tr, max_duration=72000.0) == [tr]

    def test_point_counts_preserved(self):
        rng = random.Random(21)
        for _ in range(50):
            n = rng.randint(2, 500)
            tr = self.groomed(n, dt=60.0)
            segs = tp.split_long(tr, max_duration=rng.choice([600.0, 1800.0, 3600.0]))
            assert sum(len(s.points) for s in segs) == n
            assert all(s.span <= 3600.0 + 1e-9 or len(s.points) >= 2 for s in segs)
            flat = [p for s in segs for p in s.points]
            assert flat == tr.points


class TestTokenize:
    def test_stationary_all_equal(self):
        codec = small_codec()
        box = gc.point_of(777, codec)
        mid = box.center()
        tr = tp.GroomedTrack("s", 0.0, 60.0, [mid] * 10)
        tok = tp.tokenize(tr, codec)
        assert set(tok.tokens) == {777}
        assert tok.gap_fraction == 0.0

    def test_slow_motion_no_gaps(self):
        codec = small_codec()
        box = gc.cell_bbox(codec.prefix)
        depth = codec.full_depth
        cell_w = 360.0 / (1 << gc.n_lon_bits(depth))
        lat = (box.lat_min + box.lat_max) / 2
        pts = [
            gc.GeoPoint(lat, box.lon_min + cell_w * (0.5 + 0.4 * i))
            for i in range(60)
        ]
        tok = tp.tokenize(tp.GroomedTrack("m", 0.0, 60.0, pts), codec)
        assert tok.gap_fraction == 0.0

    def test_matches_pointwise_token_of(self):
        codec = small_codec()
        tr = tp.resample(linear_track(), 60.0)
        tok = tp.tokenize(tr, codec)
        assert tok.tokens == [gc.token_of(p, codec) for p in tr.points]
        assert len(tok.tokens) == len(tr.points)


class TestCorpusIO:
    def test_roundtrip(self, tmp_path):
        codec = small_codec()
        tracks = [
            tp.TokenTrack("a", 0.0, 60.0, [1, 2, 3, 4]),
            tp.TokenTrack("b", 0.0, 60.0, [65535, 0, 9]),
        ]
        path = tmp_path / "corpus.txt"
        tp.write_corpus(path, tracks, codec, 60.0)
        loaded, codec2, dt = tp.read_corpus(path)
        assert codec2 == codec
        assert dt == 60.0
        assert [t.tokens for t in loaded] == [[1, 2, 3, 4], [65535, 0, 9]]

    def test_byte_identical_rewrite(self, tmp_path):
        codec = small_codec()
        tracks = [tp.TokenTrack("a", 0.0, 60.0, list(range(50)))]
        p1, p2 = tmp_path / "c1.txt", tmp_path / "c2.txt"
        tp.write_corpus(p1, tracks, codec, 61.5)
        tp.write_corpus(p2, tracks, codec, 61.5)
        assert p1.read_bytes() == p2.read_bytes()


class TestPrepConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            tp.PrepConfig(max_gap=0.0, min_duration=1.0, max_duration=2.0)
        with pytest.raises(ConfigError):
            tp.PrepConfig(max_gap=10.0, min_duration=5.0, max_duration=5.0)
