import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bfs_hops as grid_bfs_hops
from oracles import reference_encode

from trackgpt import geocodec as gc
from trackgpt.errors import ConfigError, CoverageError, InputError


def random_points(rng, n):
    return [
        gc.GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180)) for _ in range(n)
    ]


class TestEncodePoint:
    def test_known_vector(self):
        cell = gc.encode_point(gc.GeoPoint(57.64911, 10.40744), 55)
        assert cell.geohash() == "u4pruydqqvj"

    def test_origin(self):
        assert gc.encode_point(gc.GeoPoint(0.0, 0.0), 5).geohash() == "s"

    def test_matches_reference_on_random_points(self):
        rng = random.Random(7)
        for p in random_points(rng, 300):
            for depth in (5, 20, 41, 55):
                cell = gc.encode_point(p, depth)
                _, ref_bits, _ = reference_encode(p.lat, p.lon, depth)
                assert cell.bits == ref_bits, (p, depth)

    def test_truncation_is_prefix(self):
        rng = random.Random(8)
        for p in random_points(rng, 100):
            full = gc.encode_point(p, 30)
            assert full.truncate(25) == gc.encode_point(p, 25)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            gc.encode_point(gc.GeoPoint(91.0, 0.0), 10)
        with pytest.raises(InputError):
            gc.encode_point(gc.GeoPoint(0.0, 180.0), 10)
        with pytest.raises(InputError):
            gc.encode_point(gc.GeoPoint(0.0, 0.0), 0)
        with pytest.raises(InputError):
            gc.encode_point(gc.GeoPoint(0.0, 0.0), 61)

    def test_poles_and_dateline(self):
        top = gc.encode_point(gc.GeoPoint(90.0, -180.0), 12)
        assert gc.cell_bbox(top).lat_max == 90.0
        assert gc.cell_bbox(top).lon_min == -180.0

    @given(
        st.floats(-90, 90, allow_nan=False),
        st.floats(-180, 180, exclude_max=True, allow_nan=False),
        st.integers(1, 60),
    )
    @settings(max_examples=200, deadline=None)
    def test_bbox_contains_point(self, lat, lon, depth):
        p = gc.GeoPoint(lat, lon)
        assert gc.cell_bbox(gc.encode_point(p, depth)).contains(p)


class TestCellBBox:
    def test_root(self):
        box = gc.cell_bbox(gc.CellId(0, 0))
        assert (box.lat_min, box.lat_max, box.lon_min, box.lon_max) == (
            -90.0,
            90.0,
            -180.0,
            180.0,
        )

    def test_depth16_widths(self):
        box = gc.cell_bbox(gc.encode_point(gc.GeoPoint(10.0, 10.0), 16))
        assert box.lon_max - box.lon_min == pytest.approx(360.0 / 256)
        assert box.lat_max - box.lat_min == pytest.approx(180.0 / 256)

    def test_width_formula_matches_bisection(self):
        rng = random.Random(9)
        for p in random_points(rng, 50):
            depth = rng.randint(1, 55)
            box = gc.cell_bbox(gc.encode_point(p, depth))
            _, _, (lat_lo, lat_hi, lon_lo, lon_hi) = reference_encode(p.lat, p.lon, depth)
            assert (box.lat_min, box.lat_max) == (lat_lo, lat_hi)
            assert (box.lon_min, box.lon_max) == (lon_lo, lon_hi)
            assert box.lon_max - box.lon_min == 360.0 / 2 ** math.ceil(depth / 2)
            assert box.lat_max - box.lat_min == 180.0 / 2 ** (depth // 2)

    def test_center(self):
        assert gc.cell_center(gc.CellId(0, 0)) == gc.GeoPoint(0.0, 0.0)
        c = gc.encode_point(gc.GeoPoint(57.64911, 10.40744), 55)
        mid = gc.cell_center(c)
        assert gc.cell_bbox(c).contains(mid)
        assert mid.lat == pytest.approx(57.64911, abs=1e-5)
        assert mid.lon == pytest.approx(10.40744, abs=1e-5)


class TestGrid:
    def test_depth2_enumeration(self):
        seen = set()
        for bits in range(4):
            seen.add(gc.grid_coords(gc.CellId(bits, 2)))
        assert seen == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_grid_roundtrip(self):
        rng = random.Random(10)
        for _ in range(10_000):
            depth = rng.randint(1, 60)
            bits = rng.getrandbits(depth)
            cell = gc.CellId(bits, depth)
            ix, iy = gc.grid_coords(cell)
            assert gc.cell_from_grid(ix, iy, depth) == cell

    def test_eastern_neighbor_increments_ix(self):
        rng = random.Random(11)
        for _ in range(200):
            cell = gc.encode_point(
                gc.GeoPoint(rng.uniform(-89, 89), rng.uniform(-179, 179)), 10
            )
            ix, iy = gc.grid_coords(cell)
            box = gc.cell_bbox(cell)
            east = gc.encode_point(
                gc.GeoPoint((box.lat_min + box.lat_max) / 2, gc.normalize_lon(box.lon_max + 1e-9)),
                10,
            )
            ex, ey = gc.grid_coords(east)
            nx = 1 << gc.n_lon_bits(10)
            assert (ex, ey) == ((ix + 1) % nx, iy)


def bfs_hops(a, b, depth):
    """Oracle: shortest king-move path length on the wrapped cell grid."""
    nx = 1 << gc.n_lon_bits(depth)
    ny = 1 << gc.n_lat_bits(depth)
    return grid_bfs_hops(gc.grid_coords(a), gc.grid_coords(b), nx, ny)


class TestHopDistance:
    def test_same_cell(self):
        c = gc.encode_point(gc.GeoPoint(10, 10), 8)
        assert gc.hop_distance(c, c) == 0

    def test_eight_neighbors(self):
        c = gc.encode_point(gc.GeoPoint(10, 10), 12)
        for n in gc.neighbors(c):
            assert gc.hop_distance(c, n) == 1

    def test_depth_mismatch(self):
        with pytest.raises(InputError):
            gc.hop_distance(gc.CellId(0, 4), gc.CellId(0, 6))

    def test_matches_bfs_oracle(self):
        rng = random.Random(12)
        for _ in range(120):
            depth = rng.choice([6, 8, 10])
            a = gc.CellId(rng.getrandbits(depth), depth)
            b = gc.CellId(rng.getrandbits(depth), depth)
            assert gc.hop_distance(a, b) == bfs_hops(a, b, depth)

    def test_antimeridian_wrap(self):
        west = gc.encode_point(gc.GeoPoint(0.0, -179.99), 10)
        east = gc.encode_point(gc.GeoPoint(0.0, 179.99), 10)
        assert gc.hop_distance(west, east) == bfs_hops(west, east, 10) == 1

    @given(st.integers(1, 12), st.data())
    @settings(max_examples=100, deadline=None)
    def test_metric_axioms(self, depth, data):
        bits = st.integers(0, (1 << depth) - 1)
        a = gc.CellId(data.draw(bits), depth)
        b = gc.CellId(data.draw(bits), depth)
        c = gc.CellId(data.draw(bits), depth)
        assert gc.hop_distance(a, b) == gc.hop_distance(b, a)
        assert (gc.hop_distance(a, b) == 0) == (a == b)
        assert gc.hop_distance(a, c) <= gc.hop_distance(a, b) + gc.hop_distance(b, c)


class TestCharacters:
    def test_roundtrip_through_alphabet(self):
        rng = random.Random(13)
        for _ in range(500):
            depth = 5 * rng.randint(1, 12)
            cell = gc.CellId(rng.getrandbits(depth), depth)
            assert gc.from_geohash(cell.geohash()) == cell

    def test_display_partial_bits(self):
        # bit 15 is canonically a latitude bisection, so the half-character
        # marker after three characters reads N/S; the next bit is E/W
        cell = gc.from_geohash("dqc")
        child = gc.CellId(cell.bits << 1 | 1, 16)
        assert child.display() == "dqcN"
        child2 = gc.CellId(cell.bits << 2 | 0b10, 17)
        assert child2.display() == "dqcNW"


class TestDeriveCodec:
    def test_cluster_in_one_cell_keeps_prefix(self):
        base = gc.cell_bbox(gc.from_geohash("dq"))
        rng = random.Random(14)
        pts = [
            gc.GeoPoint(
                rng.uniform(base.lat_min + 1e-6, base.lat_max - 1e-6),
                rng.uniform(base.lon_min + 1e-6, base.lon_max - 1e-6),
            )
            for _ in range(200)
        ]
        codec = gc.derive_codec(pts)
        assert codec.shift == (0, 0)
        assert codec.prefix.depth >= 10
        assert codec.prefix.truncate(10) == gc.from_geohash("dq")

    def test_single_point_maxes_out(self):
        codec = gc.derive_codec([gc.GeoPoint(41.2, -71.8)])
        assert codec.prefix.depth == gc.MAX_PREFIX_DEPTH
        assert codec.full_depth == gc.MAX_DEPTH
        assert codec.shift == (0, 0)

    def test_straddling_cluster_shifts(self):
        # two points in laterally adjacent full-depth cells across the
        # equator: unshifted, their common prefix loses the top lat bit
        depth = 32
        eps = 1e-9
        pts = [gc.GeoPoint(-eps, 10.0), gc.GeoPoint(eps, 10.0)]
        unshifted = gc.derive_codec(pts, max_full_depth=depth, shift_radius=0)
        shifted = gc.derive_codec(pts, max_full_depth=depth)
        assert shifted.prefix.depth >= unshifted.prefix.depth
        assert shifted.prefix.depth > unshifted.prefix.depth
        assert shifted.shift != (0, 0)
        for p in pts:
            t = gc.token_of(p, shifted)
            assert gc.point_of(t, shifted).contains(p)

    def test_never_worse_than_unshifted(self):
        rng = random.Random(15)
        for _ in range(20):
            lat0 = rng.uniform(-60, 60)
            lon0 = rng.uniform(-170, 170)
            pts = [
                gc.GeoPoint(lat0 + rng.uniform(-0.3, 0.3), lon0 + rng.uniform(-0.3, 0.3))
                for _ in range(30)
            ]
            plain = gc.derive_codec(pts, shift_radius=0)
            best = gc.derive_codec(pts)
            assert best.prefix.depth >= plain.prefix.depth

    def test_empty_dataset(self):
        with pytest.raises(InputError):
            gc.derive_codec([])

    def test_bad_cap(self):
        with pytest.raises(ConfigError):
            gc.derive_codec([gc.GeoPoint(0, 0)], max_full_depth=61)
        with pytest.raises(ConfigError):
            gc.derive_codec([gc.GeoPoint(0, 0)], max_full_depth=16)

    def test_resolution_cap_respected(self):
        pts = [gc.GeoPoint(40.0, -72.0)]
        codec = gc.derive_codec(pts, max_full_depth=25)
        assert codec.full_depth == 25
        assert codec.prefix.depth == 9


class TestTokens:
    def build_codec(self):
        prefix = gc.encode_point(gc.GeoPoint(40.43, -72.42), 16)
        return gc.CodecConfig(prefix=prefix)

    def test_roundtrip_containment(self):
        codec = self.build_codec()
        box = gc.cell_bbox(codec.prefix)
        rng = random.Random(16)
        for _ in range(2000):
            p = gc.GeoPoint(
                rng.uniform(box.lat_min, box.lat_max - 1e-12),
                rng.uniform(box.lon_min, box.lon_max - 1e-12),
            )
            t = gc.token_of(p, codec)
            assert 0 <= t < gc.VOCAB_SIZE
            assert gc.point_of(t, codec).contains(p)

    def test_same_cell_same_token(self):
        codec = self.build_codec()
        box = gc.point_of(12345, codec)
        mid = box.center()
        near = gc.GeoPoint(mid.lat + 1e-9, mid.lon + 1e-9)
        assert gc.token_of(mid, codec) == gc.token_of(near, codec) == 12345

    def test_outside_prefix_raises(self):
        codec = self.build_codec()
        with pytest.raises(CoverageError):
            gc.token_of(gc.GeoPoint(-40.0, 100.0), codec)

    def test_token_zero_is_low_corner(self):
        codec = self.build_codec()
        prefix_box = gc.cell_bbox(codec.prefix)
        box = gc.point_of(0, codec)
        assert box.lat_min == prefix_box.lat_min
        assert box.lon_min == prefix_box.lon_min

    def test_half_character_bit_is_last(self):
        codec = self.build_codec()
        # two points in the same 15-bit cell but opposite halves of the
        # final bisection differ only in the last token bit
        box15 = gc.cell_bbox(codec.prefix)
        t_any = gc.token_of(gc.GeoPoint(40.43, -72.42), codec)
        cell = gc.cell_of_token(t_any, codec)
        parent = cell.truncate(codec.full_depth - 1)
        lo = gc.CellId(parent.bits << 1, codec.full_depth)
        hi = gc.CellId(parent.bits << 1 | 1, codec.full_depth)
        p_lo = gc.cell_bbox(lo).center()
        p_hi = gc.cell_bbox(hi).center()
        t_lo = gc.token_of(p_lo, codec)
        t_hi = gc.token_of(p_hi, codec)
        assert t_lo ^ t_hi == 1

    def test_shifted_roundtrip(self):
        rng = random.Random(17)
        for trial in range(30):
            lat0 = rng.uniform(-50, 50)
            lon0 = rng.uniform(-170, 170)
            pts = [
                gc.GeoPoint(lat0 + rng.uniform(-0.05, 0.05), lon0 + rng.uniform(-0.05, 0.05))
                for _ in range(40)
            ]
            codec = gc.derive_codec(pts, max_full_depth=34)
            for p in pts:
                t = gc.token_of(p, codec)
                assert gc.point_of(t, codec).contains(p)

    def test_serialization_roundtrip(self):
        pts = [gc.GeoPoint(1e-9, 10.0), gc.GeoPoint(-1e-9, 10.0)]
        codec = gc.derive_codec(pts, max_full_depth=32)
        parsed = gc.CodecConfig.from_text(codec.to_text())
        assert parsed == codec
        # partial-character prefixes survive the padded rendering
        codec2 = gc.CodecConfig(prefix=gc.encode_point(gc.GeoPoint(3, 3), 13))
        assert gc.CodecConfig.from_text(codec2.to_text()) == codec2


@given(
    st.floats(-90, 90, allow_nan=False),
    st.floats(-180, 180, exclude_max=True, allow_nan=False),
)
@settings(max_examples=300, deadline=None)
def test_property_token_roundtrip(lat, lon):
    p = gc.GeoPoint(lat, lon)
    codec = gc.CodecConfig(prefix=gc.encode_point(p, 20))
    t = gc.token_of(p, codec)
    assert gc.point_of(t, codec).contains(p)
