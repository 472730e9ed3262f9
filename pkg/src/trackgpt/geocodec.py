"""Bit-exact geohash cells and the 16-bit token codec.

A cell is a node in the standard geohash bisection tree: bits alternate
longitude (bit 0, most significant) and latitude, and every 5-bit group
renders as one character of the base-32 alphabet.  A codec pins a fixed
prefix cell (the modeled area) plus an optional whole-cell shift, so that
the 16 bits following the prefix form a token in [0, 65536).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, CoverageError, InputError, ParseError

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_INDEX = {c: i for i, c in enumerate(BASE32)}

MAX_DEPTH = 60
TOKEN_DEPTH = 16
VOCAB_SIZE = 1 << TOKEN_DEPTH
MAX_PREFIX_DEPTH = MAX_DEPTH - TOKEN_DEPTH
SHIFT_RADIUS = 2


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into [-180, 180)."""
    lon = math.fmod(lon + 180.0, 360.0)
    if lon < 0:
        lon += 360.0
    return lon - 180.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float


def check_point(p: GeoPoint) -> None:
    if not (-90.0 <= p.lat <= 90.0) or not math.isfinite(p.lat):
        raise InputError(f"latitude out of range: {p.lat}")
    if not (-180.0 <= p.lon < 180.0) or not math.isfinite(p.lon):
        raise InputError(f"longitude out of range (want [-180, 180)): {p.lon}")


def n_lon_bits(depth: int) -> int:
    return (depth + 1) // 2


def n_lat_bits(depth: int) -> int:
    return depth // 2


def interleave(ix: int, iy: int, depth: int) -> int:
    """Pack lon/lat grid coordinates into an interleaved bit string (MSB first)."""
    nlon = n_lon_bits(depth)
    nlat = n_lat_bits(depth)
    bits = 0
    for k in range(depth):
        if k % 2 == 0:
            i = k // 2  # i-th lon bit, MSB first
            b = (ix >> (nlon - 1 - i)) & 1
        else:
            i = k // 2
            b = (iy >> (nlat - 1 - i)) & 1
        bits = (bits << 1) | b
    return bits


def deinterleave(bits: int, depth: int) -> tuple[int, int]:
    ix = 0
    iy = 0
    for k in range(depth):
        b = (bits >> (depth - 1 - k)) & 1
        if k % 2 == 0:
            ix = (ix << 1) | b
        else:
            iy = (iy << 1) | b
    return ix, iy


@dataclass(frozen=True)
class CellId:
    """A geohash cell: ``depth`` interleaved bits, most significant first."""

    bits: int
    depth: int

    def __post_init__(self) -> None:
        if not 0 <= self.depth <= MAX_DEPTH:
            raise InputError(f"cell depth out of range: {self.depth}")
        if not 0 <= self.bits < (1 << self.depth):
            raise InputError(f"cell bits do not fit depth {self.depth}: {self.bits}")

    def truncate(self, depth: int) -> "CellId":
        if depth > self.depth:
            raise InputError(f"cannot truncate depth {self.depth} to {depth}")
        return CellId(self.bits >> (self.depth - depth), depth)

    def geohash(self) -> str:
        """Base-32 characters for the full 5-bit groups of this cell."""
        chars = []
        for g in range(self.depth // 5):
            group = (self.bits >> (self.depth - 5 * (g + 1))) & 0x1F
            chars.append(BASE32[group])
        return "".join(chars)

    def display(self) -> str:
        """Characters plus one axis marker (E/W or N/S) per trailing partial bit."""
        s = self.geohash()
        for k in range(5 * (self.depth // 5), self.depth):
            b = (self.bits >> (self.depth - 1 - k)) & 1
            if k % 2 == 0:
                s += "E" if b else "W"
            else:
                s += "N" if b else "S"
        return s


@dataclass(frozen=True)
class CellBBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, p: GeoPoint) -> bool:
        """Encoding-side membership: upper edges half-open, except the pole/date-line rim."""
        ok_lat = self.lat_min <= p.lat < self.lat_max or (
            self.lat_max == 90.0 and p.lat == 90.0
        )
        return ok_lat and self.lon_min <= p.lon < self.lon_max

    def contains_closed(self, p: GeoPoint) -> bool:
        """Evaluation-side membership: all edges closed (boundary ties count as hits)."""
        return (
            self.lat_min <= p.lat <= self.lat_max
            and self.lon_min <= p.lon <= self.lon_max
        )

    def corners(self) -> list[GeoPoint]:
        return [
            GeoPoint(self.lat_min, self.lon_min),
            GeoPoint(self.lat_min, self.lon_max),
            GeoPoint(self.lat_max, self.lon_min),
            GeoPoint(self.lat_max, self.lon_max),
        ]

    def center(self) -> GeoPoint:
        return GeoPoint(
            (self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0
        )


def from_geohash(s: str) -> CellId:
    bits = 0
    for c in s:
        if c not in _CHAR_INDEX:
            raise InputError(f"invalid geohash character: {c!r}")
        bits = (bits << 5) | _CHAR_INDEX[c]
    return CellId(bits, 5 * len(s))


def grid_from_point(p: GeoPoint, depth: int) -> tuple[int, int]:
    """Exact grid coordinates of the cell containing ``p`` at ``depth``.

    Computed arithmetically, then nudged against the exact dyadic cell edges
    so the result agrees with literal bisection even for points lying on a
    cell boundary.
    """
    nlon = n_lon_bits(depth)
    nlat = n_lat_bits(depth)
    nx = 1 << nlon
    ny = 1 << nlat
    wx = 360.0 / nx
    wy = 180.0 / ny

    ix = int((p.lon + 180.0) / 360.0 * nx)
    ix = min(max(ix, 0), nx - 1)
    while ix > 0 and p.lon < -180.0 + ix * wx:
        ix -= 1
    while ix < nx - 1 and p.lon >= -180.0 + (ix + 1) * wx:
        ix += 1

    iy = int((p.lat + 90.0) / 180.0 * ny)
    iy = min(max(iy, 0), ny - 1)  # lat == 90 belongs to the top row
    while iy > 0 and p.lat < -90.0 + iy * wy:
        iy -= 1
    while iy < ny - 1 and p.lat >= -90.0 + (iy + 1) * wy:
        iy += 1

    return ix, iy


def encode_point(p: GeoPoint, depth: int) -> CellId:
    """Geohash cell of ``p`` at a bit depth in [1, 60]."""
    if not 1 <= depth <= MAX_DEPTH:
        raise InputError(f"depth out of range [1, {MAX_DEPTH}]: {depth}")
    check_point(p)
    ix, iy = grid_from_point(p, depth)
    return CellId(interleave(ix, iy, depth), depth)


def grid_coords(c: CellId) -> tuple[int, int]:
    return deinterleave(c.bits, c.depth)


def cell_bbox(c: CellId) -> CellBBox:
    ix, iy = grid_coords(c)
    nx = 1 << n_lon_bits(c.depth)
    ny = 1 << n_lat_bits(c.depth)
    wx = 360.0 / nx
    wy = 180.0 / ny
    return CellBBox(
        lat_min=-90.0 + iy * wy,
        lat_max=-90.0 + (iy + 1) * wy,
        lon_min=-180.0 + ix * wx,
        lon_max=-180.0 + (ix + 1) * wx,
    )


def cell_center(c: CellId) -> GeoPoint:
    return cell_bbox(c).center()


def cell_from_grid(ix: int, iy: int, depth: int) -> CellId:
    nx = 1 << n_lon_bits(depth)
    ny = 1 << n_lat_bits(depth)
    if not (0 <= ix < nx and 0 <= iy < ny):
        raise InputError(f"grid coords out of range at depth {depth}: ({ix}, {iy})")
    return CellId(interleave(ix, iy, depth), depth)


def hop_distance(a: CellId, b: CellId) -> int:
    """Chebyshev distance on the cell grid, with longitude wraparound."""
    if a.depth != b.depth:
        raise InputError(f"hop_distance depth mismatch: {a.depth} vs {b.depth}")
    ixa, iya = grid_coords(a)
    ixb, iyb = grid_coords(b)
    nx = 1 << n_lon_bits(a.depth)
    dx = abs(ixa - ixb)
    dx = min(dx, nx - dx)
    dy = abs(iya - iyb)
    return max(dx, dy)


def neighbors(c: CellId) -> list[CellId]:
    """The up-to-8 king-move neighbors; longitude wraps, latitude clamps at the poles."""
    ix, iy = grid_coords(c)
    nx = 1 << n_lon_bits(c.depth)
    ny = 1 << n_lat_bits(c.depth)
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            jy = iy + dy
            if not 0 <= jy < ny:
                continue
            jx = (ix + dx) % nx
            out.append(cell_from_grid(jx, jy, c.depth))
    return out


@dataclass(frozen=True)
class CodecConfig:
    """Fixed prefix + whole-cell shift mapping points to 16-bit tokens.

    ``shift`` is in units of full-depth cells and is added to grid
    coordinates on encode, subtracted on decode, so it reverses exactly.
    """

    prefix: CellId
    shift: tuple[int, int] = (0, 0)
    token_depth: int = TOKEN_DEPTH

    def __post_init__(self) -> None:
        if self.token_depth != TOKEN_DEPTH:
            raise ConfigError(f"token_depth must be {TOKEN_DEPTH}")
        if self.prefix.depth > MAX_PREFIX_DEPTH:
            raise ConfigError(
                f"prefix depth {self.prefix.depth} + {TOKEN_DEPTH} exceeds {MAX_DEPTH}"
            )

    @property
    def full_depth(self) -> int:
        return self.prefix.depth + self.token_depth

    @property
    def vocab_size(self) -> int:
        return 1 << self.token_depth

    def to_text(self) -> str:
        """Key = value record, stored alongside checkpoints."""
        chars, extra = _prefix_chars(self.prefix)
        return (
            f"prefix = {chars}\n"
            f"prefix_bits = {self.prefix.depth}\n"
            f"shift_dx = {self.shift[0]}\n"
            f"shift_dy = {self.shift[1]}\n"
            f"token_depth = {self.token_depth}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "CodecConfig":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"bad codec record line: {line!r}")
            key, _, val = line.partition("=")
            fields[key.strip()] = val.strip()
        return cls.from_fields(fields)

    def to_fields(self) -> dict[str, str]:
        chars, _ = _prefix_chars(self.prefix)
        return {
            "prefix": chars,
            "prefix_bits": str(self.prefix.depth),
            "shift_dx": str(self.shift[0]),
            "shift_dy": str(self.shift[1]),
            "token_depth": str(self.token_depth),
        }

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "CodecConfig":
        try:
            depth = int(fields["prefix_bits"])
            padded = from_geohash(fields["prefix"]) if fields["prefix"] else CellId(0, 0)
            prefix = padded.truncate(depth)
            shift = (int(fields["shift_dx"]), int(fields["shift_dy"]))
            token_depth = int(fields.get("token_depth", TOKEN_DEPTH))
        except (KeyError, ValueError) as e:
            raise ParseError(f"bad codec record: {e}") from e
        return cls(prefix=prefix, shift=shift, token_depth=token_depth)


def _prefix_chars(prefix: CellId) -> tuple[str, int]:
    """Zero-pad the prefix to whole characters; the significant bit count travels separately."""
    extra = (-prefix.depth) % 5
    padded = CellId(prefix.bits << extra, prefix.depth + extra)
    return padded.geohash(), extra


def _shifted_grid(p: GeoPoint, codec: CodecConfig) -> tuple[int, int]:
    depth = codec.full_depth
    ix, iy = grid_from_point(p, depth)
    nx = 1 << n_lon_bits(depth)
    ny = 1 << n_lat_bits(depth)
    ix = (ix + codec.shift[0]) % nx
    iy = iy + codec.shift[1]
    if not 0 <= iy < ny:
        raise CoverageError(f"shifted latitude grid coord out of range for {p}")
    return ix, iy


def token_of(p: GeoPoint, codec: CodecConfig) -> int:
    """Token of ``p`` under ``codec``; the shifted cell must sit inside the prefix."""
    check_point(p)
    depth = codec.full_depth
    ix, iy = _shifted_grid(p, codec)
    bits = interleave(ix, iy, depth)
    if bits >> codec.token_depth != codec.prefix.bits:
        raise CoverageError(
            f"point {p} outside codec prefix {codec.prefix.display() or '<root>'}"
        )
    return bits & (codec.vocab_size - 1)


def cell_of_token(t: int, codec: CodecConfig) -> CellId:
    """The real-space (unshifted) full-depth cell a token denotes."""
    if not 0 <= t < codec.vocab_size:
        raise InputError(f"token out of range: {t}")
    depth = codec.full_depth
    bits = (codec.prefix.bits << codec.token_depth) | t
    ix, iy = deinterleave(bits, depth)
    nx = 1 << n_lon_bits(depth)
    ny = 1 << n_lat_bits(depth)
    ix = (ix - codec.shift[0]) % nx
    iy = min(max(iy - codec.shift[1], 0), ny - 1)
    return cell_from_grid(ix, iy, depth)


def point_of(t: int, codec: CodecConfig) -> CellBBox:
    """Bounding box of the cell a token denotes (shift reversed exactly)."""
    return cell_bbox(cell_of_token(t, codec))


def _lcp_bits(lo: int, hi: int, width: int) -> int:
    """Length of the common leading-bit prefix of two ``width``-bit integers."""
    if lo == hi:
        return width
    return width - (lo ^ hi).bit_length()


def _prefix_depth_from_ranges(lcp_x: int, lcp_y: int, cap: int) -> int:
    for d in range(cap, -1, -1):
        if n_lon_bits(d) <= lcp_x and n_lat_bits(d) <= lcp_y:
            return d
    return 0


def _shifted_ranges(
    ix_min: int, ix_max: int, iy_min: int, iy_max: int, sx: int, sy: int, width: int
) -> tuple[int, int, int, int] | None:
    """Translate grid ranges at full resolution; None if latitude leaves the grid."""
    n = 1 << width
    jy_min, jy_max = iy_min + sy, iy_max + sy
    if jy_min < 0 or jy_max >= n:
        return None
    jx_min, jx_max = ix_min + sx, ix_max + sx
    if jx_min < 0 or jx_max >= n:
        # the shifted lon range wraps: it straddles the 0 meridian of the grid
        if jx_max - jx_min >= n - 1:
            return None
        jx_min %= n
        jx_max %= n
        if jx_min > jx_max:
            jx_min, jx_max = 0, n - 1  # wrapped: no common lon prefix survives
    return jx_min, jx_max, jy_min, jy_max


def derive_codec(
    points: list[GeoPoint],
    max_full_depth: int | None = None,
    shift_radius: int = SHIFT_RADIUS,
) -> CodecConfig:
    """Derive the prefix (and a small whole-cell shift) covering ``points``.

    The prefix is the longest common bit-prefix of the dataset's cells; a
    shift of up to ``shift_radius`` full-depth cells is applied when it
    lengthens that prefix.  Ties prefer the smallest |dx|+|dy|, then dx,
    then dy, so derivation is reproducible.
    """
    if not points:
        raise InputError("derive_codec: empty dataset")
    if max_full_depth is not None and not TOKEN_DEPTH + 1 <= max_full_depth <= MAX_DEPTH:
        raise ConfigError(
            f"max_full_depth must be in [{TOKEN_DEPTH + 1}, {MAX_DEPTH}]: {max_full_depth}"
        )
    cap_full = MAX_DEPTH if max_full_depth is None else max_full_depth
    cap_prefix = cap_full - TOKEN_DEPTH

    width = n_lon_bits(MAX_DEPTH)  # 30 bits per axis at the deepest grid
    ix_min = iy_min = (1 << width) + 1
    ix_max = iy_max = -1
    for p in points:
        check_point(p)
        ix, iy = grid_from_point(p, MAX_DEPTH)
        ix_min, ix_max = min(ix_min, ix), max(ix_max, ix)
        iy_min, iy_max = min(iy_min, iy), max(iy_max, iy)

    def prefix_for(ranges) -> int:
        jx_min, jx_max, jy_min, jy_max = ranges
        return _prefix_depth_from_ranges(
            _lcp_bits(jx_min, jx_max, width), _lcp_bits(jy_min, jy_max, width), cap_prefix
        )

    base_depth = prefix_for((ix_min, ix_max, iy_min, iy_max))
    work_full = min(base_depth + TOKEN_DEPTH, cap_full)
    # shift units: one work-depth cell, expressed on the deepest grid
    ux = 1 << (width - n_lon_bits(work_full))
    uy = 1 << (width - n_lat_bits(work_full))

    best = (base_depth, 0, 0, 0)  # (depth, -(|dx|+|dy|), -dx, -dy) maximized
    best_shift = (0, 0)
    for dy in range(-shift_radius, shift_radius + 1):
        for dx in range(-shift_radius, shift_radius + 1):
            if dx == 0 and dy == 0:
                continue
            ranges = _shifted_ranges(
                ix_min, ix_max, iy_min, iy_max, dx * ux, dy * uy, width
            )
            if ranges is None:
                continue
            depth = prefix_for(ranges)
            key = (depth, -(abs(dx) + abs(dy)), -dx, -dy)
            if key > best:
                best = key
                best_shift = (dx, dy)

    prefix_depth = best[0]
    dx, dy = best_shift
    full_depth = prefix_depth + TOKEN_DEPTH
    # rescale the shift from work-depth cells to final full-depth cells
    sx = dx * (1 << (n_lon_bits(full_depth) - n_lon_bits(work_full)))
    sy = dy * (1 << (n_lat_bits(full_depth) - n_lat_bits(work_full)))

    # recompute the prefix bits from any shifted point at the final depth
    ix0, iy0 = grid_from_point(points[0], full_depth)
    nx = 1 << n_lon_bits(full_depth)
    ny = 1 << n_lat_bits(full_depth)
    jx = (ix0 + sx) % nx
    jy = iy0 + sy
    if not 0 <= jy < ny:
        raise ConfigError("derived shift pushes data off the latitude grid")
    prefix = CellId(interleave(jx, jy, full_depth) >> TOKEN_DEPTH, prefix_depth)

    # decode totality: every token cell must unshift back onto the latitude grid
    if sy != 0:
        shift_rows = n_lat_bits(full_depth) - n_lat_bits(prefix_depth)
        base_row = deinterleave(prefix.bits, prefix_depth)[1] << shift_rows
        span_rows = 1 << shift_rows
        if base_row - sy < 0 or base_row + span_rows - 1 - sy >= ny:
            return derive_codec(points, max_full_depth=max_full_depth, shift_radius=0)
    return CodecConfig(prefix=prefix, shift=(sx, sy))
