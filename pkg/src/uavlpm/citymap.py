"""Bounded urban region, its cell grid, and exact line-of-sight occlusion.

Buildings are vertical extrusions of simple polygons from the flat ground
(z = 0).  Occlusion is computed analytically: the horizontal projection of a
segment is split at its crossings with footprint edges, and on every
sub-interval that lies strictly inside a footprint the (linear) segment height
is compared with the roof.  Touching a facade or grazing a roof is clear.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._validation import as_vector
from .exceptions import ConfigError, InvalidInputError, OutOfRegionError

# Geometric tolerance (m) for boundary contact and tangency.
GEOM_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Region:
    """Axis-aligned box ``[q_lower, q_upper]`` divided into a regular grid."""

    q_lower: np.ndarray
    q_upper: np.ndarray
    cell_size: np.ndarray
    counts: tuple = field(init=False)

    def __post_init__(self):
        lo = as_vector(self.q_lower, name="q_lower")
        hi = as_vector(self.q_upper, name="q_upper")
        cs = as_vector(self.cell_size, name="cell_size")
        if not np.all(lo < hi):
            raise InvalidInputError("q_lower must be element-wise below q_upper")
        if not np.all(cs > 0):
            raise InvalidInputError("cell_size must be positive")
        counts = tuple(int(c) for c in np.ceil((hi - lo) / cs - 1e-12))
        object.__setattr__(self, "q_lower", lo)
        object.__setattr__(self, "q_upper", hi)
        object.__setattr__(self, "cell_size", cs)
        object.__setattr__(self, "counts", tuple(max(c, 1) for c in counts))

    @property
    def n_cells(self):
        return self.counts[0] * self.counts[1] * self.counts[2]

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.q_upper - self.q_lower))

    def contains(self, q):
        lo, hi = self.q_lower, self.q_upper
        return all(lo[i] <= q[i] <= hi[i] for i in range(3))

    def clamp(self, q):
        return np.clip(np.asarray(q, dtype=float), self.q_lower, self.q_upper)

    def to_dict(self):
        return {
            "q_lower": self.q_lower.tolist(),
            "q_upper": self.q_upper.tolist(),
            "cell_size": self.cell_size.tolist(),
            "counts": list(self.counts),
        }

    @classmethod
    def from_dict(cls, d):
        region = cls(d["q_lower"], d["q_upper"], d["cell_size"])
        if "counts" in d and tuple(d["counts"]) != region.counts:
            raise InvalidInputError(
                f"counts {d['counts']} inconsistent with extent/cell_size {region.counts}"
            )
        return region

    def cell_centers(self):
        """Array of shape ``counts + (3,)`` holding every cell center."""
        axes = [
            self.q_lower[i] + (np.arange(self.counts[i]) + 0.5) * self.cell_size[i]
            for i in range(3)
        ]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack(grid, axis=-1)


def cell_center(region, index):
    """Center of cell ``index`` (three integers)."""
    idx = np.asarray(index)
    if idx.shape != (3,) or np.any(idx < 0) or np.any(idx >= np.asarray(region.counts)):
        raise OutOfRegionError(f"cell index {tuple(index)} outside grid {region.counts}")
    return region.q_lower + (idx + 0.5) * region.cell_size


def cell_index(region, q):
    """Index of the cell containing ``q``.

    A point on an interior cell boundary belongs to the lower-index cell.
    """
    lo, hi, cs = region.q_lower, region.q_upper, region.cell_size
    out = []
    for i in range(3):
        qi = float(q[i])
        if not lo[i] <= qi <= hi[i]:
            raise OutOfRegionError(f"position {list(map(float, q))} outside region")
        k = math.ceil((qi - lo[i]) / cs[i]) - 1
        out.append(min(max(k, 0), region.counts[i] - 1))
    return tuple(out)


def _polygon_is_simple(pts):
    n = len(pts)
    for i in range(n):
        p1, p2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            q1, q2 = pts[j], pts[(j + 1) % n]
            if _segments_intersect(p1, p2, q1, q2):
                return False
    return True


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(p1, p2, q1, q2):
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    return ((d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2))
            or (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2)))


@dataclass(frozen=True, eq=False)
class BuildingPrism:
    """Simple polygon footprint extruded from z = 0 to ``height``."""

    footprint: np.ndarray
    height: float

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        if fp.ndim != 2 or fp.shape[1] != 2:
            raise InvalidInputError("footprint must be a list of [x, y] vertices")
        if len(fp) > 3 and np.allclose(fp[0], fp[-1]):
            fp = fp[:-1]
        if len(fp) < 3:
            raise InvalidInputError("footprint needs at least 3 vertices")
        if not np.all(np.isfinite(fp)):
            raise InvalidInputError("footprint vertices must be finite")
        height = float(self.height)
        if not (height > 0 and math.isfinite(height)):
            raise InvalidInputError(f"height must be positive, got {self.height}")
        if not _polygon_is_simple([tuple(p) for p in fp]):
            raise InvalidInputError("footprint polygon is not simple")
        area2 = np.sum(fp[:, 0] * np.roll(fp[:, 1], -1) - np.roll(fp[:, 0], -1) * fp[:, 1])
        if abs(area2) <= 0:
            raise InvalidInputError("footprint polygon has zero area")
        object.__setattr__(self, "footprint", fp)
        object.__setattr__(self, "height", height)
        object.__setattr__(self, "_bbox", (fp.min(axis=0), fp.max(axis=0)))
        object.__setattr__(self, "_verts", [tuple(map(float, p)) for p in fp])
        lo, hi = self._bbox
        object.__setattr__(self, "_bbox_f", (float(lo[0]), float(lo[1]),
                                             float(hi[0]), float(hi[1])))

    @property
    def bbox(self):
        return self._bbox

    def contains_points(self, pts):
        """Strict-interior test for an array of 3D points (used by oracles)."""
        pts = np.asarray(pts, dtype=float)
        inside = _strictly_inside(self.footprint, pts[..., :2])
        return inside & (pts[..., 2] > 0) & (pts[..., 2] < self.height)


def _strictly_inside(poly, pts):
    """Even-odd point-in-polygon test that treats the boundary as outside.

    ``pts`` has shape (..., 2); returns a boolean array of shape (...).
    """
    px = pts[..., 0, None]
    py = pts[..., 1, None]
    xi, yi = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xi, -1), np.roll(yi, -1)
    straddle = (yi > py) != (yj > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xi + (py - yi) * (xj - xi) / (yj - yi)
    crossings = np.count_nonzero(straddle & (px < x_cross), axis=-1)
    inside = (crossings % 2) == 1

    # distance to each edge, to reject boundary points
    ex, ey = xj - xi, yj - yi
    len2 = ex * ex + ey * ey
    s = np.clip(((px - xi) * ex + (py - yi) * ey) / len2, 0.0, 1.0)
    dx = px - (xi + s * ex)
    dy = py - (yi + s * ey)
    on_edge = np.any(dx * dx + dy * dy <= GEOM_EPS * GEOM_EPS, axis=-1)
    return inside & ~on_edge


def _inside_intervals(building, a, B):
    """Parameter intervals where segments a->B[k] project strictly inside a footprint.

    Returns ``(t0, t1, valid)`` arrays of shape (N, K).  Intervals are
    maximal pieces between consecutive edge crossings; ``valid`` marks pieces of
    positive length whose midpoint is strictly inside the footprint.
    """
    poly = building.footprint
    a2 = a[:2]
    D = B[:, :2] - a2
    e = np.roll(poly, -1, axis=0) - poly
    w = poly - a2
    denom = D[:, None, 0] * e[None, :, 1] - D[:, None, 1] * e[None, :, 0]
    num_t = w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]
    num_s = w[None, :, 0] * D[:, None, 1] - w[None, :, 1] * D[:, None, 0]
    ok = np.abs(denom) > 1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok, num_t[None, :] / denom, np.nan)
        s = np.where(ok, num_s / denom, np.nan)
    hit = ok & (s >= -1e-12) & (s <= 1 + 1e-12) & (t > 0) & (t < 1)
    t = np.where(hit, t, np.nan)
    N = len(B)
    ts = np.concatenate([np.zeros((N, 1)), t, np.ones((N, 1))], axis=1)
    ts.sort(axis=1)
    # NaNs sort last; a NaN in either end invalidates the interval
    t0, t1 = ts[:, :-1], ts[:, 1:]
    length = t1 - t0
    valid = np.isfinite(length) & (length > 1e-12)
    tm = np.where(valid, 0.5 * (t0 + t1), 0.0)
    mid = a2 + tm[..., None] * D[:, None, :]
    valid &= _strictly_inside(poly, mid)
    return t0, t1, valid


def _strictly_inside_xy(verts, px, py):
    # scalar twin of _strictly_inside
    inside = False
    n = len(verts)
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[(i + 1) % n]
        if (yi > py) != (yj > py) and px < xi + (py - yi) * (xj - xi) / (yj - yi):
            inside = not inside
        ex, ey = xj - xi, yj - yi
        s = ((px - xi) * ex + (py - yi) * ey) / (ex * ex + ey * ey)
        s = min(max(s, 0.0), 1.0)
        dx, dy = px - (xi + s * ex), py - (yi + s * ey)
        if dx * dx + dy * dy <= GEOM_EPS * GEOM_EPS:
            return False
    return inside


def _segment_intervals(building, a, b):
    """Scalar twin of :func:`_inside_intervals` for one segment: list of (t0, t1)."""
    ax, ay = a[0], a[1]
    Dx, Dy = b[0] - ax, b[1] - ay
    verts = building._verts
    n = len(verts)
    ts = [0.0, 1.0]
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[(i + 1) % n]
        ex, ey = xj - xi, yj - yi
        denom = Dx * ey - Dy * ex
        if abs(denom) <= 1e-15:
            continue
        wx, wy = xi - ax, yi - ay
        t = (wx * ey - wy * ex) / denom
        s = (wx * Dy - wy * Dx) / denom
        if -1e-12 <= s <= 1 + 1e-12 and 0 < t < 1:
            ts.append(t)
    ts.sort()
    out = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if t1 - t0 > 1e-12:
            tm = 0.5 * (t0 + t1)
            if _strictly_inside_xy(verts, ax + tm * Dx, ay + tm * Dy):
                out.append((t0, t1))
    return out


class SegmentResult(NamedTuple):
    blocked: bool
    point: np.ndarray | None


@dataclass(frozen=True, eq=False)
class CityMap:
    region: Region
    buildings: tuple = ()

    def __post_init__(self):
        buildings = tuple(self.buildings)
        lo, hi = self.region.q_lower[:2], self.region.q_upper[:2]
        for i, b in enumerate(buildings):
            if np.any(b.footprint < lo - GEOM_EPS) or np.any(b.footprint > hi + GEOM_EPS):
                raise ConfigError("footprint outside region horizontal extent",
                                  f"buildings[{i}].footprint")
        object.__setattr__(self, "buildings", buildings)

    def _candidates(self, a, B):
        """Buildings whose bbox meets the horizontal bbox of any segment."""
        lo = np.minimum(B[:, :2].min(axis=0), a[:2])
        hi = np.maximum(B[:, :2].max(axis=0), a[:2])
        for b in self.buildings:
            blo, bhi = b.bbox
            if np.all(bhi >= lo) and np.all(blo <= hi):
                yield b

    def crossing_heights(self, a, B):
        """Per-building minimum segment height over the footprint crossing.

        Returns a list of ``(building, z_min)`` where ``z_min`` has shape (N,)
        and is ``inf`` for segments that do not pass over the footprint
        interior.
        """
        a = np.asarray(a, dtype=float)
        B = np.atleast_2d(np.asarray(B, dtype=float))
        out = []
        dz = B[:, 2] - a[2]
        for b in self._candidates(a, B):
            t0, t1, valid = _inside_intervals(b, a, B)
            z0 = a[2] + t0 * dz[:, None]
            z1 = a[2] + t1 * dz[:, None]
            zlo = np.where(valid, np.minimum(z0, z1), np.inf)
            out.append((b, zlo.min(axis=1)))
        return out

    def blocked_mask(self, a, B):
        """Vectorized occlusion verdict for segments a->B[k]."""
        B = np.atleast_2d(np.asarray(B, dtype=float))
        mask = np.zeros(len(B), dtype=bool)
        for b, zmin in self.crossing_heights(a, B):
            mask |= zmin < b.height - GEOM_EPS
        return mask

    def first_blocking(self, a, b):
        """Smallest segment parameter t at which a->b enters a building, or None."""
        a = [float(v) for v in a]
        b = [float(v) for v in b]
        dz = b[2] - a[2]
        xlo, xhi = min(a[0], b[0]), max(a[0], b[0])
        ylo, yhi = min(a[1], b[1]), max(a[1], b[1])
        best = math.inf
        for bld in self.buildings:
            bx0, by0, bx1, by1 = bld._bbox_f
            if bx1 < xlo or bx0 > xhi or by1 < ylo or by0 > yhi:
                continue
            h = bld.height - GEOM_EPS
            for lo, hi in _segment_intervals(bld, a, b):
                z_lo, z_hi = a[2] + lo * dz, a[2] + hi * dz
                if z_lo < h:
                    t = lo
                elif z_hi < h:
                    t = lo + (bld.height - z_lo) / (z_hi - z_lo) * (hi - lo)
                else:
                    continue
                best = min(best, t)
        return None if best == math.inf else best

    @classmethod
    def from_dict(cls, d):
        try:
            region = Region.from_dict(d["region"])
        except KeyError as exc:
            raise ConfigError(f"missing key {exc}", "region") from None
        except (InvalidInputError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "region") from None
        buildings = []
        for i, bd in enumerate(d.get("buildings", [])):
            path = f"buildings[{i}]"
            try:
                buildings.append(BuildingPrism(bd["footprint"], bd["height"]))
            except KeyError as exc:
                raise ConfigError(f"missing key {exc}", path) from None
            except (InvalidInputError, TypeError, ValueError) as exc:
                raise ConfigError(str(exc), path) from None
        return cls(region, tuple(buildings))

    def to_dict(self):
        return {
            "region": self.region.to_dict(),
            "buildings": [
                {"footprint": b.footprint.tolist(), "height": b.height}
                for b in self.buildings
            ],
        }


def segment_blocked(city, a, b):
    """Whether the open segment (a, b) passes through a building interior.

    Returns a :class:`SegmentResult`; ``point`` is the blocking point nearest
    ``a`` when blocked.
    """
    a = as_vector(a, name="a")
    b = as_vector(b, name="b")
    if np.array_equal(a, b):
        raise InvalidInputError("degenerate segment: a == b")
    if not city.buildings:
        return SegmentResult(False, None)
    t = city.first_blocking(a, b)
    if t is None:
        return SegmentResult(False, None)
    return SegmentResult(True, a + t * (b - a))


def load_citymap(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (byte {exc.pos})", str(path)) from None
    return CityMap.from_dict(data)


def save_citymap(city, path):
    Path(path).write_text(json.dumps(city.to_dict(), indent=1))
