"""LoS probability map: per-cell Beta belief over the BS link state.

The prior comes from the building map with Gaussian-uncertain roof heights;
offline link-state observations refine it by conjugate Beta-Bernoulli counts.
Each cell's LoS probability is the posterior mean ``a / (a + b)`` and holds
uniformly for every position inside the cell.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from ._validation import as_vector, check_points, check_positive
from .citymap import GEOM_EPS, Region, cell_index
from .exceptions import (InvalidInputError, LpmFormatError, OutOfRegionError,
                         UnsupportedVersionError)

FORMAT_VERSION = 1
MAGIC = b"UAVLPM"
MIN_COUNT = 1e-6
DEFAULT_HEIGHT_SIGMA = 2.0
DEFAULT_PRIOR_STRENGTH = 10.0


class CellBelief(NamedTuple):
    a: float
    b: float

    @property
    def p_los(self):
        return self.a / (self.a + self.b)


class LinkProbability(NamedTuple):
    p_los: float
    p_nlos: float


class RfMeasurement(NamedTuple):
    position: np.ndarray
    los_observed: bool


@dataclass(eq=False)
class LosProbabilityMap:
    """Grid of Beta pseudo-counts ``a`` (LoS) and ``b`` (NLoS) for one BS."""

    region: Region
    bs_position: np.ndarray
    a: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bs_position = as_vector(self.bs_position, name="bs_position")
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape != self.region.counts or self.b.shape != self.region.counts:
            raise InvalidInputError(
                f"pseudo-count arrays must have shape {self.region.counts}")
        if not (np.all(self.a > 0) and np.all(self.b > 0)
                and np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise InvalidInputError("pseudo-counts must be finite and positive")

    @property
    def p_los(self):
        """Posterior-mean LoS probability of every cell."""
        return self.a / (self.a + self.b)

    def cell(self, index):
        return CellBelief(float(self.a[index]), float(self.b[index]))

    def copy(self):
        return LosProbabilityMap(self.region, self.bs_position.copy(),
                                 self.a.copy(), self.b.copy(), dict(self.meta))

    def query(self, q):
        return query(self, q)


def los_prior(city, bs, points, height_sigma=DEFAULT_HEIGHT_SIGMA):
    """Prior LoS probability of the links bs->points[k].

    Each building crossed by the horizontal projection of a link contributes an
    independent factor P(roof height < lowest link height over the footprint),
    with the roof height Gaussian around its nominal value.  With
    ``height_sigma == 0`` the factor is exactly the clear/blocked verdict of
    :func:`uavlpm.citymap.segment_blocked`.
    """
    bs = as_vector(bs, name="bs")
    pts = check_points(points, "points")
    height_sigma = check_positive(height_sigma, "height_sigma", strict=False)
    p = np.ones(len(pts))
    for bld, zmin in city.crossing_heights(bs, pts):
        crossed = np.isfinite(zmin)
        if height_sigma == 0:
            factor = np.where(zmin < bld.height - GEOM_EPS, 0.0, 1.0)
        else:
            factor = ndtr((zmin - bld.height) / height_sigma)
        p *= np.where(crossed, factor, 1.0)
    return p


def build_prior(city, bs, height_sigma=DEFAULT_HEIGHT_SIGMA,
                prior_strength=DEFAULT_PRIOR_STRENGTH):
    """Prior LPM for a BS at ``bs`` evaluated at every cell center."""
    bs = as_vector(bs, name="bs")
    region = city.region
    if not region.contains(bs):
        raise InvalidInputError(f"bs position {bs.tolist()} outside region")
    prior_strength = check_positive(prior_strength, "prior_strength")
    centers = region.cell_centers().reshape(-1, 3)
    # cell centers coinciding with the BS have no defined link; treat as LoS
    same = np.all(centers == bs, axis=1)
    p = np.ones(len(centers))
    p[~same] = los_prior(city, bs, centers[~same], height_sigma)
    a = np.maximum(prior_strength * p, MIN_COUNT).reshape(region.counts)
    b = np.maximum(prior_strength * (1.0 - p), MIN_COUNT).reshape(region.counts)
    meta = {"height_sigma": float(height_sigma), "prior_strength": prior_strength}
    return LosProbabilityMap(region, bs, a, b, meta)


def query(lpm, q):
    """LoS/NLoS probability of the cell containing ``q`` (no interpolation)."""
    idx = cell_index(lpm.region, q)
    a, b = lpm.a[idx], lpm.b[idx]
    p = float(a / (a + b))
    return LinkProbability(p, 1.0 - p)


def update_with_measurements(lpm, measurements):
    """Return a new map with LoS/NLoS observation counts added per cell.

    ``measurements`` is an iterable of :class:`RfMeasurement` (or any
    ``(position, los_observed)`` pairs).  Cells without observations keep
    their counts; order is irrelevant.
    """
    out = lpm.copy()
    for k, (pos, los) in enumerate(measurements):
        try:
            idx = cell_index(lpm.region, pos)
        except OutOfRegionError as exc:
            raise OutOfRegionError(f"measurement {k}: {exc}") from None
        if los:
            out.a[idx] += 1.0
        else:
            out.b[idx] += 1.0
    return out


def _header(lpm):
    return {
        "version": FORMAT_VERSION,
        "region": lpm.region.to_dict(),
        "bs_position": lpm.bs_position.tolist(),
        "meta": lpm.meta,
    }


def save(lpm, path):
    """Write ``MAGIC``, a JSON header line, then row-major little-endian (a, b) pairs."""
    header = json.dumps(_header(lpm), sort_keys=True).encode()
    pairs = np.stack([lpm.a.ravel(order="C"), lpm.b.ravel(order="C")], axis=1)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n" + header + b"\n")
        fh.write(pairs.astype("<f8").tobytes())


def loads(data):
    """Parse the bytes of an LPM file; never returns a partial map."""
    if not data.startswith(MAGIC + b"\n"):
        raise LpmFormatError("missing LPM magic header", 0)
    start = len(MAGIC) + 1
    end = data.find(b"\n", start)
    if end < 0:
        raise LpmFormatError("unterminated header", len(data))
    try:
        header = json.loads(data[start:end].decode())
    except UnicodeDecodeError as exc:
        raise LpmFormatError("header is not UTF-8", start + exc.start) from None
    except json.JSONDecodeError as exc:
        raise LpmFormatError(f"bad header JSON: {exc.msg}", start + exc.pos) from None
    if not isinstance(header, dict):
        raise LpmFormatError("header must be a JSON object", start)
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported LPM version {version!r}", start)
    try:
        region = Region.from_dict(header["region"])
        bs = header["bs_position"]
        meta = header.get("meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise LpmFormatError(f"invalid header field: {exc}", start) from None
    payload_at = end + 1
    expected = 16 * region.n_cells
    got = len(data) - payload_at
    if got != expected:
        raise LpmFormatError(
            f"payload has {got} bytes, expected {expected}",
            payload_at + min(got, expected))
    pairs = np.frombuffer(data, dtype="<f8", offset=payload_at).reshape(-1, 2)
    a = pairs[:, 0].astype(float).reshape(region.counts)
    b = pairs[:, 1].astype(float).reshape(region.counts)
    try:
        return LosProbabilityMap(region, bs, a, b, meta)
    except InvalidInputError as exc:
        raise LpmFormatError(str(exc), payload_at) from None


def load(path):
    return loads(Path(path).read_bytes())


def export_csv(lpm, path):
    """Write ``ix,iy,iz,x,y,z,p_los`` rows for plotting."""
    centers = lpm.region.cell_centers()
    p = lpm.p_los
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "iz", "x", "y", "z", "p_los"])
        for idx in np.ndindex(*lpm.region.counts):
            x, y, z = centers[idx]
            w.writerow([*idx, repr(float(x)), repr(float(y)), repr(float(z)),
                        repr(float(p[idx]))])


_LOS_WORDS = {"1": True, "true": True, "los": True, "0": False, "false": False, "nlos": False}


def read_measurements_csv(path):
    """Read ``x,y,z,los`` rows; ``los`` is 1/0, true/false or LoS/NLoS."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "y", "z", "los"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidInputError(f"measurements CSV lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                pos = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
                los = _LOS_WORDS[row["los"].strip().lower()]
            except (KeyError, TypeError, ValueError, AttributeError):
                raise InvalidInputError(f"line {line}: malformed measurement row") from None
            if not np.all(np.isfinite(pos)):
                raise InvalidInputError(f"line {line}: non-finite position")
            out.append(RfMeasurement(pos, los))
    return out


def maps_equal(x, y):
    """Field-by-field bit-exact comparison."""
    return (x.region.to_dict() == y.region.to_dict()
            and np.array_equal(x.bs_position, y.bs_position)
            and np.array_equal(x.a, y.a) and np.array_equal(x.b, y.b)
            and x.meta == y.meta)
