"""Constant-velocity UAV motion with Gaussian process noise and box bounds."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector, check_positive
from .exceptions import InvalidInputError

DEFAULT_DT = 0.02
DEFAULT_SIGMA_D = 0.1
DEFAULT_SIGMA_V = 0.1


@dataclass(frozen=True, eq=False)
class UavState:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_vector(self.q, name="q"))
        object.__setattr__(self, "v", as_vector(self.v, name="v"))

    @property
    def x(self):
        """Stacked 6-vector ``[q; v]``."""
        return np.concatenate([self.q, self.v])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6])

    def __eq__(self, other):
        if not isinstance(other, UavState):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.v, other.v)


def evolution_matrix(dt):
    """6x6 matrix ``[[I, dt*I], [0, I]]``."""
    if not dt > 0:
        raise InvalidInputError(f"dt must be > 0, got {dt}")
    G = np.eye(6)
    G[:3, 3:] = dt * np.eye(3)
    return G


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Slot length, per-slot noise stds and optional position bounds.

    The noise stds are absolute per-slot values, not rates.
    """

    dt: float = DEFAULT_DT
    sigma_d: float = DEFAULT_SIGMA_D
    sigma_v: float = DEFAULT_SIGMA_V
    q_lower: np.ndarray | None = None
    q_upper: np.ndarray | None = None
    G: np.ndarray = field(init=False, repr=False)
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        check_positive(self.dt, "dt")
        check_positive(self.sigma_d, "sigma_d", strict=False)
        check_positive(self.sigma_v, "sigma_v", strict=False)
        if (self.q_lower is None) != (self.q_upper is None):
            raise InvalidInputError("q_lower and q_upper must be given together")
        if self.q_lower is not None:
            lo = as_vector(self.q_lower, name="q_lower")
            hi = as_vector(self.q_upper, name="q_upper")
            if not np.all(lo < hi):
                raise InvalidInputError("q_lower must be below q_upper")
            object.__setattr__(self, "q_lower", lo)
            object.__setattr__(self, "q_upper", hi)
        object.__setattr__(self, "G", evolution_matrix(self.dt))
        Q = np.diag([self.sigma_d ** 2] * 3 + [self.sigma_v ** 2] * 3)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def for_region(cls, region, **kwargs):
        return cls(q_lower=region.q_lower, q_upper=region.q_upper, **kwargs)


def _reflect(q, v, lo, hi):
    q = q.copy()
    v = v.copy()
    span = hi - lo
    for i in range(3):
        # repeated mirroring handles excursions longer than one span
        while q[i] < lo[i] or q[i] > hi[i]:
            if q[i] > hi[i]:
                q[i] = 2 * hi[i] - q[i]
            else:
                q[i] = 2 * lo[i] - q[i]
            v[i] = -v[i]
            if span[i] == 0:
                break
    return q, v


def step(state, model, rng):
    """Advance one slot: ``x' = G x + n`` then reflect off violated bounds."""
    x = model.G @ state.x
    noise = rng.standard_normal(6)
    x[:3] += model.sigma_d * noise[:3]
    x[3:] += model.sigma_v * noise[3:]
    q, v = x[:3], x[3:]
    if model.q_lower is not None:
        q, v = _reflect(q, v, model.q_lower, model.q_upper)
    return UavState(q, v)


def generate_trajectory(x0, model, L, rng):
    """List of ``L + 1`` states starting at ``x0``."""
    if L < 1:
        raise InvalidInputError(f"L must be >= 1, got {L}")
    states = [x0]
    for _ in range(L):
        states.append(step(states[-1], model, rng))
    return states


def write_trajectory_csv(states, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "qx", "qy", "qz", "vx", "vy", "vz"])
        for n, s in enumerate(states):
            w.writerow([n, *(repr(float(c)) for c in s.x)])
