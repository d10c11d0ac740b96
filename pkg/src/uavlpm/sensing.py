"""Measurement-level echo synthesis for the BS radar and UPA steering vectors.

Echoes are not modulated onto a waveform.  The delay and Doppler of an echo
are carried by range ``d`` (delay ``2 d / c``) and radial velocity ``v_r``
(Doppler ``2 f_c v_r / c``), and the estimator sees these parameters with
Gaussian noise whose std scales as ``1 / sqrt(echo_snr)``.

The BS array faces up: ``theta`` is the zenith angle from the array normal
and ``phi`` the azimuth in the horizontal plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ._validation import check_positive
from .citymap import segment_blocked
from .exceptions import InvalidInputError, UnsupportedGeometryError

R_MIN_VAR = 1e-12

UAV = "uav"
BLOCKER = "blocker"


@dataclass(frozen=True)
class RadioConfig:
    """Carrier, array sizes and link-budget constants of one BS."""

    f_c: float = 30e9
    c: float = 3e8
    Mt: int = 8
    Nt: int = 8
    Mr: int = 8
    Nr: int = 8
    p_n: float = 1.0
    kappa_ref: float = 1e-2
    sigma_r2: float = 1e-9
    sigma_c2: float = 1e-9

    def __post_init__(self):
        for name in ("f_c", "c", "p_n", "kappa_ref", "sigma_r2", "sigma_c2"):
            check_positive(getattr(self, name), name)
        for name in ("Mt", "Nt", "Mr", "Nr"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")

    @property
    def wavelength(self):
        return self.c / self.f_c

    def doppler(self, v_r):
        return 2.0 * self.f_c * v_r / self.c

    def delay(self, d):
        return 2.0 * d / self.c


@dataclass(frozen=True)
class SensingNoise:
    """Parameter-noise stds at unit echo SNR plus the detection floor."""

    sigma_d0: float = 10.0
    sigma_a0: float = 0.1
    sigma_v0: float = 5.0
    snr_floor: float = 1e-3
    rcs_scale: float = 1.0

    def __post_init__(self):
        for name in ("sigma_d0", "sigma_a0", "sigma_v0", "snr_floor"):
            check_positive(getattr(self, name), name, strict=False)
        check_positive(self.rcs_scale, "rcs_scale")

    def stds(self, snr):
        s = 1.0 / math.sqrt(snr)
        return (self.sigma_d0 * s, self.sigma_a0 * s, self.sigma_a0 * s, self.sigma_v0 * s)

    def covariance(self, snr):
        """Diagonal 4x4 measurement covariance at echo SNR ``snr``.

        Variances are floored at ``R_MIN_VAR`` so R stays positive definite
        with zero noise constants.
        """
        if not snr > 0:
            raise InvalidInputError("echo SNR must be positive to build R")
        return np.diag(np.maximum(np.square(self.stds(snr)), R_MIN_VAR))


@dataclass(frozen=True)
class BlockerModel:
    alpha_scale: float = 1.0
    v_r: float = 0.0

    def __post_init__(self):
        check_positive(self.alpha_scale, "alpha_scale")


class Observables(NamedTuple):
    d: float
    phi: float
    theta: float
    v_r: float


class EchoMeasurement(NamedTuple):
    d: float
    phi: float
    theta: float
    v_r: float
    echo_snr: float
    origin: str
    detected: bool = True

    @property
    def z(self):
        return np.array([self.d, self.phi, self.theta, self.v_r])


class Scene(NamedTuple):
    city: object
    bs: np.ndarray
    blocker: BlockerModel = BlockerModel()


def observables(bs, x):
    """Range, azimuth, zenith angle and radial velocity of state ``x`` seen from ``bs``.

    ``x`` is a 6-vector ``[q; v]``.  This is the single implementation shared by
    echo synthesis and the tracker's measurement function.
    """
    dx = x[0] - bs[0]
    dy = x[1] - bs[1]
    dz = x[2] - bs[2]
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d == 0.0:
        raise InvalidInputError("target coincides with the BS")
    if dz < 0.0:
        raise UnsupportedGeometryError("target below the array plane")
    phi = math.atan2(dy, dx)
    if phi == -math.pi:  # atan2(-0.0, x < 0)
        phi = math.pi
    theta = math.acos(min(dz / d, 1.0))
    v_r = (dx * x[3] + dy * x[4] + dz * x[5]) / d
    return Observables(d, phi, theta, v_r)


def geometry_observables(bs, state):
    return observables(np.asarray(bs, dtype=float), state.x)


def wrap_angle(a):
    """Map an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


@lru_cache(maxsize=32)
def _element_grid(M, N):
    m, n = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    return m.ravel().astype(float), n.ravel().astype(float)


def steering_vector(phi, theta, M, N):
    """Unit-norm UPA response; element (m, n) sits at flat index ``m * N + n``."""
    m, n = _element_grid(int(M), int(N))
    st = math.sin(theta)
    phase = (-math.pi * st * math.cos(phi)) * m + (-math.pi * st * math.sin(phi)) * n
    return np.exp(1j * phase) / math.sqrt(M * N)


def echo_snr(cfg, d, beam_gain, rcs_scale=1.0):
    """Echo SNR with two-way (d^4) spreading loss."""
    if not d > 0:
        raise InvalidInputError(f"range must be > 0, got {d}")
    arr = cfg.Mt * cfg.Nt * cfg.Mr * cfg.Nr
    return cfg.p_n * arr * beam_gain * rcs_scale * cfg.kappa_ref ** 2 / (d ** 4 * cfg.sigma_r2)


def synthesize_measurement(scene, state, f, cfg, rng, noise=SensingNoise()):
    """One echo for the current slot.

    The link is blocked iff the BS->UAV segment enters a building; then the
    echo comes from the first blocking point with the blocker's radial
    velocity and reflectivity.  ``detected`` is False when the echo SNR falls
    below ``noise.snr_floor``.
    """
    bs = np.asarray(scene.bs, dtype=float)
    x = state.x
    hit = segment_blocked(scene.city, bs, state.q)
    if hit.blocked:
        obs = observables(bs, np.concatenate([hit.point, np.zeros(3)]))
        obs = obs._replace(v_r=scene.blocker.v_r)
        rcs = noise.rcs_scale * scene.blocker.alpha_scale
        origin = BLOCKER
    else:
        obs = observables(bs, x)
        rcs = noise.rcs_scale
        origin = UAV
    a_t = steering_vector(obs.phi, obs.theta, cfg.Mt, cfg.Nt)
    gain = abs(np.vdot(a_t, f)) ** 2
    snr = echo_snr(cfg, obs.d, gain, rcs)
    w = rng.standard_normal(4)
    if snr < noise.snr_floor or snr == 0.0:
        return EchoMeasurement(math.nan, math.nan, math.nan, math.nan, snr, origin, False)
    sd, sa, _, sv = noise.stds(snr)
    # range stays positive even for very weak echoes
    d = max(obs.d + sd * w[0], 1e-6)
    phi = wrap_angle(obs.phi + sa * w[1])
    theta = min(max(obs.theta + sa * w[2], 0.0), math.pi / 2)
    v_r = obs.v_r + sv * w[3]
    return EchoMeasurement(d, phi, theta, v_r, snr, origin, True)
