"""Predictive transmit beams, downlink SNR and the beam-training baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import InvalidInputError, UavLpmError
from .sensing import observables, steering_vector


def boresight_beam(Mt, Nt):
    return steering_vector(0.0, 0.0, Mt, Nt)


def predictive_beam(belief_pred, bs, Mt, Nt):
    """Steer toward the predicted UAV direction.

    Returns ``(f, used_fallback)``; geometry errors fall back to boresight.
    """
    try:
        obs = observables(bs, belief_pred.mean)
    except UavLpmError:
        return boresight_beam(Mt, Nt), True
    return steering_vector(obs.phi, obs.theta, Mt, Nt), False


def beam_gain(f, phi, theta, Mt, Nt):
    """``|a_t(phi, theta)^H f|^2``."""
    return abs(np.vdot(steering_vector(phi, theta, Mt, Nt), f)) ** 2


def comm_snr(cfg, d, f, phi, theta):
    """Downlink SNR with free-space ``kappa_ref / d`` amplitude."""
    return snr_from_gain(cfg, d, beam_gain(f, phi, theta, cfg.Mt, cfg.Nt))


def snr_from_gain(cfg, d, gain):
    if not d > 0:
        raise InvalidInputError(f"range must be > 0, got {d}")
    kappa2 = cfg.kappa_ref ** 2 / d ** 2
    return cfg.p_n * cfg.Mt * cfg.Nt * kappa2 * gain / cfg.sigma_c2


def half_power_halfwidth(Mt, Nt, theta=math.pi / 4, phi=0.0, resolution=1e-5):
    """Zenith-angle offset at which the matched gain first drops to one half.

    Found by a numeric scan around ``(phi, theta)``.
    """
    f = steering_vector(phi, theta, Mt, Nt)
    offsets = np.arange(resolution, math.pi / 2, resolution)
    for chunk in np.array_split(offsets, max(1, len(offsets) // 2000)):
        gains = np.array([beam_gain(f, phi, theta + o, Mt, Nt) for o in chunk])
        below = np.nonzero(gains <= 0.5)[0]
        if len(below):
            return float(chunk[below[0]])
    return math.inf


@dataclass(frozen=True, eq=False)
class Codebook:
    """Steering vectors on a uniform azimuth x zenith grid (cell centers)."""

    n_phi: int = 16
    n_theta: int = 8
    Mt: int = 8
    Nt: int = 8

    def __post_init__(self):
        if self.n_phi < 1 or self.n_theta < 1:
            raise InvalidInputError("codebook grid must be nonempty")
        phis = -math.pi + (np.arange(self.n_phi) + 0.5) * (2 * math.pi / self.n_phi)
        thetas = (np.arange(self.n_theta) + 0.5) * (math.pi / 2 / self.n_theta)
        angles = [(p, t) for p in phis for t in thetas]
        beams = np.array([steering_vector(p, t, self.Mt, self.Nt) for p, t in angles])
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "beams", beams)

    def __len__(self):
        return len(self.beams)

    @classmethod
    def from_beams(cls, beams, Mt, Nt):
        cb = cls(1, 1, Mt, Nt)
        beams = np.atleast_2d(np.asarray(beams, dtype=complex))
        if len(beams) == 0:
            raise InvalidInputError("codebook must be nonempty")
        object.__setattr__(cb, "beams", beams)
        object.__setattr__(cb, "angles", [None] * len(beams))
        return cb


class TrainingResult(NamedTuple):
    best_index: int
    best_beam: np.ndarray
    gain: float
    overhead_slots: int


def beam_training_baseline(codebook, true_angles, slots_per_beam=1):
    """Exhaustive sweep: the strongest beam at the true angles wins (lowest index on ties)."""
    phi, theta = true_angles
    a = steering_vector(phi, theta, codebook.Mt, codebook.Nt)
    gains = np.abs(codebook.beams.conj() @ a) ** 2
    best = int(np.argmax(gains))
    return TrainingResult(best, codebook.beams[best], float(gains[best]),
                          len(codebook) * int(slots_per_beam))
