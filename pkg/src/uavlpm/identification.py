"""Per-slot LoS/NLoS decision from the map prior and the echo likelihood.

An echo from the UAV should fit the predicted track, so its innovation is
scored under the Gaussian N(0, S).  A blocker echo carries no track
information and is scored by a uniform density over the measurement volume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .lpm import query
from .tracking import gaussian_loglik, innovation, jacobian_with_fallback

LOS = "LoS"
NLOS = "NLoS"


@dataclass(frozen=True)
class IdentificationConfig:
    threshold: float = 0.5
    d_max: float | None = None  # defaults to the region diagonal
    v_max: float = 50.0
    p_miss_los: float = 0.01

    def volume(self, region):
        d_max = self.d_max if self.d_max is not None else region.diagonal
        return d_max * (2 * math.pi) * (math.pi / 2) * (2 * self.v_max)


class LinkStateDecision(NamedTuple):
    state: str
    posterior_los: float
    prior_los: float
    likelihood_ratio: float
    clamped: bool = False


def fuse(prior, l_los, l_nlos, threshold=0.5):
    """Posterior LoS probability and decision from a prior and two likelihoods."""
    num = prior * l_los
    den = num + (1.0 - prior) * l_nlos
    post = num / den if den > 0 else prior
    ratio = l_los / l_nlos if l_nlos > 0 else math.inf
    return LinkStateDecision(LOS if post >= threshold else NLOS, post, prior, ratio)


def _log_fuse(prior, log_l_los, log_l_nlos, threshold):
    # log-domain version of fuse(): likelihoods can underflow for blocker echoes
    if prior <= 0.0:
        post = 0.0
    elif prior >= 1.0:
        post = 1.0
    else:
        t = math.log1p(-prior) + log_l_nlos - math.log(prior) - log_l_los
        post = 1.0 / (1.0 + math.exp(t)) if t < 700 else 0.0
    diff = log_l_los - log_l_nlos
    ratio = math.exp(diff) if diff < 700 else math.inf
    return LinkStateDecision(LOS if post >= threshold else NLOS, post, prior, ratio)


def map_prior(lpm, q):
    """LPM LoS probability at ``q``, clamped into the region if needed.

    Returns ``(p_los, clamped)``.
    """
    region = lpm.region
    clamped = not region.contains(q)
    if clamped:
        q = region.clamp(q)
    return query(lpm, q).p_los, clamped


def identify(belief_pred, z, lpm, bs, R, cfg=IdentificationConfig(), H=None):
    """Decide the link state for one slot.

    ``belief_pred`` is the time-updated belief; ``z`` the slot's
    :class:`~uavlpm.sensing.EchoMeasurement`; ``R`` its noise covariance
    (ignored for a missed detection).  ``H`` optionally supplies the
    measurement Jacobian at the predicted mean.
    """
    prior, clamped = map_prior(lpm, belief_pred.position)
    if not z.detected:
        num = prior * cfg.p_miss_los
        post = num / (num + (1.0 - prior))
        return LinkStateDecision(NLOS, post, prior, cfg.p_miss_los, clamped)
    x = belief_pred.mean
    if H is None:
        H, _ = jacobian_with_fallback(x, bs)
    nu = innovation(z.z, x, bs)
    S = H @ belief_pred.cov @ H.T + R
    log_l_los = gaussian_loglik(nu, S)
    log_l_nlos = -math.log(cfg.volume(lpm.region))
    return _log_fuse(prior, log_l_los, log_l_nlos, cfg.threshold)._replace(clamped=clamped)
