"""Serving-BS management: LPM-driven handover on NLoS and rate accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive
from .exceptions import InvalidInputError, NoCandidateError
from .identification import map_prior
from .sensing import RadioConfig

LOS = "LoS"
NLOS_STAY = "NLoS-stay"
HANDOVER = "handover"


@dataclass(eq=False)
class BaseStation:
    id: int
    position: np.ndarray
    cfg: RadioConfig = field(default_factory=RadioConfig)
    lpm: object = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.lpm is not None and not np.array_equal(self.lpm.bs_position, self.position):
            raise InvalidInputError(f"BS {self.id}: LPM was built for another position")


@dataclass(frozen=True)
class RateConfig:
    penetration_loss_db: float = 20.0
    handover_delay_slots: int = 1
    revert_threshold: float = 0.9
    revert_hold_slots: int = 5
    handover_enabled: bool = True

    def __post_init__(self):
        check_positive(self.penetration_loss_db, "penetration_loss_db", strict=False)
        if int(self.handover_delay_slots) < 0:
            raise InvalidInputError("handover_delay_slots must be >= 0")
        if not 0.0 <= self.revert_threshold <= 1.0:
            raise InvalidInputError("revert_threshold must lie in [0, 1]")
        if int(self.revert_hold_slots) < 1:
            raise InvalidInputError("revert_hold_slots must be >= 1")


def select_bs_on_nlos(bss, q_pred, serving_id):
    """Candidate with the highest map LoS probability at ``q_pred``.

    Ties go to the BS nearer ``q_pred``, then to the lower id, so the result
    does not depend on list order.
    """
    q_pred = np.asarray(q_pred, dtype=float)
    others = [b for b in bss if b.id != serving_id]
    if not others:
        raise NoCandidateError("no alternative base station")

    def key(b):
        p, _ = map_prior(b.lpm, q_pred)
        return (-p, float(np.linalg.norm(b.position - q_pred)), b.id)

    return min(others, key=key).id


def nearest_bs(bss, q):
    q = np.asarray(q, dtype=float)
    return min(bss, key=lambda b: (float(np.linalg.norm(b.position - q)), b.id)).id


def achievable_rate(link_state, snr_los, rate_cfg=RateConfig(), in_delay=False):
    """Spectral efficiency (bits/s/Hz) for one slot.

    ``link_state`` is ``"LoS"``, ``"NLoS-stay"`` or ``"handover"``.  For a
    handover, ``snr_los`` is the new BS's SNR and ``in_delay`` marks the
    interruption slots, which carry no data.
    """
    if snr_los < 0:
        raise InvalidInputError("snr must be >= 0")
    if link_state == LOS:
        return math.log2(1.0 + snr_los)
    if link_state == NLOS_STAY:
        return math.log2(1.0 + snr_los * 10.0 ** (-rate_cfg.penetration_loss_db / 10.0))
    if link_state == HANDOVER:
        return 0.0 if in_delay else math.log2(1.0 + snr_los)
    raise InvalidInputError(f"unknown link state {link_state!r}")


class AssociationState:
    """Serving BS, pending handover interruption, and the revert counter."""

    def __init__(self, bss, home_id, rate_cfg=RateConfig()):
        self.bss = {b.id: b for b in bss}
        self.home_id = home_id
        self.serving_id = home_id
        self.rate_cfg = rate_cfg
        self.delay_left = 0
        self.revert_count = 0
        self.handover_count = 0

    @property
    def serving(self):
        return self.bss[self.serving_id]

    def _switch(self, new_id):
        self.serving_id = new_id
        self.delay_left = int(self.rate_cfg.handover_delay_slots)
        self.revert_count = 0
        self.handover_count += 1

    def consume_delay(self):
        """True while the current slot falls inside a handover interruption."""
        if self.delay_left > 0:
            self.delay_left -= 1
            return True
        return False

    def on_decision(self, decision_state, q_pred):
        """Apply the handover policy after a slot's link decision.

        Returns the new serving id if a handover was triggered, else None.
        """
        cfg = self.rate_cfg
        if not cfg.handover_enabled or len(self.bss) < 2:
            return None
        if decision_state != LOS:
            try:
                cand = select_bs_on_nlos(list(self.bss.values()), q_pred, self.serving_id)
            except NoCandidateError:
                return None
            self._switch(cand)
            return cand
        if self.serving_id != self.home_id:
            p_home, _ = map_prior(self.bss[self.home_id].lpm, q_pred)
            self.revert_count = self.revert_count + 1 if p_home > cfg.revert_threshold else 0
            if self.revert_count >= cfg.revert_hold_slots:
                self._switch(self.home_id)
                return self.home_id
        return None
