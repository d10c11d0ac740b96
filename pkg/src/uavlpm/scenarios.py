"""Reference scenarios in their JSON-compatible dict form.

``open_sky``: no buildings, UAV cruising at 60 m within LoS of the BS.
``canyon``: one tower between the BS and a UAV crossing its shadow; with
``second_bs`` a base station on the far side keeps the shadow in LoS.
"""
from __future__ import annotations

import copy

from .sim import scenario_from_dict

REGION = {"q_lower": [-50.0, -200.0, 0.0], "q_upper": [350.0, 200.0, 150.0],
          "cell_size": [10.0, 10.0, 10.0]}

# rcs_scale keeps the echo SNR above 20 dB along these trajectories
_COMMON = {
    "motion": {"dt": 0.02, "sigma_d": 0.1, "sigma_v": 0.1},
    "L": 500,
    "seed": 1,
    "sensing": {"rcs_scale": 2000.0},
    "lpm": {"height_sigma": 2.0, "prior_strength": 10.0},
    "rate": {"penetration_loss_db": 20.0, "handover_delay_slots": 1},
    "beam": {"n_phi": 16, "n_theta": 8, "slots_per_beam": 1, "training_period": 500},
}

BS1 = {"id": 1, "position": [0.0, 0.0, 25.0]}
BS2 = {"id": 2, "position": [260.0, 180.0, 25.0]}

TOWER = {"footprint": [[90.0, -10.0], [110.0, -10.0], [110.0, 10.0], [90.0, 10.0]],
         "height": 60.0}


def open_sky_dict(second_bs=False):
    d = copy.deepcopy(_COMMON)
    d["citymap"] = {"region": dict(REGION), "buildings": []}
    d["base_stations"] = [dict(BS1)] + ([dict(BS2)] if second_bs else [])
    d["initial_state"] = {"q": [200.0, -30.0, 60.0], "v": [2.0, 6.0, 0.0]}
    return d


def canyon_dict(second_bs=False):
    d = copy.deepcopy(_COMMON)
    d["citymap"] = {"region": dict(REGION), "buildings": [copy.deepcopy(TOWER)]}
    d["base_stations"] = [dict(BS1)] + ([dict(BS2)] if second_bs else [])
    d["initial_state"] = {"q": [200.0, -60.0, 50.0], "v": [0.0, 12.0, 0.0]}
    # a cell just past the shadow edge reads clear while its UAV is still blocked;
    # a longer hold avoids ping-pong back to the home BS
    d["rate"]["revert_hold_slots"] = 25
    return d


def open_sky(second_bs=False, **overrides):
    d = open_sky_dict(second_bs)
    d.update(overrides)
    return scenario_from_dict(d)


def canyon(second_bs=False, **overrides):
    d = canyon_dict(second_bs)
    d.update(overrides)
    return scenario_from_dict(d)
