"""Closed-loop slot simulation: predict, beamform, sense, identify, track, associate.

Slot ``n`` (1-based) applies the beam computed from the prediction for slot
``n``, which uses only measurements up to slot ``n - 1``.  Ground truth is
read only to synthesize the echo, to evaluate the downlink channel, and to
log.  Slot 1 acquires the UAV with an exhaustive codebook sweep and
initializes the filter from its echo.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import association as assoc_mod
from .association import AssociationState, BaseStation, RateConfig, nearest_bs
from .beamforming import (Codebook, beam_gain, beam_training_baseline, comm_snr, predictive_beam,
                          snr_from_gain)
from .citymap import CityMap, load_citymap
from .exceptions import ConfigError, InvalidInputError, UavLpmError
from .identification import LOS, NLOS, IdentificationConfig, identify, map_prior
from .kinematics import MotionModel, UavState, generate_trajectory
from .lpm import build_prior
from .lpm import load as load_lpm
from .sensing import BLOCKER, BlockerModel, RadioConfig, Scene, SensingNoise, observables
from .sensing import synthesize_measurement
from .tracking import (INIT_POS_VAR, INIT_VEL_VAR, KalmanBelief, init_from_measurement,
                       jacobian_with_fallback, predict, update)

log = logging.getLogger(__name__)

INIT_MODES = ("acquire", "exact")
FLIGHT_FLOOR_MARGIN = 5.0  # m above the highest array when bounds default to the region

RECORD_FIELDS = (
    "slot", "qx", "qy", "qz", "vx", "vy", "vz", "qhx", "qhy", "qhz", "vhx", "vhy", "vhz",
    "link_true", "link_est", "posterior_los", "bs_id", "beam_gain", "snr_db", "rate", "nis",
)

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One round of the SplitMix64 finalizer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(root, index):
    """Seed of run ``index`` under root seed ``root``.

    ``splitmix64(root ^ splitmix64(index))``; the same pair always gives the
    same stream and distinct indices give unrelated streams.
    """
    return splitmix64((int(root) & _MASK64) ^ splitmix64(int(index) & _MASK64))


def run_rngs(seed):
    """Independent generators for the trajectory and for sensing noise."""
    traj_ss, sense_ss = np.random.SeedSequence(int(seed) & _MASK64).spawn(2)
    return np.random.default_rng(traj_ss), np.random.default_rng(sense_ss)


@dataclass(frozen=True)
class BeamConfig:
    n_phi: int = 16
    n_theta: int = 8
    slots_per_beam: int = 1
    training_period: int = 500

    def __post_init__(self):
        for name in ("n_phi", "n_theta", "slots_per_beam", "training_period"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")


@dataclass(eq=False)
class Scenario:
    city: CityMap
    base_stations: list
    motion: MotionModel
    x0: UavState
    L: int
    seed: int = 0
    rate: RateConfig = field(default_factory=RateConfig)
    ident: IdentificationConfig = field(default_factory=IdentificationConfig)
    noise: SensingNoise = field(default_factory=SensingNoise)
    blocker: BlockerModel = field(default_factory=BlockerModel)
    beam: BeamConfig = field(default_factory=BeamConfig)
    r_min: float = 0.1
    init: str = "acquire"  # or "exact": start the filter at x0

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ConfigError(f"must be one of {INIT_MODES}", "init")
        if int(self.L) < 1:
            raise ConfigError("must be >= 1", "L")
        region = self.city.region
        ids = [b.id for b in self.base_stations]
        if not ids:
            raise ConfigError("at least one base station required", "base_stations")
        if len(set(ids)) != len(ids):
            raise ConfigError("ids must be unique", "base_stations")
        for i, b in enumerate(self.base_stations):
            if not region.contains(b.position):
                raise ConfigError("position outside region", f"base_stations[{i}].position")
            if b.lpm is None:
                raise ConfigError("LPM missing", f"base_stations[{i}].lpm")
        if not region.contains(self.x0.q):
            raise ConfigError("initial position outside region", "initial_state.q")
        m = self.motion
        if m.q_lower is not None:
            if m.q_lower[2] <= max(b.position[2] for b in self.base_stations):
                raise ConfigError("flight floor must lie above every base station",
                                  "motion.q_lower")
            if np.any(self.x0.q < m.q_lower) or np.any(self.x0.q > m.q_upper):
                raise ConfigError("initial position outside motion bounds", "initial_state.q")
        elif self.x0.q[2] <= max(b.position[2] for b in self.base_stations):
            raise ConfigError("UAV must start above every base station", "initial_state.q")

    @property
    def home_id(self):
        return nearest_bs(self.base_stations, self.x0.q)

    def with_(self, **changes):
        return replace(self, **changes)


class SlotRecord(NamedTuple):
    slot: int
    qx: float
    qy: float
    qz: float
    vx: float
    vy: float
    vz: float
    qhx: float
    qhy: float
    qhz: float
    vhx: float
    vhy: float
    vhz: float
    link_true: str
    link_est: str
    posterior_los: float
    bs_id: int
    beam_gain: float
    snr_db: float
    rate: float
    nis: float


@dataclass(eq=False)
class RunOutput:
    records: list
    covariances: np.ndarray
    echo_snr: np.ndarray
    fallbacks: list
    truth: list


def _parse_vec(d, key, path):
    try:
        v = np.asarray(d[key], dtype=float)
    except KeyError:
        raise ConfigError("missing", f"{path}.{key}") from None
    except (TypeError, ValueError):
        raise ConfigError("not numeric", f"{path}.{key}") from None
    if v.shape != (3,):
        raise ConfigError("must be a 3-vector", f"{path}.{key}")
    return v


def _sub(cls, d, path):
    try:
        return cls(**(d or {}))
    except TypeError as exc:
        raise ConfigError(str(exc), path) from None
    except (InvalidInputError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def scenario_from_dict(d, base_dir=None):
    """Build a :class:`Scenario` from its JSON form.

    ``citymap`` is either an inline map object or a path (relative to
    ``base_dir``).  A base station may give ``lpm`` as a path to a saved map;
    otherwise its prior is built with the ``lpm`` section's parameters.
    """
    base_dir = Path(base_dir or ".")
    cm = d.get("citymap")
    if cm is None:
        raise ConfigError("missing", "citymap")
    if isinstance(cm, str):
        p = base_dir / cm
        if not p.exists():
            raise ConfigError(f"file not found: {p}", "citymap")
        city = load_citymap(p)
    else:
        city = CityMap.from_dict(cm)
    lpm_cfg = d.get("lpm", {})
    height_sigma = lpm_cfg.get("height_sigma", 2.0)
    strength = lpm_cfg.get("prior_strength", 10.0)
    bss = []
    for i, bd in enumerate(d.get("base_stations", [])):
        path = f"base_stations[{i}]"
        pos = _parse_vec(bd, "position", path)
        if not city.region.contains(pos):
            raise ConfigError("position outside region", f"{path}.position")
        radio = _sub(RadioConfig, bd.get("radio"), f"{path}.radio")
        if "lpm" in bd:
            p = base_dir / bd["lpm"]
            if not p.exists():
                raise ConfigError(f"file not found: {p}", f"{path}.lpm")
            lpm = load_lpm(p)
        else:
            try:
                lpm = build_prior(city, pos, height_sigma, strength)
            except InvalidInputError as exc:
                raise ConfigError(str(exc), "lpm") from None
        try:
            bss.append(BaseStation(int(bd.get("id", i + 1)), pos, radio, lpm))
        except InvalidInputError as exc:
            raise ConfigError(str(exc), path) from None
    motion_d = dict(d.get("motion", {}))
    if "q_lower" not in motion_d and "q_upper" not in motion_d and bss:
        # keep the UAV above every array plane: the sensing geometry needs dz > 0
        lo = city.region.q_lower.copy()
        lo[2] = max(lo[2], max(b.position[2] for b in bss) + FLIGHT_FLOOR_MARGIN)
        motion_d["q_lower"], motion_d["q_upper"] = lo, city.region.q_upper
    try:
        motion = MotionModel(**motion_d)
    except (TypeError, InvalidInputError) as exc:
        raise ConfigError(str(exc), "motion") from None
    init = d.get("initial_state")
    if init is None:
        raise ConfigError("missing", "initial_state")
    x0 = UavState(_parse_vec(init, "q", "initial_state"), _parse_vec(init, "v", "initial_state"))
    try:
        L = int(d["L"])
    except KeyError:
        raise ConfigError("missing", "L") from None
    return Scenario(
        city=city, base_stations=bss, motion=motion, x0=x0, L=L,
        seed=int(d.get("seed", 0)),
        rate=_sub(RateConfig, d.get("rate"), "rate"),
        ident=_sub(IdentificationConfig, d.get("identification"), "identification"),
        noise=_sub(SensingNoise, d.get("sensing"), "sensing"),
        blocker=_sub(BlockerModel, d.get("blocker"), "blocker"),
        beam=_sub(BeamConfig, d.get("beam"), "beam"),
        r_min=float(d.get("metrics", {}).get("r_min", 0.1)),
        init=d.get("init", "acquire"),
    )


def load_scenario(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}", "scenario")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (byte {exc.pos})", str(path)) from None
    return scenario_from_dict(d, path.parent)


def truth_trajectory(scenario, seed=None):
    seed = scenario.seed if seed is None else seed
    traj_rng, _ = run_rngs(seed)
    return generate_trajectory(scenario.x0, scenario.motion, scenario.L, traj_rng)[:scenario.L]


def _snr_db(snr):
    return 10.0 * math.log10(snr) if snr > 0 else -math.inf


def _initial_cov():
    return np.diag([INIT_POS_VAR] * 3 + [INIT_VEL_VAR] * 3)


def _filter_step(pred, echo, bs, scenario, n, fallbacks):
    R = scenario.noise.covariance(echo.echo_snr) if echo.detected else None
    H, jfb = jacobian_with_fallback(pred.mean, bs.position)
    if jfb:
        fallbacks.append((n, "numerical Jacobian"))
    dec = identify(pred, echo, bs.lpm, bs.position, R, scenario.ident, H)
    if dec.clamped:
        fallbacks.append((n, "prediction outside region; nearest cell used"))
    if dec.state != LOS:
        return pred, dec.state, dec.posterior_los, math.nan
    res = update(pred, echo.z, R, bs.position, H)
    if res.skipped:
        fallbacks.append((n, "ill-conditioned innovation; update skipped"))
    return res.belief, dec.state, dec.posterior_los, res.nis


def simulate(scenario, seed=None):
    """Run one closed-loop simulation and keep filter internals for analysis."""
    seed = scenario.seed if seed is None else seed
    traj_rng, sense_rng = run_rngs(seed)
    truth = generate_trajectory(scenario.x0, scenario.motion, scenario.L, traj_rng)[:scenario.L]
    model = scenario.motion
    assoc = AssociationState(scenario.base_stations, scenario.home_id, scenario.rate)
    scenes = {b.id: Scene(scenario.city, b.position, scenario.blocker)
              for b in scenario.base_stations}
    codebooks = {}
    records, covs, snrs, fallbacks = [], [], [], []
    belief = None

    for n, state in enumerate(truth, start=1):
        bs = assoc.serving
        cfg = bs.cfg
        in_delay = assoc.consume_delay()
        if belief is None and scenario.init == "exact":
            pred = KalmanBelief(scenario.x0.x, _initial_cov())
            f, _ = predictive_beam(pred, bs.position, cfg.Mt, cfg.Nt)
        elif belief is None:
            key = (cfg.Mt, cfg.Nt)
            if key not in codebooks:
                codebooks[key] = Codebook(scenario.beam.n_phi, scenario.beam.n_theta, *key)
            o = observables(bs.position, state.x)
            f = beam_training_baseline(codebooks[key], (o.phi, o.theta)).best_beam
            pred = None
        else:
            pred = predict(belief, model)
            f, fb = predictive_beam(pred, bs.position, cfg.Mt, cfg.Nt)
            if fb:
                fallbacks.append((n, "boresight beam"))
        echo = synthesize_measurement(scenes[bs.id], state, f, cfg, sense_rng, scenario.noise)
        snrs.append(echo.echo_snr)
        nis = math.nan

        if pred is None:
            if echo.detected:
                belief = init_from_measurement(echo.z, bs.position)
            else:
                fallbacks.append((n, "acquisition missed; initialized at scenario start"))
                belief = KalmanBelief(scenario.x0.x, _initial_cov())
            p, clamped = map_prior(bs.lpm, belief.position)
            decision_state = LOS if p >= scenario.ident.threshold else NLOS
            posterior = p
            q_pred = belief.position
        else:
            try:
                belief, decision_state, posterior, nis = _filter_step(
                    pred, echo, bs, scenario, n, fallbacks)
            except (UavLpmError, np.linalg.LinAlgError) as exc:
                # prediction left the valid sensing geometry: coast on the prior
                fallbacks.append((n, f"measurement step failed ({exc}); coasting"))
                p, _ = map_prior(bs.lpm, pred.position)
                belief, posterior = pred, p
                decision_state = LOS if p >= scenario.ident.threshold else NLOS
            q_pred = pred.position

        # downlink channel for this slot (truth side)
        o = observables(bs.position, state.x)
        g = beam_gain(f, o.phi, o.theta, cfg.Mt, cfg.Nt)
        snr = snr_from_gain(cfg, o.d, g)
        los_true = echo.origin != BLOCKER
        if in_delay:
            rate = assoc_mod.achievable_rate(assoc_mod.HANDOVER, snr, scenario.rate, True)
        elif los_true:
            rate = assoc_mod.achievable_rate(assoc_mod.LOS, snr, scenario.rate)
        else:
            rate = assoc_mod.achievable_rate(assoc_mod.NLOS_STAY, snr, scenario.rate)
            snr = snr * 10.0 ** (-scenario.rate.penetration_loss_db / 10.0)

        m = belief.mean
        records.append(SlotRecord(
            n, *state.q.tolist(), *state.v.tolist(), *m.tolist(),
            LOS if los_true else NLOS, decision_state, float(posterior), bs.id,
            float(g), _snr_db(snr), rate, nis))
        covs.append(belief.cov)
        assoc.on_decision(decision_state, q_pred)

    for n, what in fallbacks:
        log.warning("slot %d: %s", n, what)
    return RunOutput(records, np.array(covs), np.array(snrs), fallbacks, truth)


def run(scenario, seed=None):
    """Slot records of one run; deterministic in ``(scenario, seed)``."""
    return simulate(scenario, seed).records


def beam_training_rates(scenario, seed=None):
    """Per-slot rate of the periodic beam-training baseline on the same truth.

    Every ``training_period`` slots the BS sweeps its codebook
    (``len(codebook) * slots_per_beam`` zero-rate slots) and then keeps the
    selected beam.  The home BS serves throughout.
    """
    truth = truth_trajectory(scenario, seed)
    bs = next(b for b in scenario.base_stations if b.id == scenario.home_id)
    cfg = bs.cfg
    bc = scenario.beam
    cb = Codebook(bc.n_phi, bc.n_theta, cfg.Mt, cfg.Nt)
    overhead = len(cb) * bc.slots_per_beam
    rates = []
    f = None
    for n, state in enumerate(truth, start=1):
        phase = (n - 1) % bc.training_period
        o = observables(bs.position, state.x)
        if phase < overhead:
            rates.append(0.0)
            f = None
            continue
        if f is None:
            f = beam_training_baseline(cb, (o.phi, o.theta), bc.slots_per_beam).best_beam
        snr = comm_snr(cfg, o.d, f, o.phi, o.theta)
        blocked = scenario.city.blocked_mask(bs.position, state.q)[0]
        kind = assoc_mod.NLOS_STAY if blocked else assoc_mod.LOS
        rates.append(assoc_mod.achievable_rate(kind, snr, scenario.rate))
    return np.array(rates), overhead / bc.training_period


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records))


def read_records_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RECORD_FIELDS:
            raise ConfigError("unexpected header", str(path))
        for line, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_FIELDS):
                raise ConfigError(f"line {line}: expected {len(RECORD_FIELDS)} fields", str(path))
            vals = []
            try:
                for name, v in zip(RECORD_FIELDS, row):
                    if name in ("slot", "bs_id"):
                        vals.append(int(v))
                    elif name in ("link_true", "link_est"):
                        vals.append(v)
                    else:
                        vals.append(float(v))
            except ValueError:
                raise ConfigError(f"line {line}: malformed field {name}", str(path)) from None
            out.append(SlotRecord(*vals))
    return out


def _ratio(num, den):
    return num / den if den else math.nan


def compute_metrics(records, r_min=0.1):
    """Tracking, identification and communication metrics of one run.

    Detection refers to declaring NLoS: ``detection_rate`` is the share of
    truly blocked slots declared NLoS and ``false_alarm_rate`` the share of
    clear slots declared NLoS.  Metrics with an empty denominator are NaN and
    listed under ``undefined``.
    """
    if not records:
        raise InvalidInputError("no records")
    q = np.array([[r.qx, r.qy, r.qz] for r in records])
    qh = np.array([[r.qhx, r.qhy, r.qhz] for r in records])
    v = np.array([[r.vx, r.vy, r.vz] for r in records])
    vh = np.array([[r.vhx, r.vhy, r.vhz] for r in records])
    truth_los = np.array([r.link_true == LOS for r in records])
    est_los = np.array([r.link_est == LOS for r in records])
    rate = np.array([r.rate for r in records])
    bs_ids = [r.bs_id for r in records]
    out = {
        "pos_rmse": float(np.sqrt(np.mean(np.sum((q - qh) ** 2, axis=1)))),
        "vel_rmse": float(np.sqrt(np.mean(np.sum((v - vh) ** 2, axis=1)))),
        "ident_accuracy": float(np.mean(truth_los == est_los)),
        "detection_rate": _ratio(np.sum(~truth_los & ~est_los), np.sum(~truth_los)),
        "false_alarm_rate": _ratio(np.sum(truth_los & ~est_los), np.sum(truth_los)),
        "mean_rate": float(np.mean(rate)),
        "outage_fraction": float(np.mean(rate < r_min)),
        "handover_count": int(sum(a != b for a, b in zip(bs_ids, bs_ids[1:]))),
    }
    out = {k: (float(x) if k != "handover_count" else x) for k, x in out.items()}
    out["undefined"] = [k for k, x in out.items() if isinstance(x, float) and math.isnan(x)]
    return out


METRIC_NAMES = ("pos_rmse", "vel_rmse", "ident_accuracy", "detection_rate",
                "false_alarm_rate", "mean_rate", "outage_fraction", "handover_count")


def summarize(per_run, n_resamples=1000, seed=0):
    """Mean and bootstrap 95% percentile interval of each metric across runs.

    Runs where a metric is undefined are left out of that metric.
    """
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([m[name] for m in per_run], dtype=float)
        # sorted so the aggregate does not depend on run order
        vals = np.sort(vals[np.isfinite(vals)])
        if len(vals) == 0:
            out[name] = {"mean": math.nan, "ci_low": math.nan, "ci_high": math.nan, "n": 0}
            continue
        if len(vals) == 1 or np.all(vals == vals[0]):
            lo = hi = float(vals[0])
        else:
            res = stats.bootstrap((vals,), np.mean, n_resamples=n_resamples,
                                  method="percentile", random_state=seed)
            lo, hi = float(res.confidence_interval.low), float(res.confidence_interval.high)
        out[name] = {"mean": float(vals.mean()), "ci_low": lo, "ci_high": hi, "n": int(len(vals))}
    return out


def run_batch(scenario, runs, seed=None, keep_outputs=False):
    """Independent runs with seeds ``derive_seed(seed, i)``, ``i = 0..runs-1``.

    Returns ``(per_run_metrics, outputs)``; ``outputs`` is empty unless
    ``keep_outputs`` is set.
    """
    seed = scenario.seed if seed is None else seed
    metrics, outputs = [], []
    for i in range(runs):
        out = simulate(scenario, derive_seed(seed, i))
        m = compute_metrics(out.records, scenario.r_min)
        m["fallbacks"] = len(out.fallbacks)
        metrics.append(m)
        if keep_outputs:
            outputs.append(out)
    return metrics, outputs


def nees_series(outputs):
    """Run-averaged NEES per slot (array of length L)."""
    vals = []
    for out in outputs:
        x = np.array([[r.qx, r.qy, r.qz, r.vx, r.vy, r.vz] for r in out.records])
        xh = np.array([[r.qhx, r.qhy, r.qhz, r.vhx, r.vhy, r.vhz] for r in out.records])
        e = x - xh
        vals.append(np.einsum("ni,ni->n", e, np.linalg.solve(out.covariances, e[..., None])[..., 0]))
    return np.mean(vals, axis=0)


def nis_series(outputs):
    """Run-averaged NIS per slot, skipping slots without an update."""
    nis = np.array([[r.nis for r in out.records] for out in outputs])
    ok = np.isfinite(nis)
    count = ok.sum(axis=0)
    total = np.where(ok, nis, 0.0).sum(axis=0)
    return np.where(count > 0, total / np.maximum(count, 1), np.nan)
