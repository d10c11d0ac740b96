"""Extended Kalman filter over the constant-velocity model.

Measurements are ``z = (d, phi, theta, v_r)`` from :func:`uavlpm.sensing.observables`.
The azimuth residual is wrapped to (-pi, pi] and the covariance update uses
the Joseph form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import chi2

from .exceptions import SingularGeometryError
from .sensing import observables, wrap_angle

INIT_POS_VAR = 100.0
INIT_VEL_VAR = 25.0
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class KalmanBelief:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def position(self):
        return self.mean[:3]

    @property
    def velocity(self):
        return self.mean[3:]


class UpdateResult(NamedTuple):
    belief: KalmanBelief
    innovation: np.ndarray
    S: np.ndarray
    nis: float
    skipped: bool = False


def _symmetrize(P):
    return 0.5 * (P + P.T)


def predict(belief, model):
    """Time update: ``m' = G m``, ``P' = G P G^T + Q``."""
    G = model.G
    return KalmanBelief(G @ belief.mean, _symmetrize(G @ belief.cov @ G.T + model.Q))


def measurement_fn(x, bs):
    return np.array(observables(bs, x))


def measurement_jacobian(x, bs):
    """Closed-form 4x6 Jacobian of ``measurement_fn`` at ``x``.

    Raises SingularGeometryError at zero range or along the array normal,
    where the azimuth is undefined.
    """
    dx, dy, dz = x[0] - bs[0], x[1] - bs[1], x[2] - bs[2]
    vx, vy, vz = x[3], x[4], x[5]
    rho2 = dx * dx + dy * dy
    d2 = rho2 + dz * dz
    d = math.sqrt(d2)
    rho = math.sqrt(rho2)
    if d < 1e-9 or rho < 1e-9 * max(d, 1.0):
        raise SingularGeometryError("range or horizontal offset is zero")
    rdot = dx * vx + dy * vy + dz * vz
    H = np.zeros((4, 6))
    H[0, 0:3] = (dx / d, dy / d, dz / d)
    H[1, 0:2] = (-dy / rho2, dx / rho2)
    k = dz / (d2 * rho)
    H[2, 0:3] = (dx * k, dy * k, -rho / d2)
    d3 = d2 * d
    H[3, 0:3] = (vx / d - rdot * dx / d3, vy / d - rdot * dy / d3, vz / d - rdot * dz / d3)
    H[3, 3:6] = (dx / d, dy / d, dz / d)
    return H


def numerical_jacobian(x, bs, step=None):
    """Central-difference Jacobian; the default step is ``1e-4 * max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    h = step if step is not None else 1e-4 * max(1.0, float(np.linalg.norm(x)))
    J = np.zeros((4, 6))
    for i in range(6):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        diff = measurement_fn(xp, bs) - measurement_fn(xm, bs)
        diff[1] = wrap_angle(diff[1])
        J[:, i] = diff / (2 * h)
    return J


def jacobian_with_fallback(x, bs):
    """Analytic Jacobian, or the numerical one at singular geometry.

    Returns ``(H, used_fallback)``.
    """
    try:
        return measurement_jacobian(x, bs), False
    except SingularGeometryError:
        return numerical_jacobian(x, bs), True


def innovation(z, x, bs):
    nu = np.asarray(z, dtype=float) - measurement_fn(x, bs)
    nu[1] = wrap_angle(nu[1])
    return nu


def update(belief, z, R, bs, H=None):
    """Measurement update with the Joseph-form covariance.

    When the innovation covariance is ill-conditioned (condition number above
    1e12) the update is skipped and ``skipped`` is set.
    """
    x, P = belief.mean, belief.cov
    if H is None:
        H, _ = jacobian_with_fallback(x, bs)
    nu = innovation(z, x, bs)
    PHt = P @ H.T
    S = _symmetrize(H @ PHt + R)
    eig = np.linalg.eigvalsh(S)
    if not (eig[0] > 0 and eig[-1] / eig[0] < MAX_CONDITION):
        return UpdateResult(belief, nu, S, math.nan, True)
    S_inv = np.linalg.inv(S)
    K = PHt @ S_inv
    I_KH = np.eye(6) - K @ H
    P_new = _symmetrize(I_KH @ P @ I_KH.T + K @ R @ K.T)
    return UpdateResult(KalmanBelief(x + K @ nu, P_new), nu, S, float(nu @ S_inv @ nu))


def init_from_measurement(z, bs):
    """Back-project ``(d, phi, theta)`` to a position with zero velocity."""
    d, phi, theta = z[0], z[1], z[2]
    st = math.sin(theta)
    q = np.asarray(bs, dtype=float) + d * np.array(
        [st * math.cos(phi), st * math.sin(phi), math.cos(theta)])
    mean = np.concatenate([q, np.zeros(3)])
    cov = np.diag([INIT_POS_VAR] * 3 + [INIT_VEL_VAR] * 3)
    return KalmanBelief(mean, cov)


def gaussian_loglik(nu, S):
    """Log density of ``nu`` under N(0, S)."""
    C = np.linalg.cholesky(S)
    y = np.linalg.solve(C, nu)
    logdet = 2.0 * float(np.sum(np.log(np.diag(C))))
    return -0.5 * (float(y @ y) + logdet + len(nu) * math.log(2 * math.pi))


def nees(error, cov):
    return float(error @ np.linalg.solve(cov, error))


def chi2_interval(dof, n_runs, alpha=0.05):
    """Two-sided acceptance interval for the mean of ``n_runs`` chi-square(dof) draws."""
    lo = chi2.ppf(alpha / 2, dof * n_runs) / n_runs
    hi = chi2.ppf(1 - alpha / 2, dof * n_runs) / n_runs
    return float(lo), float(hi)
