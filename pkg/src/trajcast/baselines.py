"""Constant-velocity Kalman filter baseline.

State is [lon, lat, alt, d_lon/dt, d_lat/dt, d_alt/dt] in degrees / meters
and per-second rates, filtered from position measurements only. Rollout
holds the velocity constant (no measurement updates), which is exactly the
regime where recursive predictors accumulate error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import geodesy
from .codec import STEP_SECONDS, TrajectoryPoint


class SingularInnovationError(ArithmeticError):
    """Innovation covariance was not invertible."""


@dataclass
class KalmanState:
    """Filter state: 6-vector, covariance, and the noise scales used."""

    x: np.ndarray          # [6] position (deg, deg, m) + velocity (deg/s, deg/s, m/s)
    p: np.ndarray          # [6, 6] covariance
    q: np.ndarray          # [3] process noise for (lon, lat, alt) position blocks
    r: np.ndarray          # [3] measurement noise for (lon, lat, alt)
    timestamp: int = 0
    callsign: str = ""

    def __post_init__(self):
        if self.x.shape != (6,) or self.p.shape != (6, 6):
            raise ValueError("state must be [6] with [6, 6] covariance")
        if not np.allclose(self.p, self.p.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")


#: Default noise scales: degrees^2 horizontally, m^2 vertically.
DEFAULT_PROCESS_NOISE = (1e-6, 1e-6, 1.0)
DEFAULT_MEASUREMENT_NOISE = (1e-6, 1e-6, 1.0)


def _transition(dt: float) -> np.ndarray:
    f = np.eye(6)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    return f


def _process_noise(q: np.ndarray, dt: float) -> np.ndarray:
    # velocity-block noise scaled so a dt-long step injects comparable
    # position uncertainty
    return np.diag(np.concatenate([q, q / dt**2]))


def kf_fit(
    observations: Sequence[TrajectoryPoint],
    dt: float = float(STEP_SECONDS),
    q: Sequence[float] = DEFAULT_PROCESS_NOISE,
    r: Sequence[float] = DEFAULT_MEASUREMENT_NOISE,
) -> KalmanState:
    """Filter a window of observations into a position/velocity state.

    The state initializes from the first observation (velocity from the
    first finite difference) and then runs k-1 predict/update cycles on the
    position measurements.
    """
    if len(observations) < 2:
        raise ValueError(f"need at least 2 observations, got {len(observations)}")
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    positions = np.array(
        [[p.lon, p.lat, p.alt] for p in observations], dtype=np.float64
    )
    x = np.zeros(6)
    x[:3] = positions[0]
    x[3:] = (positions[1] - positions[0]) / dt
    # generous prior so the covariance contracts toward steady state
    p = np.diag(np.concatenate([r * 100.0, r * 100.0 / dt**2]))

    f = _transition(dt)
    qm = _process_noise(q, dt)
    h = np.zeros((3, 6))
    h[0, 0] = h[1, 1] = h[2, 2] = 1.0
    rm = np.diag(r)

    for z in positions[1:]:
        # predict
        x = f @ x
        p = f @ p @ f.T + qm
        # update with the position measurement
        innovation = z - h @ x
        s = h @ p @ h.T + rm
        try:
            gain = np.linalg.solve(s, h @ p).T
        except np.linalg.LinAlgError as exc:
            raise SingularInnovationError(str(exc)) from exc
        x = x + gain @ innovation
        p = (np.eye(6) - gain @ h) @ p
        p = 0.5 * (p + p.T)

    last = observations[-1]
    return KalmanState(
        x=x, p=p, q=q, r=r, timestamp=last.timestamp, callsign=last.callsign
    )


def kf_rollout(
    state: KalmanState, n: int, dt: float = float(STEP_SECONDS)
) -> List[TrajectoryPoint]:
    """Predict-only propagation for n horizons; velocity held constant."""
    out = []
    x = state.x.copy()
    for j in range(1, n + 1):
        pos = x[:3] + j * dt * x[3:]
        lat = pos[1]
        vx = x[3] * 3600.0 * geodesy.km_per_deg_lon(lat)
        vy = x[4] * 3600.0 * geodesy.km_per_deg_lat()
        vz = x[5] * 3.6
        out.append(
            TrajectoryPoint(
                timestamp=state.timestamp + int(round(j * dt)),
                callsign=state.callsign,
                lon=float(pos[0]),
                lat=float(lat),
                alt=float(pos[2]),
                vx=float(vx),
                vy=float(vy),
                vz=float(vz),
            )
        )
    return out
