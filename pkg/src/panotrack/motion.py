"""Constant-velocity Kalman filter over (cx, cy, w, h) with a wrapping cx axis."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .geometry import PanoBox, angular_delta, wrap_x

NDIM = 4


class MotionError(ArithmeticError):
    """Raised when a Kalman correction is numerically impossible."""


@dataclass(frozen=True)
class MotionConfig:
    """Noise model. Standard deviations scale with box height, as in SORT-style trackers.

    Setting both ``std_weight_position`` and ``std_weight_velocity`` to 0 together with
    ``measurement_weight`` 0 gives a noiseless filter that tracks exact constant
    velocity motion after two observations.
    """

    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    measurement_weight: float = 1.0 / 20
    init_position_factor: float = 2.0
    init_velocity_factor: float = 10.0
    # set velocity from the displacement between the first two observations
    velocity_from_difference: bool = True
    min_extent: float = 1e-3

    def initial_std(self, h: float) -> np.ndarray:
        p = self.init_position_factor * self.std_weight_position * h
        v = self.init_velocity_factor * self.std_weight_velocity * h
        # floor keeps the prior positive definite even for zero noise weights
        p = max(p, 1e-6)
        v = max(v, 1e-6)
        return np.array([p] * NDIM + [v] * NDIM)

    def process_std(self, h: float) -> np.ndarray:
        return np.array(
            [self.std_weight_position * h] * NDIM + [self.std_weight_velocity * h] * NDIM
        )

    def measurement_std(self, h: float) -> np.ndarray:
        return np.full(NDIM, self.measurement_weight * h)


_F = np.eye(2 * NDIM)
_F[:NDIM, NDIM:] = np.eye(NDIM)
_H = np.eye(NDIM, 2 * NDIM)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray
    W: float
    wrap: bool = True  # False for planar images: no seam, raw cx differences
    n_obs: int = 1
    steps_since_obs: int = 0

    def box(self) -> PanoBox:
        cx, cy, w, h = self.mean[:NDIM]
        if not self.wrap:
            # PanoBox needs a center inside the image; planar tracks may drift out
            cx = min(max(cx, 0.0), np.nextafter(self.W, 0.0))
        return PanoBox(cx, cy, min(w, self.W), h, self.W)


def _wrap(mean: np.ndarray, s: KalmanState) -> np.ndarray:
    if s.wrap:
        mean[0] = wrap_x(mean[0], s.W)
    return mean


def init_state(box: PanoBox, config: MotionConfig = MotionConfig(), wrap: bool = True) -> KalmanState:
    if not (box.w > 0 and box.h > 0):
        raise ValueError("box extent must be positive")
    mean = np.zeros(2 * NDIM)
    mean[:NDIM] = box.as_array()
    cov = np.diag(config.initial_std(box.h) ** 2)
    return KalmanState(mean, cov, box.W, wrap)


def predict(s: KalmanState, config: MotionConfig = MotionConfig()) -> KalmanState:
    mean = _F @ s.mean
    mean[2:4] = np.maximum(mean[2:4], config.min_extent)
    _wrap(mean, s)
    Q = np.diag(config.process_std(s.mean[3]) ** 2)
    cov = _F @ s.covariance @ _F.T + Q
    cov = 0.5 * (cov + cov.T)
    return replace(s, mean=mean, covariance=cov, steps_since_obs=s.steps_since_obs + 1)


def innovation(s: KalmanState, z: np.ndarray) -> np.ndarray:
    y = z - s.mean[:NDIM]
    if s.wrap:
        y[0] = angular_delta(s.mean[0], z[0], s.W)
    return y


def update(s: KalmanState, obs: PanoBox, config: MotionConfig = MotionConfig()) -> KalmanState:
    """Kalman correction; the cx innovation is the minimal displacement around the cylinder."""
    if obs.W != s.W:
        raise ValueError(f"observation width {obs.W} does not match state width {s.W}")
    z = obs.as_array()
    y = innovation(s, z)
    P = s.covariance
    R = np.diag(config.measurement_std(obs.h) ** 2)
    S = _H @ P @ _H.T + R
    try:
        factor = scipy.linalg.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as e:
        raise MotionError(f"innovation covariance is not positive definite: {e}") from None
    PHt = P @ _H.T
    K = scipy.linalg.cho_solve(factor, PHt.T).T
    mean = s.mean + K @ y
    if config.velocity_from_difference and s.n_obs == 1 and s.steps_since_obs > 0:
        mean[NDIM:] = y / s.steps_since_obs
    # Joseph form keeps the posterior symmetric PSD
    IKH = np.eye(2 * NDIM) - K @ _H
    cov = IKH @ P @ IKH.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    mean[2:4] = np.maximum(mean[2:4], config.min_extent)
    _wrap(mean, s)
    return replace(s, mean=mean, covariance=cov, n_obs=s.n_obs + 1, steps_since_obs=0)
