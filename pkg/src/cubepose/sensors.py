"""Synthetic gyro, accelerometer and UWB range generators."""
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError


@dataclass(frozen=True)
class GyroModel:
    sigma_rate: float = 0.0035        # rad/s, white noise per sample
    sigma_bias_walk: float = 0.0      # rad/s/sqrt(s); bias held constant by default
    bias: tuple = (0.004, -0.006, 0.002)

    def __post_init__(self):
        if self.sigma_rate < 0 or self.sigma_bias_walk < 0:
            raise ConfigurationError("gyro noise levels must be non-negative")


@dataclass(frozen=True)
class AccelModel:
    sigma_accel: float = 0.02         # m/s^2
    bias: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.sigma_accel < 0:
            raise ConfigurationError("accelerometer noise must be non-negative")


@dataclass(frozen=True)
class UwbModel:
    sigma_range: float = 0.01
    outlier_fraction: float = 0.10
    sigma_outlier: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ConfigurationError("outlier_fraction must lie in [0, 1]")
        if self.sigma_range < 0 or self.sigma_outlier < self.sigma_range:
            raise ConfigurationError("need 0 <= sigma_range <= sigma_outlier")


@dataclass(frozen=True)
class Anchor:
    id: int
    position: tuple


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class RangeSample:
    t: float
    anchor_id: int
    range: float
    outlier: bool = False   # generator-side bookkeeping; unknown for real logs


def gyro_measure(w_true, model, rng):
    """``z = ω + b + η`` per axis."""
    return np.asarray(w_true, dtype=float) + np.asarray(model.bias) + model.sigma_rate * rng.standard_normal(3)


def bias_walk_step(model, dt, rng):
    if not dt > 0:
        raise ValueError("dt must be positive")
    step = model.sigma_bias_walk * math.sqrt(dt) * rng.standard_normal(3)
    return replace(model, bias=tuple(np.asarray(model.bias) + step))


def accel_measure(a_true_body, model, rng):
    return np.asarray(a_true_body, dtype=float) + np.asarray(model.bias) + model.sigma_accel * rng.standard_normal(3)


def uwb_measure(tag_pos, anchor, model, rng, t=0.0):
    """Time-of-flight range with an inlier/outlier Gaussian mixture.

    One uniform and one normal are always drawn so the stream position does
    not depend on which branch was taken.
    """
    d = np.asarray(tag_pos, dtype=float) - np.asarray(anchor.position, dtype=float)
    true_range = math.sqrt(d @ d)
    if true_range == 0.0:
        raise DegenerateGeometryError(f"tag coincides with anchor {anchor.id}")
    u = rng.random()
    z = rng.standard_normal()
    outlier = u < model.outlier_fraction
    sigma = model.sigma_outlier if outlier else model.sigma_range
    return RangeSample(t, anchor.id, max(true_range + sigma * z, 0.0), bool(outlier))


def pick_anchor(anchors, rng):
    if len(anchors) == 0:
        raise ConfigurationError("anchor set is empty")
    return anchors[int(rng.integers(len(anchors)))]


def planar_anchors(half_width=2.0, z=0.0):
    """Four anchors on a square (default 4 m side) in the plane ``z``."""
    h = half_width
    corners = [(-h, -h), (h, -h), (h, h), (-h, h)]
    return tuple(Anchor(i, (cx, cy, z)) for i, (cx, cy) in enumerate(corners))


def boom_anchors(half_width=2.0, half_height=0.25):
    """Eight anchors on a wide, shallow box; z separation is deliberately small."""
    out = []
    for i, (sx, sy, sz) in enumerate(
        [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
         (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]
    ):
        out.append(Anchor(i, (sx * half_width, sy * half_width, sz * half_height)))
    return tuple(out)
