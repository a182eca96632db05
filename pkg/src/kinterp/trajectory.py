"""Exposure-ratio recovery and per-pixel constant-acceleration trajectories.

Times are in shutter periods. With the ratio ``lam = t1 / t0`` and
``t0 + t1 = 1`` the four key-states sit at L0 = 0, L1 = t0, L2 = 1 and
L3 = 1 + t0. Trajectories are evaluated on an axis whose origin is L1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .flow import FlowField, check_compatible
from .frames import ExposureConfig

_TIME_EPS = 1e-12


class InsufficientMotionError(ValueError):
    """Too few pixels carry usable motion to estimate the exposure ratio."""


@dataclass(frozen=True)
class LambdaOptions:
    mag_floor: float = 0.5
    cos_floor: float = 0.7
    min_pixels: int = 100
    # relative band used for the confidence score
    agreement: float = 0.10


@dataclass
class LambdaEstimate:
    lam: float
    confidence: float = 1.0
    inlier_fraction: float = 1.0
    per_pixel_ratio: Optional[np.ndarray] = field(default=None, repr=False)
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if not (self.lam > 0.0) or not math.isfinite(self.lam):
            raise InsufficientMotionError(f"non-positive or non-finite ratio {self.lam}")

    @property
    def t0(self) -> float:
        return 1.0 / (1.0 + self.lam)

    @property
    def t1(self) -> float:
        return self.lam / (1.0 + self.lam)

    def exposure(self) -> ExposureConfig:
        return ExposureConfig(self.t0, self.t1)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "t0": self.t0,
            "t1": self.t1,
            "confidence": self.confidence,
            "inlier_fraction": self.inlier_fraction,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half."""
    values = np.asarray(values, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("weighted median of empty data")
    order = np.lexsort((weights, values))
    v = values[order]
    cw = np.cumsum(weights[order])
    idx = int(np.searchsorted(cw, 0.5 * cw[-1], side="left"))
    return float(v[min(idx, v.size - 1)])


def estimate_lambda(s01: FlowField, s12: FlowField, s23: FlowField,
                    opts: Optional[LambdaOptions] = None) -> LambdaEstimate:
    """Robust estimate of lam = t1/t0 from the three displacement fields.

    Each pixel's ratio is twice the projection of S12 on the direction of the
    resultant S01 + S23, divided by the resultant's length. Pixels whose
    resultant is short or whose S12 points away from it are dropped; the
    survivors are combined by a median weighted with the resultant length.
    """
    opts = opts or LambdaOptions()
    check_compatible(s01, s12, s23)
    res = s01.data + s23.data
    res_sq = np.einsum("...k,...k->...", res, res)
    res_len = np.sqrt(res_sq)
    dot = np.einsum("...k,...k->...", s12.data, res)
    s12_len = s12.magnitude()

    moving = res_len >= opts.mag_floor
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(moving & (s12_len > 0), dot / (res_len * s12_len), -1.0)
        ratio = np.where(moving, 2.0 * dot / res_sq, np.nan)
    usable = moving & (cos >= opts.cos_floor) & np.isfinite(ratio)
    count = int(usable.sum())
    if count < max(opts.min_pixels, 1):
        raise InsufficientMotionError(
            f"insufficient motion: {count} usable pixels (need {opts.min_pixels})")

    lam = weighted_median(ratio[usable], res_len[usable])
    if not (lam > 0.0) or not math.isfinite(lam):
        raise InsufficientMotionError(f"insufficient motion: degenerate ratio {lam}")
    r = ratio[usable]
    confidence = float(np.mean(np.abs(r - lam) <= opts.agreement * lam))
    per_pixel = np.where(usable, ratio, np.nan)
    return LambdaEstimate(lam, confidence, count / usable.size, per_pixel)


@dataclass(frozen=True)
class TrajectoryField:
    """Velocity and acceleration per pixel of the anchor frame.

    ``v1`` is in pixels per period and ``accel`` in pixels per period
    squared. Forward trajectories are anchored at L1 and evaluated at
    offsets from L1. Reversed ones are anchored at L2 and take offsets from
    L2 measured in forward time (negative values point back toward L1).
    """

    v1: FlowField
    accel: FlowField
    lam: float
    reversed: bool = False

    def __post_init__(self):
        check_compatible(self.v1, self.accel)
        if not (self.lam > 0.0) or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")

    @property
    def anchor(self) -> str:
        return self.v1.anchor

    @property
    def shape(self):
        return self.v1.shape

    @property
    def t0(self) -> float:
        return 1.0 / (1.0 + self.lam)

    @property
    def t1(self) -> float:
        return self.lam / (1.0 + self.lam)

    @property
    def domain(self):
        t0, t1 = self.t0, self.t1
        if self.reversed:
            return (-t1 - t0, t0)
        return (-t0, t1 + t0)


def fit_trajectory(s01: FlowField, s23: FlowField, lam: float) -> TrajectoryField:
    """Velocity at L1 and constant acceleration from the outer displacements."""
    check_compatible(s01, s23)
    if not (lam > 0.0) or not math.isfinite(lam):
        raise ValueError(f"lambda must be positive and finite, got {lam}")
    accel = (lam + 1.0) * (s23.data - s01.data)
    v1 = lam * s01.data + 0.5 * (s01.data + s23.data)
    a = s01.anchor
    return TrajectoryField(FlowField(v1, a), FlowField(accel, a), float(lam))


def eval_displacement(traj: TrajectoryField, t: float) -> FlowField:
    """Displacement of the anchor frame's pixels after time offset ``t``."""
    lo, hi = traj.domain
    if not (lo - _TIME_EPS <= t <= hi + _TIME_EPS):
        raise ValueError(f"time {t} outside trajectory domain [{lo}, {hi}]")
    data = 0.5 * traj.accel.data * (t * t) + traj.v1.data * t
    return FlowField(data, traj.anchor)


def qvi_displacement(s01: FlowField, s12: FlowField, t: float) -> FlowField:
    """Equal-interval quadratic displacement, ``t`` in [0, 1] between L1 and L2."""
    check_compatible(s01, s12)
    data = 0.5 * (s12.data - s01.data) * (t * t) + 0.5 * (s12.data + s01.data) * t
    return FlowField(data, s01.anchor)


def qvi_trajectory(s01: FlowField, s12: FlowField) -> TrajectoryField:
    """Equal-interval model as a trajectory with lam = 1 on the period axis."""
    s23 = FlowField(2.0 * s12.data - s01.data, s01.anchor)
    return fit_trajectory(s01, s23, 1.0)


@dataclass(frozen=True)
class Timestamp:
    t: float          # from exposure start of the first frame (L0)
    kind: str         # "intra" or "inter"
    t_l1: float       # same instant measured from L1


def schedule_timestamps(config: ExposureConfig, factor: int) -> List[Timestamp]:
    """Output instants k/factor of one shutter period, tagged intra/inter."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    out = []
    for k in range(factor):
        t = k / factor
        kind = "intra" if t <= config.t0 + _TIME_EPS else "inter"
        out.append(Timestamp(t, kind, t - config.t0))
    return out


def degenerate_check(s01: FlowField, s12: FlowField) -> float:
    """Largest gap between the general model at lam = 1 and the equal-interval one."""
    check_compatible(s01, s12)
    s23 = FlowField(2.0 * s12.data - s01.data, s01.anchor)
    traj = fit_trajectory(s01, s23, 1.0)
    worst = 0.0
    for k in range(11):
        t = k / 10
        a = eval_displacement(traj, t * traj.t1).data
        b = qvi_displacement(s01, s12, t).data
        worst = max(worst, float(np.max(np.abs(a - b))) if a.size else 0.0)
    return worst


__all__ = [
    "InsufficientMotionError",
    "LambdaEstimate",
    "LambdaOptions",
    "Timestamp",
    "TrajectoryField",
    "degenerate_check",
    "estimate_lambda",
    "eval_displacement",
    "fit_trajectory",
    "qvi_displacement",
    "qvi_trajectory",
    "schedule_timestamps",
    "weighted_median",
]
