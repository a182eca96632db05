"""Training-free correction of the composed second-interval flow.

The corrected flow is pulled toward the closed-form trajectory target
(2/lam) * f12 + f10, which equals S23 exactly under constant acceleration.
The pull is gated by how well the raw flow agrees with the target in
direction and distance, so badly disagreeing pixels are left alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .flow import FlowField, check_compatible, compose_s23
from .trajectory import LambdaEstimate, LambdaOptions, estimate_lambda

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineOptions:
    tau_px: float = 4.0
    mag_floor: float = 0.5
    max_iters: int = 8
    tol: float = 1e-4


def _check_lambda(lam: float) -> None:
    if not (lam > 0.0) or not math.isfinite(lam):
        raise ValueError(f"lambda must be positive and finite, got {lam}")


def refinement_target(f10: FlowField, f12: FlowField, lam: float) -> FlowField:
    """Trajectory-implied S23: (2/lam) * f12 + f10."""
    _check_lambda(lam)
    check_compatible(f10, f12)
    return FlowField((2.0 / lam) * f12.data + f10.data, f10.anchor, ("L2", "L3"))


def refine_s23(f10: FlowField, f12: FlowField, s23_raw: FlowField, lam: float,
               opts: Optional[RefineOptions] = None) -> Tuple[FlowField, np.ndarray]:
    """Blend ``s23_raw`` toward the trajectory target.

    Returns the refined field and the per-pixel blend weight, which doubles
    as a confidence map in [0, 1].
    """
    opts = opts or RefineOptions()
    check_compatible(f10, f12, s23_raw)
    target = refinement_target(f10, f12, lam).data
    raw = s23_raw.data

    t_len = np.hypot(target[..., 0], target[..., 1])
    r_len = np.hypot(raw[..., 0], raw[..., 1])
    dot = np.einsum("...k,...k->...", raw, target)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where((t_len > 0) & (r_len > 0), dot / (t_len * r_len), 0.0)
    dist = np.hypot(raw[..., 0] - target[..., 0], raw[..., 1] - target[..., 1])
    w = np.clip(cos, 0.0, 1.0) * np.exp(-dist / opts.tau_px)
    w = np.where(t_len >= opts.mag_floor, w, 0.0)
    # w == 1 must reproduce the target bit-exactly
    out = np.where((w == 1.0)[..., None], target, w[..., None] * target + (1.0 - w[..., None]) * raw)
    return FlowField(out, s23_raw.anchor, ("L2", "L3")), w


def joint_estimate(f10: FlowField, f12: FlowField, f13: FlowField,
                   max_iters: Optional[int] = None, tol: Optional[float] = None,
                   lambda_opts: Optional[LambdaOptions] = None,
                   refine_opts: Optional[RefineOptions] = None,
                   ) -> Tuple[LambdaEstimate, FlowField]:
    """Alternate ratio estimation and S23 refinement until the ratio settles.

    Each round refines the composed f13 - f12 against the latest ratio and
    re-estimates the ratio from the refined field. If the updates start to
    alternate in sign, the new ratio is averaged with the previous one.
    """
    refine_opts = refine_opts or RefineOptions()
    max_iters = refine_opts.max_iters if max_iters is None else max_iters
    tol = refine_opts.tol if tol is None else tol
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    s01 = -f10
    s23_raw = compose_s23(f13, f12)
    est = estimate_lambda(s01, f12, s23_raw, lambda_opts)
    lam = est.lam
    s23 = s23_raw
    prev_step = 0.0
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        s23, _ = refine_s23(f10, f12, s23_raw, lam, refine_opts)
        est = estimate_lambda(s01, f12, s23, lambda_opts)
        new_lam = est.lam
        step = new_lam - lam
        if prev_step * step < 0:
            new_lam = 0.5 * (new_lam + lam)
            step = new_lam - lam
        log.debug("joint_estimate iter %d: lambda %.8g -> %.8g", iters, lam, new_lam)
        lam, prev_step = new_lam, step
        if abs(step) < tol:
            converged = True
            break
    est.lam = lam
    est.converged = converged
    est.iterations = iters
    if not converged:
        log.warning("joint_estimate did not converge in %d iterations (lambda=%.6g)", max_iters, lam)
    return est, s23
