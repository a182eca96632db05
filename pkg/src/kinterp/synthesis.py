"""Frame rendering from key-states and fitted trajectories.

Rendering uses bilinear forward splatting with a fixed accumulation order,
so identical inputs always give bit-identical frames. There is no
z-buffer: occlusion holes of one source are filled from the other source,
and anything still missing takes the nearest valid pixel.
"""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .flow import FlowError, FlowField, check_compatible, compose_s23
from .frames import ExposureConfig, Frame, KeyStateQuad
from .refine import RefineOptions, joint_estimate, refine_s23
from .trajectory import (
    InsufficientMotionError,
    LambdaEstimate,
    LambdaOptions,
    TrajectoryField,
    estimate_lambda,
    eval_displacement,
    fit_trajectory,
    qvi_trajectory,
    schedule_timestamps,
)

log = logging.getLogger(__name__)

W_FLOOR = 1e-3
_TIME_EPS = 1e-12


@dataclass(frozen=True)
class SplatResult:
    """Un-normalized splat: weighted color sums and the summed weights."""

    accum: np.ndarray
    weight: np.ndarray

    def holes(self, w_floor: float = W_FLOOR) -> np.ndarray:
        return self.weight < w_floor

    def normalized(self, w_floor: float = W_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
        """Return (image, hole mask); hole pixels are zero."""
        holes = self.holes(w_floor)
        safe = np.where(holes, 1.0, self.weight)
        img = self.accum / safe[..., None]
        img[holes] = 0.0
        return img, holes


def forward_splat(src: Union[Frame, np.ndarray], flow: FlowField) -> SplatResult:
    """Deposit each source pixel at p + flow(p) onto its four neighbours."""
    arr = src.data if isinstance(src, Frame) else np.asarray(src, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w = arr.shape[:2]
    if (h, w) != flow.shape:
        raise FlowError(f"dimension mismatch: {(h, w)} vs {flow.shape}")
    c = arr.shape[2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    x = gx + flow.u
    y = gy + flow.v
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    # corner order nw, ne, sw, se; per-pixel deposits stay in row-major order
    xs = np.stack([x0, x0 + 1, x0, x0 + 1], axis=-1).reshape(-1)
    ys = np.stack([y0, y0, y0 + 1, y0 + 1], axis=-1).reshape(-1)
    ws = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1).reshape(-1)
    vals = np.repeat(arr.reshape(-1, c), 4, axis=0)
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    idx = (ys * w + xs)[inside]
    ws = ws[inside]
    vals = vals[inside]

    weight = np.bincount(idx, weights=ws, minlength=h * w).reshape(h, w)
    accum = np.empty((h, w, c))
    for k in range(c):
        accum[..., k] = np.bincount(idx, weights=ws * vals[:, k], minlength=h * w).reshape(h, w)
    return SplatResult(accum, weight)


def _nearest_fill(img: np.ndarray, holes: np.ndarray) -> np.ndarray:
    if not holes.any():
        return img
    if holes.all():
        raise ValueError("no valid pixels to fill holes from")
    _, (iy, ix) = ndimage.distance_transform_edt(holes, return_indices=True)
    return img[iy, ix]


def _blend(a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray], tau: float,
           fillers: List[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """(1 - tau) * a + tau * b with cross-filling, then fillers, then nearest."""
    img_a, hole_a = a
    img_b, hole_b = b
    img_a = np.where(hole_a[..., None], img_b, img_a)
    img_b = np.where(hole_b[..., None], img_a, img_b)
    if tau == 0.0:
        out = img_a.copy()
    elif tau == 1.0:
        out = img_b.copy()
    else:
        # where both sources agree the blend must reproduce them exactly
        out = np.where(img_a == img_b, img_a, (1.0 - tau) * img_a + tau * img_b)
    holes = hole_a & hole_b
    for img_f, hole_f in fillers:
        if not holes.any():
            break
        take = holes & ~hole_f
        out[take] = img_f[take]
        holes = holes & hole_f
    return _nearest_fill(out, holes)


def _check_pair(quad: KeyStateQuad, traj_fwd: TrajectoryField, traj_bwd: TrajectoryField) -> None:
    if traj_fwd.shape != quad.shape or traj_bwd.shape != quad.shape:
        raise FlowError(f"dimension mismatch between key-states {quad.shape} and trajectories")
    if traj_fwd.reversed or not traj_bwd.reversed:
        raise ValueError("expected a forward (L1) and a reversed (L2) trajectory")
    if abs(traj_fwd.lam - traj_bwd.lam) > 1e-12 * max(1.0, traj_fwd.lam):
        raise ValueError("forward and reversed trajectories disagree on lambda")


def transfer_indices(src: Frame, dst: Frame, disp: FlowField) -> np.ndarray:
    """For each ``dst`` pixel, the flat index of the ``src`` pixel that lands on it.

    ``disp`` moves ``src`` pixels to ``dst``'s instant. When several source
    pixels round to the same site, the one whose colour best matches ``dst``
    there wins; sites nobody reaches take the answer of the nearest reached
    site. Ties resolve by source index, so the result is deterministic.
    """
    h, w = disp.shape
    gy, gx = np.mgrid[0:h, 0:w]
    qx = np.rint(gx + disp.u).astype(np.int64)
    qy = np.rint(gy + disp.v).astype(np.int64)
    inside = ((qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)).ravel()
    src_idx = np.arange(h * w)[inside]
    q = (qy * w + qx).ravel()[inside]
    diff = np.abs(src.data.reshape(-1, 3)[src_idx] - dst.data.reshape(-1, 3)[q]).sum(axis=1)
    order = np.lexsort((src_idx, diff, q))
    q_sorted = q[order]
    first = np.ones(q_sorted.size, dtype=bool)
    first[1:] = q_sorted[1:] != q_sorted[:-1]
    chosen = np.full(h * w, -1, dtype=np.int64)
    chosen[q_sorted[first]] = src_idx[order][first]
    chosen = chosen.reshape(h, w)
    missing = chosen < 0
    if missing.all():
        return np.arange(h * w).reshape(h, w)
    if missing.any():
        _, (iy, ix) = ndimage.distance_transform_edt(missing, return_indices=True)
        chosen = chosen[iy, ix]
    return chosen


def _transferred(traj: TrajectoryField, idx: np.ndarray, shift: float, t: float,
                 anchor: str) -> FlowField:
    """Displacement after ``t`` of pixels sitting at time ``shift`` on ``traj``.

    Re-anchors the constant-acceleration model: velocity becomes
    v + a * shift and the acceleration is unchanged.
    """
    v = traj.v1.data.reshape(-1, 2)[idx]
    a = traj.accel.data.reshape(-1, 2)[idx]
    return FlowField(0.5 * a * (t * t) + (v + a * shift) * t, anchor)


def render_intermediate(quad: KeyStateQuad, traj_fwd: TrajectoryField, traj_bwd: TrajectoryField,
                        t: float, w_floor: float = W_FLOOR) -> Frame:
    """Render the instant ``t`` (offset from L1, in periods).

    Between L1 and L2 the two key-states are splatted toward ``t`` and
    blended by the elapsed fraction of the gap. Inside the first exposure
    (t < 0) the pair (L0, L1) is used, with L0's motion taken from the L1
    trajectory re-anchored on L0's grid. Inside the second exposure
    (t > t1) the pair (L2, L3) is handled the same way.
    """
    _check_pair(quad, traj_fwd, traj_bwd)
    lo, hi = traj_fwd.domain
    if not (lo - _TIME_EPS <= t <= hi + _TIME_EPS):
        raise ValueError(f"time {t} outside rendering domain [{lo}, {hi}]")
    t0, t1 = traj_fwd.t0, traj_fwd.t1
    t = min(max(t, lo), hi)
    if abs(t - lo) <= _TIME_EPS:
        return quad.l0
    if abs(t - hi) <= _TIME_EPS:
        return quad.l3

    def splat(src, disp):
        return forward_splat(src, disp).normalized(w_floor)

    if t <= 0.0:
        idx = transfer_indices(quad.l1, quad.l0, eval_displacement(traj_fwd, -t0))
        a = splat(quad.l0, _transferred(traj_fwd, idx, -t0, t + t0, "L0"))
        b = splat(quad.l1, eval_displacement(traj_fwd, t))
        tau = (t + t0) / t0
        filler = [splat(quad.l2, eval_displacement(traj_bwd, t - t1))]
    elif t <= t1:
        a = splat(quad.l1, eval_displacement(traj_fwd, t))
        b = splat(quad.l2, eval_displacement(traj_bwd, t - t1))
        tau = min(max(t / t1, 0.0), 1.0)
        filler = []
    else:
        idx = transfer_indices(quad.l2, quad.l3, eval_displacement(traj_bwd, t0))
        a = splat(quad.l2, eval_displacement(traj_bwd, t - t1))
        b = splat(quad.l3, _transferred(traj_bwd, idx, t0, t - t1 - t0, "L3"))
        tau = (t - t1) / t0
        filler = [splat(quad.l1, eval_displacement(traj_fwd, t))]
    return Frame.clamped(_blend(a, b, tau, filler))


def reversed_trajectory(s01: FlowField, s12: FlowField, s23: FlowField, lam: float) -> TrajectoryField:
    """Trajectory of L2's pixels fitted on the time-reversed key-state sequence.

    The inputs are displacements of the reversed sequence (L3, L2, L1, L0),
    all anchored on L2's grid. The result takes forward-time offsets from L2.
    """
    check_compatible(s01, s12, s23)
    rev = fit_trajectory(s01, s23, lam)
    return TrajectoryField(-rev.v1, rev.accel, rev.lam, reversed=True)


@dataclass(frozen=True)
class QuadFlows:
    """Flows for one key-state quad.

    ``f10``, ``f12``, ``f13`` start on L1's grid and point to L0, L2, L3.
    ``r10``, ``r12``, ``r13`` start on L2's grid and point to L3, L1, L0,
    i.e. the same roles in the reversed sequence.
    """

    f10: FlowField
    f12: FlowField
    f13: FlowField
    r10: FlowField
    r12: FlowField
    r13: FlowField

    def __post_init__(self):
        check_compatible(self.f10, self.f12, self.f13)
        check_compatible(self.r10, self.r12, self.r13)
        if self.f10.shape != self.r10.shape:
            raise FlowError("forward and reversed flows differ in size")

    @property
    def shape(self):
        return self.f10.shape


@dataclass(frozen=True)
class ModelOptions:
    qvi: bool = False
    refine: bool = True
    lambda_opts: LambdaOptions = LambdaOptions()
    refine_opts: RefineOptions = RefineOptions()


def estimate_for_quad(flows: QuadFlows, opts: ModelOptions) -> Tuple[LambdaEstimate, FlowField]:
    """Exposure ratio and the (possibly refined) forward S23 for one quad."""
    if opts.refine:
        return joint_estimate(flows.f10, flows.f12, flows.f13,
                              lambda_opts=opts.lambda_opts, refine_opts=opts.refine_opts)
    s23 = compose_s23(flows.f13, flows.f12)
    return estimate_lambda(-flows.f10, flows.f12, s23, opts.lambda_opts), s23


def build_trajectories(flows: QuadFlows, lam: float, opts: ModelOptions,
                       s23: Optional[FlowField] = None) -> Tuple[TrajectoryField, TrajectoryField]:
    """Forward (L1) and reversed (L2) trajectories for one quad."""
    if opts.qvi:
        fwd = qvi_trajectory(-flows.f10, flows.f12)
        rev = qvi_trajectory(-flows.r10, flows.r12)
        return fwd, TrajectoryField(-rev.v1, rev.accel, rev.lam, reversed=True)

    if s23 is None:
        s23 = compose_s23(flows.f13, flows.f12)
        if opts.refine:
            s23, _ = refine_s23(flows.f10, flows.f12, s23, lam, opts.refine_opts)
    r23 = compose_s23(flows.r13, flows.r12)
    if opts.refine:
        r23, _ = refine_s23(flows.r10, flows.r12, r23, lam, opts.refine_opts)
    fwd = fit_trajectory(-flows.f10, s23, lam)
    bwd = reversed_trajectory(-flows.r10, flows.r12, r23, lam)
    return fwd, bwd


@dataclass(frozen=True)
class OutputFrame:
    frame: Frame
    time: float         # absolute, in periods from the first exposure start
    kind: str           # "intra" or "inter"
    quad_index: int
    offset: float       # within the period, from the exposure start
    lam: float


class QuadError(RuntimeError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"quad {index}: {cause}")
        self.index = index
        self.cause = cause


def interpolate_sequence(items: Iterable[Tuple[KeyStateQuad, QuadFlows]], factor: int,
                         lam: Optional[float] = None, opts: Optional[ModelOptions] = None,
                         threads: int = 1, smooth: int = 0, on_degenerate: str = "error",
                         w_floor: float = W_FLOOR) -> Iterator[OutputFrame]:
    """Render ``factor`` frames per shutter period for a stream of quads.

    Quad k covers the period starting at its L0, so consecutive quads never
    emit the shared key-state twice. ``lam`` fixes the exposure ratio; in
    equal-interval mode (``opts.qvi``) it is forced to 1. ``smooth`` > 1
    replaces each estimate with the median of the last ``smooth`` ones.
    With ``on_degenerate="previous"`` a quad without usable motion reuses
    the previous quad's ratio instead of failing.
    """
    opts = opts or ModelOptions()
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if on_degenerate not in ("error", "previous"):
        raise ValueError(f"unknown on_degenerate policy {on_degenerate!r}")
    history: List[float] = []
    shape = None
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for k, (quad, flows) in enumerate(items):
            try:
                if shape is None:
                    shape = quad.shape
                if quad.shape != shape or flows.shape != shape:
                    raise FlowError(f"dimension mismatch: expected {shape}")
                s23 = None
                if opts.qvi:
                    quad_lam = 1.0
                elif lam is not None:
                    quad_lam = float(lam)
                else:
                    try:
                        est, s23 = estimate_for_quad(flows, opts)
                        quad_lam = est.lam
                    except InsufficientMotionError:
                        if on_degenerate == "error" or not history:
                            raise
                        log.warning("quad %d: insufficient motion, reusing lambda %.6g", k, history[-1])
                        quad_lam = history[-1]
                    history.append(quad_lam)
                    if smooth > 1:
                        smoothed = statistics.median(history[-smooth:])
                        if smoothed != quad_lam:
                            quad_lam, s23 = smoothed, None
                fwd, bwd = build_trajectories(flows, quad_lam, opts, s23)
                quad = quad.with_times(fwd.t0)
                stamps = schedule_timestamps(ExposureConfig.from_lambda(quad_lam), factor)
                frames = list(pool.map(
                    lambda s: render_intermediate(quad, fwd, bwd, s.t_l1, w_floor), stamps))
            except QuadError:
                raise
            except Exception as exc:
                raise QuadError(k, exc) from exc
            for s, frame in zip(stamps, frames):
                yield OutputFrame(frame, k + s.t, s.kind, k, s.t, quad_lam)
