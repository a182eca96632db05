"""Frame interpolation for videos with unknown exposure-to-gap timing."""

from .flow import FlowField, compose_s23, displacements_from_flows, read_flo, write_flo
from .frames import ExposureConfig, Frame, KeyStateQuad, load_frame, save_frame
from .metrics import psnr, ssim
from .refine import joint_estimate, refine_s23, refinement_target
from .synthesis import QuadFlows, interpolate_sequence, render_intermediate
from .trajectory import (
    InsufficientMotionError,
    LambdaEstimate,
    TrajectoryField,
    estimate_lambda,
    eval_displacement,
    fit_trajectory,
    qvi_displacement,
    schedule_timestamps,
)

__version__ = "0.1.0"

__all__ = [
    "ExposureConfig",
    "FlowField",
    "Frame",
    "InsufficientMotionError",
    "KeyStateQuad",
    "LambdaEstimate",
    "QuadFlows",
    "TrajectoryField",
    "compose_s23",
    "displacements_from_flows",
    "estimate_lambda",
    "eval_displacement",
    "fit_trajectory",
    "interpolate_sequence",
    "joint_estimate",
    "load_frame",
    "psnr",
    "qvi_displacement",
    "read_flo",
    "refine_s23",
    "refinement_target",
    "render_intermediate",
    "save_frame",
    "schedule_timestamps",
    "ssim",
    "write_flo",
]
