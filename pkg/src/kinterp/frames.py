"""Frame and key-state containers, PNG I/O and the identity key-state path."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError


class FrameError(ValueError):
    """Invalid frame content, dimensions or file."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class Frame:
    """An H x W x 3 image with real values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise FrameError(f"frame data must be HxWx3, got {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise FrameError("frame has zero dimensions")
        if not np.all(np.isfinite(data)):
            raise FrameError("frame contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise FrameError("frame values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def clamped(cls, data) -> "Frame":
        """Build a frame from arbitrary real data, clamping to [0, 1]."""
        return cls(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0))

    @classmethod
    def constant(cls, height: int, width: int, value=0.5) -> "Frame":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy())

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    def to_u8(self, gamma: Optional[float] = None) -> np.ndarray:
        data = self.data
        if gamma:
            data = data ** (1.0 / gamma)
        return np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def load_frame(path, gamma: Optional[float] = None) -> Frame:
    """Load an 8-bit RGB raster image, mapping each code v to v/255.

    With ``gamma`` set the values are additionally linearized as
    ``(v/255) ** gamma``. The default (None) keeps plain pixel values.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such frame file: {path}")
    try:
        with Image.open(path) as img:
            if img.mode not in ("RGB", "RGBA", "L", "P"):
                raise FrameError(f"unsupported image mode {img.mode!r} in {path}")
            if img.mode == "P":
                img = img.convert("RGBA" if "transparency" in img.info else "RGB")
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FrameError(f"unsupported image format: {path}") from exc
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise FrameError(f"zero-sized image: {path}")
    data = arr.astype(np.float64) / 255.0
    if gamma:
        data = data ** gamma
    return Frame(data)


def save_frame(frame: Frame, path, gamma: Optional[float] = None) -> None:
    """Write ``frame`` as an 8-bit RGB PNG (values rounded to the u8 lattice)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.to_u8(gamma), mode="RGB").save(path, format="PNG")


def save_gray(values: np.ndarray, path) -> None:
    """Write a single-channel map in [0, 1] as an 8-bit grayscale PNG."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint(values * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


@dataclass(frozen=True)
class ExposureConfig:
    """Exposure duration ``t0`` and gap ``t1`` as fractions of one shutter period."""

    t0: float
    t1: float
    m: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        if not (self.t0 > 0.0) or not (self.t1 >= 0.0):
            raise ValueError(f"need t0 > 0 and t1 >= 0, got t0={self.t0}, t1={self.t1}")
        if abs(self.t0 + self.t1 - 1.0) > 1e-9:
            raise ValueError(f"t0 + t1 must equal 1, got {self.t0 + self.t1}")
        if (self.m is None) != (self.n is None):
            raise ValueError("m and n must be given together")
        if self.m is not None:
            if self.m < 1 or self.n < 0:
                raise ValueError(f"need m >= 1 and n >= 0, got m={self.m}, n={self.n}")
            total = self.m + self.n
            if abs(self.t0 - self.m / total) > 1e-9 or abs(self.t1 - self.n / total) > 1e-9:
                raise ValueError("t0/t1 inconsistent with the (m, n) pattern")

    @classmethod
    def from_pattern(cls, m: int, n: int) -> "ExposureConfig":
        if m < 1 or n < 0:
            raise ValueError(f"need m >= 1 and n >= 0, got m={m}, n={n}")
        return cls(m / (m + n), n / (m + n), m, n)

    @classmethod
    def from_lambda(cls, lam: float) -> "ExposureConfig":
        if not (lam >= 0.0) or not math.isfinite(lam):
            raise ValueError(f"lambda must be finite and >= 0, got {lam}")
        return cls(1.0 / (1.0 + lam), lam / (1.0 + lam))

    @property
    def lam(self) -> float:
        return self.t1 / self.t0


@dataclass(frozen=True)
class KeyStateQuad:
    """Instantaneous states at the start/end of two consecutive exposures.

    ``times`` stays None until the exposure ratio is known; see :meth:`with_times`.
    """

    l0: Frame
    l1: Frame
    l2: Frame
    l3: Frame
    times: Optional[Tuple[float, float, float, float]] = None

    def __post_init__(self):
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise FrameError(f"key-states have mismatched dimensions: {sorted(shapes)}")
        if self.times is not None:
            a, b, c, d = self.times
            if not (a < b <= c < d):
                raise ValueError(f"key-state times must increase, got {self.times}")
            t0, t1 = b - a, c - b
            if abs((d - c) - t0) > 1e-9:
                raise ValueError("exposure durations of the two frames differ")
            if abs(t0 + t1 - 1.0) > 1e-9:
                raise ValueError("key-state times do not span one shutter period")

    @property
    def frames(self) -> Tuple[Frame, Frame, Frame, Frame]:
        return (self.l0, self.l1, self.l2, self.l3)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.l0.shape

    def with_times(self, t0: float) -> "KeyStateQuad":
        return replace(self, times=(0.0, t0, 1.0, 1.0 + t0))

    def reversed(self) -> "KeyStateQuad":
        """The same states in reverse temporal order (L3, L2, L1, L0)."""
        return KeyStateQuad(self.l3, self.l2, self.l1, self.l0)


def key_states_identity(frame: Frame) -> Tuple[Frame, Frame]:
    """Start and end state of a sharp frame: both are the frame itself."""
    return frame, frame


def key_state_paths(directory, index: int) -> Tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{index:06d}_s.png", directory / f"{index:06d}_e.png"


def import_key_states(directory, index: int, gamma: Optional[float] = None) -> KeyStateQuad:
    """Assemble (L0, L1, L2, L3) from the start/end files of frames ``index`` and ``index + 1``."""
    s1, e1 = key_state_paths(directory, index)
    s2, e2 = key_state_paths(directory, index + 1)
    frames = [load_frame(p, gamma) for p in (s1, e1, s2, e2)]
    return KeyStateQuad(*frames)


def export_key_states(directory, index: int, start: Frame, end: Frame) -> None:
    s, e = key_state_paths(directory, index)
    save_frame(start, s)
    save_frame(end, e)
