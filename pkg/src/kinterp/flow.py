"""Dense displacement fields: .flo I/O, arithmetic, warping and visualization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .frames import Frame

FLO_MAGIC = 202021.25
_FLO_HEADER = struct.Struct("<fii")
# Refuse headers that would need more than 2**31 floats.
_FLO_MAX_VALUES = 2 ** 31


class FlowError(ValueError):
    """Malformed flow file or incompatible flow fields."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacements (u, v) in pixels, shape H x W x 2.

    ``anchor`` names the key-state whose pixel grid the vectors start from;
    ``span`` optionally labels the (from, to) times the field covers.
    """

    data: np.ndarray
    anchor: str = "L1"
    span: Optional[Tuple[str, str]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 2:
            raise FlowError(f"flow data must be HxWx2, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise FlowError("flow contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        if self.span is not None:
            object.__setattr__(self, "span", tuple(self.span))

    @classmethod
    def zeros(cls, height: int, width: int, anchor: str = "L1", span=None) -> "FlowField":
        return cls(np.zeros((height, width, 2)), anchor, span)

    @classmethod
    def constant(cls, height: int, width: int, uv, anchor: str = "L1", span=None) -> "FlowField":
        data = np.empty((height, width, 2))
        data[...] = np.asarray(uv, dtype=np.float64)
        return cls(data, anchor, span)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @property
    def u(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[..., 0], self.data[..., 1])

    def with_data(self, data, span=None) -> "FlowField":
        return replace(self, data=data, span=span)

    def _check(self, other: "FlowField") -> None:
        check_compatible(self, other)

    def __neg__(self) -> "FlowField":
        span = None if self.span is None else (self.span[1], self.span[0])
        return replace(self, data=-self.data, span=span)

    def __add__(self, other):
        if isinstance(other, FlowField):
            self._check(other)
            return replace(self, data=self.data + other.data, span=None)
        return replace(self, data=self.data + np.asarray(other, dtype=np.float64), span=None)

    def __sub__(self, other):
        if isinstance(other, FlowField):
            self._check(other)
            return replace(self, data=self.data - other.data, span=None)
        return replace(self, data=self.data - np.asarray(other, dtype=np.float64), span=None)

    def __mul__(self, scalar):
        return replace(self, data=self.data * np.asarray(scalar, dtype=np.float64), span=None)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.anchor == other.anchor and np.array_equal(self.data, other.data)

    __hash__ = None


def check_compatible(*fields: FlowField) -> None:
    """Raise FlowError unless all fields share dimensions and anchor grid."""
    first = fields[0]
    for f in fields[1:]:
        if f.shape != first.shape:
            raise FlowError(f"dimension mismatch: {first.shape} vs {f.shape}")
        if f.anchor != first.anchor:
            raise FlowError(f"anchor mismatch: {first.anchor!r} vs {f.anchor!r}")


def read_flo(path, anchor: str = "L1", span=None) -> FlowField:
    """Read a Middlebury ``.flo`` file."""
    raw = Path(path).read_bytes()
    if len(raw) < _FLO_HEADER.size:
        raise FlowError(f"{path}: truncated header")
    magic, width, height = _FLO_HEADER.unpack_from(raw)
    if magic != FLO_MAGIC:
        raise FlowError(f"{path}: bad magic {magic!r}")
    if width < 0 or height < 0 or width * height * 2 >= _FLO_MAX_VALUES:
        raise FlowError(f"{path}: invalid dimensions {width}x{height}")
    count = width * height * 2
    payload = raw[_FLO_HEADER.size:]
    if len(payload) < count * 4:
        raise FlowError(f"{path}: truncated payload ({len(payload)} of {count * 4} bytes)")
    data = np.frombuffer(payload, dtype="<f4", count=count).reshape(height, width, 2)
    return FlowField(data.astype(np.float64), anchor, span)


def flo_bytes(field: FlowField) -> bytes:
    data32 = field.data.astype("<f4")
    if not np.all(np.isfinite(data32)):
        raise FlowError("flow values overflow 32-bit floats")
    return _FLO_HEADER.pack(FLO_MAGIC, field.width, field.height) + data32.tobytes(order="C")


def write_flo(field: FlowField, path) -> None:
    """Write ``field`` as a Middlebury ``.flo`` file (values rounded to float32)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(flo_bytes(field))


def displacements_from_flows(f10: FlowField, f12: FlowField) -> Tuple[FlowField, FlowField]:
    """Displacements S01 = -f10 and S12 = f12 on the shared anchor grid."""
    check_compatible(f10, f12)
    a = f10.anchor
    s01 = FlowField(-f10.data, a, ("L0", "L1"))
    s12 = FlowField(f12.data.copy(), a, ("L1", "L2"))
    return s01, s12


def compose_s23(f13: FlowField, f12: FlowField) -> FlowField:
    """Second-interval motion of the anchor frame's pixels: f13 - f12."""
    check_compatible(f13, f12)
    return FlowField(f13.data - f12.data, f13.anchor, ("L2", "L3"))


def _bilinear_sample(arr: np.ndarray, flow: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    x = np.clip(gx + flow[..., 0], 0.0, w - 1)
    y = np.clip(gy + flow[..., 1], 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    top = arr[y0, x0] * (1.0 - wx) + arr[y0, x1] * wx
    bottom = arr[y1, x0] * (1.0 - wx) + arr[y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


WarpInput = Union[FlowField, Frame, np.ndarray]


def backward_warp_field(field: WarpInput, sampler_flow: FlowField) -> WarpInput:
    """Sample ``field`` at p + sampler_flow(p), bilinear, clamped to the border.

    Works on flow fields, frames and raw H x W (x C) arrays; the result has
    the input's type and lives on the sampler flow's grid.
    """
    if isinstance(field, FlowField):
        arr = field.data
    elif isinstance(field, Frame):
        arr = field.data
    else:
        arr = np.asarray(field, dtype=np.float64)
    if arr.shape[:2] != sampler_flow.shape:
        raise FlowError(f"dimension mismatch: {arr.shape[:2]} vs {sampler_flow.shape}")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    out = _bilinear_sample(arr, sampler_flow.data)
    if squeeze:
        out = out[..., 0]
    if isinstance(field, FlowField):
        return FlowField(out, sampler_flow.anchor)
    if isinstance(field, Frame):
        return Frame.clamped(out)
    return out


def _hsv_to_rgb(h, s, v):
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel, 0] = np.broadcast_to(r, h.shape)[sel]
        rgb[sel, 1] = np.broadcast_to(g, h.shape)[sel]
        rgb[sel, 2] = np.broadcast_to(b, h.shape)[sel]
    return rgb


def flow_to_color(field: FlowField, max_mag: Optional[float] = None) -> Frame:
    """Color-wheel rendering: hue from direction, saturation from magnitude.

    ``max_mag`` defaults to the field's 99th-percentile magnitude.
    """
    mag = field.magnitude()
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99))
    if max_mag <= 0:
        max_mag = 1.0
    hue = np.mod(np.arctan2(field.v, field.u) / (2 * np.pi), 1.0)
    sat = np.clip(mag / max_mag, 0.0, 1.0)
    return Frame.clamped(_hsv_to_rgb(hue, sat, np.ones_like(hue)))
