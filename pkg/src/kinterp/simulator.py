"""Ground-truth factory: analytic constant-acceleration scenes and dataset synthesis."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .flow import FlowField
from .frames import Frame, KeyStateQuad

# Texture wavelengths in pixels; long enough that bilinear resampling stays
# accurate to ~1e-3 on sprite interiors.
MIN_WAVELENGTH = 24.0
MAX_WAVELENGTH = 64.0
N_WAVES = 6


class SceneError(ValueError):
    """Invalid scene description or query outside its validity window."""


class Texture:
    """Band-limited procedural texture: a few random plane waves per channel.

    Evaluated analytically at continuous coordinates, so it can be sampled
    at any sub-pixel offset without resampling error.
    """

    def __init__(self, seed: int, contrast: float = 0.3):
        rng = np.random.default_rng(seed)
        self.base = rng.uniform(0.35, 0.65, size=3)
        wavelength = rng.uniform(MIN_WAVELENGTH, MAX_WAVELENGTH, size=(3, N_WAVES))
        angle = rng.uniform(0.0, 2 * np.pi, size=(3, N_WAVES))
        k = 2 * np.pi / wavelength
        self.kx = k * np.cos(angle)
        self.ky = k * np.sin(angle)
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(3, N_WAVES))
        self.amp = np.full((3, N_WAVES), contrast / N_WAVES)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape + (3,))
        for c in range(3):
            acc = np.full(x.shape, self.base[c])
            for j in range(N_WAVES):
                acc += self.amp[c, j] * np.cos(self.kx[c, j] * x + self.ky[c, j] * y + self.phase[c, j])
            out[..., c] = acc
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class Sprite:
    """A textured disk moving with constant acceleration.

    Position at time t is ``position + velocity * t + accel * t**2 / 2``
    (pixels, periods). The texture is attached to the sprite.
    """

    seed: int
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    accel: Tuple[float, float] = (0.0, 0.0)
    radius: float = 16.0

    def center(self, t: float) -> np.ndarray:
        p = np.asarray(self.position, dtype=np.float64)
        v = np.asarray(self.velocity, dtype=np.float64)
        a = np.asarray(self.accel, dtype=np.float64)
        return p + v * t + 0.5 * a * t * t


@dataclass(frozen=True)
class SceneSpec:
    """Analytic scene: textured background plus sprites, valid on [t_start, t_end].

    ``background_seed`` None gives a black background.
    """

    width: int
    height: int
    sprites: Tuple[Sprite, ...] = ()
    background_seed: Optional[int] = 0
    supersample: int = 4
    t_start: float = -1.0
    t_end: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "sprites", tuple(
            s if isinstance(s, Sprite) else Sprite(**s) for s in self.sprites))
        if self.width < 1 or self.height < 1:
            raise SceneError("scene needs positive dimensions")
        if self.supersample < 1:
            raise SceneError("supersample must be >= 1")
        if not self.t_start < self.t_end:
            raise SceneError("empty validity window")
        for i, s in enumerate(self.sprites):
            lo, hi = self._extent(s)
            if (lo[0] < s.radius or lo[1] < s.radius
                    or hi[0] > self.width - s.radius or hi[1] > self.height - s.radius):
                raise SceneError(f"sprite {i} leaves the image within the validity window")

    def _extent(self, s: Sprite):
        times = [self.t_start, self.t_end]
        for axis in range(2):
            if s.accel[axis] != 0:
                tv = -s.velocity[axis] / s.accel[axis]
                if self.t_start < tv < self.t_end:
                    times.append(tv)
        pts = np.array([s.center(t) for t in times])
        return pts.min(axis=0), pts.max(axis=0)

    def check_time(self, t: float) -> None:
        if not (self.t_start - 1e-12 <= t <= self.t_end + 1e-12):
            raise SceneError(f"time {t} outside scene window [{self.t_start}, {self.t_end}]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["sprites"] = tuple(Sprite(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
                             for s in d.get("sprites", ()))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _sample_offsets(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n - 0.5


def _render_points(spec: SceneSpec, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if spec.background_seed is None:
        out = np.zeros(x.shape + (3,))
    else:
        out = Texture(spec.background_seed)(x, y)
    for s in spec.sprites:
        cx, cy = s.center(t)
        dx = x - cx
        dy = y - cy
        inside = dx * dx + dy * dy <= s.radius * s.radius
        if inside.any():
            out[inside] = Texture(s.seed)(dx[inside], dy[inside])
    return out


def gen_scene_frame(spec: SceneSpec, t: float) -> Frame:
    """Render the scene at time ``t``; pixel (x, y) integrates [x-0.5, x+0.5] box."""
    spec.check_time(t)
    n = spec.supersample
    gy, gx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    acc = np.zeros((spec.height, spec.width, 3))
    offs = _sample_offsets(n)
    for oy in offs:
        for ox in offs:
            acc += _render_points(spec, t, gx + ox, gy + oy)
    return Frame.clamped(acc / (n * n))


def visible_sprite(spec: SceneSpec, t: float) -> np.ndarray:
    """Index of the top sprite covering each pixel centre at ``t`` (-1: background)."""
    gy, gx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    label = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for i, s in enumerate(spec.sprites):
        cx, cy = s.center(t)
        label[(gx - cx) ** 2 + (gy - cy) ** 2 <= s.radius ** 2] = i
    return label


def gen_scene_flow(spec: SceneSpec, t_from: float, t_to: float, anchor: str = "L1",
                   span=None) -> FlowField:
    """Exact displacement between ``t_from`` and ``t_to`` of what is visible at ``t_from``."""
    spec.check_time(t_from)
    spec.check_time(t_to)
    label = visible_sprite(spec, t_from)
    data = np.zeros((spec.height, spec.width, 2))
    for i, s in enumerate(spec.sprites):
        data[label == i] = s.center(t_to) - s.center(t_from)
    return FlowField(data, anchor, span)


def sprite_interiors(spec: SceneSpec, t: float, margin: float = 2.0) -> np.ndarray:
    """Pixels at least ``margin`` px inside some sprite's rim and not covered by another."""
    gy, gx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    label = visible_sprite(spec, t)
    mask = np.zeros(label.shape, dtype=bool)
    for i, s in enumerate(spec.sprites):
        cx, cy = s.center(t)
        deep = (gx - cx) ** 2 + (gy - cy) ** 2 <= (s.radius - margin) ** 2
        mask |= deep & (label == i)
    return mask


def scene_key_times(t0: float, period: int = 0) -> Tuple[float, float, float, float]:
    base = float(period)
    return (base, base + t0, base + 1.0, base + 1.0 + t0)


def scene_quad(spec: SceneSpec, t0: float, period: int = 0):
    """Key-state quad and exact flows of period ``period`` of an analytic scene."""
    from .synthesis import QuadFlows

    tl0, tl1, tl2, tl3 = scene_key_times(t0, period)
    quad = KeyStateQuad(*(gen_scene_frame(spec, t) for t in (tl0, tl1, tl2, tl3)))
    flows = QuadFlows(
        f10=gen_scene_flow(spec, tl1, tl0, "L1", ("L1", "L0")),
        f12=gen_scene_flow(spec, tl1, tl2, "L1", ("L1", "L2")),
        f13=gen_scene_flow(spec, tl1, tl3, "L1", ("L1", "L3")),
        r10=gen_scene_flow(spec, tl2, tl3, "L2", ("L2", "L3")),
        r12=gen_scene_flow(spec, tl2, tl1, "L2", ("L2", "L1")),
        r13=gen_scene_flow(spec, tl2, tl0, "L2", ("L2", "L0")),
    )
    return quad.with_times(t0), flows


def random_scene(seed: int, width: int = 128, height: int = 128, n_sprites: int = 2,
                 t0: float = 0.5, periods: int = 1, min_speed: float = 10.0,
                 max_speed: float = 30.0, radius: float = 18.0,
                 background: bool = True, supersample: int = 4) -> SceneSpec:
    """Random valid scene whose sprites stay inside over ``periods`` quads.

    The validity window spans L0 of the first quad to L3 of the last one.
    Sprites are placed by rejection sampling; raises SceneError if no
    placement fits after many attempts.
    """
    rng = np.random.default_rng(seed)
    t_end = periods + t0
    sprites: List[Sprite] = []
    attempts = 0
    while len(sprites) < n_sprites:
        attempts += 1
        if attempts > 10000:
            raise SceneError("could not place sprites; reduce speed or radius")
        speed = rng.uniform(min_speed, max_speed)
        ang = rng.uniform(0, 2 * np.pi)
        v = (speed * math.cos(ang), speed * math.sin(ang))
        amag = rng.uniform(0.0, 0.5 * speed)
        aang = rng.uniform(0, 2 * np.pi)
        a = (amag * math.cos(aang), amag * math.sin(aang))
        p = (rng.uniform(radius, width - radius), rng.uniform(radius, height - radius))
        s = Sprite(int(rng.integers(1, 2 ** 31)), p, v, a, radius)
        try:
            SceneSpec(width, height, (s,), None, supersample, 0.0, t_end)
        except SceneError:
            continue
        sprites.append(s)
    bg = int(rng.integers(1, 2 ** 31)) if background else None
    return SceneSpec(width, height, tuple(sprites), bg, supersample, 0.0, t_end)


def pairwise_mean(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel mean that does not depend on the order of ``frames``.

    Values are sorted per pixel, offset by their minimum and summed by
    pairwise reduction; equal inputs therefore reproduce themselves exactly.
    """
    stack = np.sort(np.stack([np.asarray(f, dtype=np.float64) for f in frames]), axis=0)
    lo = stack[0]
    rest = stack - lo
    while rest.shape[0] > 1:
        half = rest.shape[0] // 2
        paired = rest[:half] + rest[half:2 * half]
        rest = np.concatenate([paired, rest[2 * half:]]) if rest.shape[0] % 2 else paired
    return lo + rest[0] / stack.shape[0]


@dataclass
class BlurPeriod:
    """One synthesized low-rate frame and its ground truth."""

    index: int
    blurry: Frame
    start: Frame
    end: Frame
    sharp: List[Frame] = field(repr=False)
    source_indices: Tuple[int, int]      # [first, last] averaged source frame


def blur_output_count(length: int, m: int, n: int) -> int:
    if length < m:
        return 0
    return (length - m) // (m + n) + 1


def discrete_lambda(m: int, n: int) -> Optional[float]:
    """Exposure ratio implied by first/last-sampled key-states; None when m == 1."""
    if m < 2:
        return None
    return (n + 1) / (m - 1)


def synth_blur_dataset(frames: Iterable[Frame], m: int, n: int) -> Iterator[BlurPeriod]:
    """Average ``m`` of every ``m + n`` high-rate frames into one blurry frame.

    Streams over ``frames`` holding at most ``m`` sources at a time; a
    trailing partial period is dropped.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    period = m + n
    buf: List[Frame] = []
    count = 0
    seen = 0
    for i, f in enumerate(frames):
        seen = i + 1
        if i % period < m:
            buf.append(f)
            if len(buf) == m:
                blurry = Frame.clamped(pairwise_mean([b.data for b in buf]))
                start = i - m + 1
                yield BlurPeriod(count, blurry, buf[0], buf[-1], buf, (start, i))
                count += 1
                buf = []
    if seen < m:
        raise ValueError(f"sequence of {seen} frames is shorter than m={m}")


def uneven_indices(length: int, gap_a: int, gap_b: int) -> List[int]:
    if gap_a < 0 or gap_b < 0:
        raise ValueError("gaps must be non-negative")
    idx = [0]
    steps = (gap_a + 1, gap_b + 1)
    k = 0
    while idx[-1] + steps[k % 2] < length:
        idx.append(idx[-1] + steps[k % 2])
        k += 1
    return idx


def sample_uneven(frames: Sequence[Frame], gap_a: int, gap_b: int) -> List[Frame]:
    """Keep one frame, skip ``gap_a``, keep one, skip ``gap_b``, and so on."""
    idx = uneven_indices(len(frames), gap_a, gap_b)
    if len(idx) < 4:
        raise ValueError(f"{len(frames)} frames give only {len(idx)} samples with gaps "
                         f"({gap_a}, {gap_b}); need at least 4")
    return [frames[i] for i in idx]
