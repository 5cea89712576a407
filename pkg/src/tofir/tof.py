"""Time-of-flight range camera model.

The sensor emits near-infrared light modulated at ``f_mod`` and samples the
reflected signal four times per modulation period (buckets A1..A4). Phase,
amplitude and offset of the return follow from the buckets:

    phase     = atan2(A1 - A3, A2 - A4), mapped into [0, 2*pi)
    amplitude = sqrt((A1 - A3)^2 + (A2 - A4)^2) / 2
    offset    = (A1 + A2 + A3 + A4) / 4
    distance  = c * phase / (4 * pi * f_mod)

Distances wrap at ``c / (2 * f_mod)``; scenes are assumed to lie inside that
range and out-of-range geometry aliases back in (wrap-around is documented,
not detected).

Conventions used throughout the package:

* Image arrays are indexed ``[row, col]``; x runs along columns, y along rows.
* Pixel (i, j) has continuous image coordinates (i + 0.5, j + 0.5).
* Sensor-plane coordinates are metric: ``u = (x - cx) * pixel_pitch``, and the
  focal length is expressed in the same metric unit.
* Radial distortion acts on normalized coordinates (u / f, v / f), which keeps
  k1 and k2 scale-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .container import FrameContainer
from .errors import DimensionMismatchError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, in air

_TWO_PI = 2.0 * math.pi

RAW_CHANNELS = ("a1", "a2", "a3", "a4")
RANGE_CHANNELS = ("distance", "amplitude", "offset", "valid")


@dataclass(frozen=True)
class TofIntrinsics:
    """Pinhole + radial distortion model of the range camera.

    ``focal_length`` and ``pixel_pitch`` share one metric unit; the principal
    point (cx, cy) is in pixels and defaults to the image center.
    """

    focal_length: float
    width: int
    height: int
    pixel_pitch: float
    cx: float | None = None
    cy: float | None = None
    k1: float = 0.0
    k2: float = 0.0
    f_mod: float = 21e6

    def __post_init__(self):
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)
        if self.focal_length <= 0:
            raise ValueError(f"focal_length must be positive, got {self.focal_length}")
        if self.pixel_pitch <= 0:
            raise ValueError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        if self.f_mod <= 0:
            raise ValueError(f"f_mod must be positive, got {self.f_mod}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"sensor must be non-empty, got {self.width}x{self.height}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside sensor")

    def to_json_dict(self) -> dict:
        return {
            "f": self.focal_length,
            "width": self.width,
            "height": self.height,
            "pixel_pitch": self.pixel_pitch,
            "cx": self.cx,
            "cy": self.cy,
            "k1": self.k1,
            "k2": self.k2,
            "f_mod": self.f_mod,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TofIntrinsics":
        return cls(
            focal_length=float(doc["f"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            pixel_pitch=float(doc["pixel_pitch"]),
            cx=float(doc["cx"]) if "cx" in doc else None,
            cy=float(doc["cy"]) if "cy" in doc else None,
            k1=float(doc.get("k1", 0.0)),
            k2=float(doc.get("k2", 0.0)),
            f_mod=float(doc.get("f_mod", 21e6)),
        )


@dataclass(frozen=True)
class RawTofFrame:
    """Raw sensor output: four intensity buckets per pixel.

    ``samples`` has shape (height, width, 4) holding (A1, A2, A3, A4).
    """

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[2] != 4:
            raise ValueError(f"samples must be (height, width, 4), got {samples.shape}")
        if samples.shape[0] == 0 or samples.shape[1] == 0:
            raise ValueError("frame must contain at least one pixel")
        if np.any(samples < 0):
            raise ValueError("bucket intensities must be non-negative")
        object.__setattr__(self, "samples", samples)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_planes(cls, a1, a2, a3, a4) -> "RawTofFrame":
        return cls(np.stack([a1, a2, a3, a4], axis=-1))


@dataclass(frozen=True)
class RangeFrame:
    """Demodulated frame: per-pixel distance, amplitude, offset, validity."""

    distance: np.ndarray
    amplitude: np.ndarray
    offset: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        distance = np.asarray(self.distance, dtype=np.float64)
        amplitude = np.asarray(self.amplitude, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        shapes = {distance.shape, amplitude.shape, offset.shape, valid.shape}
        if len(shapes) != 1 or distance.ndim != 2:
            raise ValueError(f"all planes must share one 2-d shape, got {shapes}")
        object.__setattr__(self, "distance", distance)
        object.__setattr__(self, "amplitude", amplitude)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.distance.shape[0]

    @property
    def width(self) -> int:
        return self.distance.shape[1]


@dataclass(frozen=True)
class PointCloud:
    """Metric 3D points, one per source pixel (row-major flat indices).

    Invalid pixels keep a zero placeholder row so the grid structure survives
    and downstream consumers stay index-aligned.
    """

    points: np.ndarray  # (n, 3)
    pixel_indices: np.ndarray  # (n,) flat row-major source pixel
    valid: np.ndarray  # (n,) bool
    width: int
    height: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        idx = np.asarray(self.pixel_indices, dtype=np.int64)
        valid = np.asarray(self.valid, dtype=bool)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {points.shape}")
        if idx.shape != (points.shape[0],) or valid.shape != (points.shape[0],):
            raise ValueError("pixel_indices and valid must match the point count")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "pixel_indices", idx)
        object.__setattr__(self, "valid", valid)

    def __len__(self) -> int:
        return self.points.shape[0]


def unambiguous_range(f_mod: float) -> float:
    """Largest distance measurable before the phase wraps: c / (2 * f_mod)."""
    if f_mod <= 0:
        raise ValueError(f"modulation frequency must be positive, got {f_mod}")
    return SPEED_OF_LIGHT / (2.0 * f_mod)


def exposure_outliers(amplitude, offset, a_min: float, a_max: float, b_max: float):
    """Boolean mask of pixels that are under- or overexposed.

    Flags amplitude < a_min (no usable signal), amplitude > a_max, and
    offset > b_max (saturation).
    """
    if a_min < 0 or a_max < 0 or b_max < 0:
        raise ValueError("exposure thresholds must be non-negative")
    if not a_min < a_max:
        raise ValueError(f"a_min ({a_min}) must be below a_max ({a_max})")
    amplitude = np.asarray(amplitude)
    offset = np.asarray(offset)
    return (amplitude < a_min) | (amplitude > a_max) | (offset > b_max)


def demodulate(
    raw: RawTofFrame,
    intr: TofIntrinsics,
    *,
    a_min: float = 0.0,
    a_max: float = math.inf,
    b_max: float = math.inf,
) -> RangeFrame:
    """Recover distance, amplitude and offset from the four buckets.

    Pixels with zero amplitude (A1 == A3 and A2 == A4) carry no phase
    information and are marked invalid rather than raising. The optional
    exposure thresholds apply the same rule as
    :func:`tofir.segmentation.flag_invalid`.
    """
    if (raw.height, raw.width) != (intr.height, intr.width):
        raise DimensionMismatchError(
            f"raw frame is {raw.width}x{raw.height}, intrinsics say "
            f"{intr.width}x{intr.height}"
        )
    s = raw.samples
    d13 = s[..., 0] - s[..., 2]
    d24 = s[..., 1] - s[..., 3]
    phase = np.mod(np.arctan2(d13, d24), _TWO_PI)
    # np.mod can round a tiny negative angle up to exactly 2*pi
    phase[phase >= _TWO_PI] = 0.0
    amplitude = np.hypot(d13, d24) / 2.0
    offset = s.sum(axis=-1) / 4.0
    distance = SPEED_OF_LIGHT * phase / (4.0 * math.pi * intr.f_mod)
    valid = amplitude > 0.0
    valid &= ~exposure_outliers(amplitude, offset, a_min, a_max, b_max)
    return RangeFrame(distance, amplitude, offset, valid)


def synthesize_buckets(phase, amplitude, offset) -> np.ndarray:
    """Inverse of demodulation: four buckets from (phase, amplitude, offset).

    Convention: A1 = b + a*sin(phi), A2 = b + a*cos(phi), A3 = b - a*sin(phi),
    A4 = b - a*cos(phi), which makes the demodulation formulas exact. Buckets
    are physical (non-negative) whenever offset >= amplitude.
    """
    phase = np.asarray(phase, dtype=np.float64)
    amplitude = np.asarray(amplitude, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    sin_part = amplitude * np.sin(phase)
    cos_part = amplitude * np.cos(phase)
    return np.stack(
        [offset + sin_part, offset + cos_part, offset - sin_part, offset - cos_part],
        axis=-1,
    )


def phase_for_distance(distance, f_mod: float):
    """Modulation phase for a distance, wrapped into [0, 2*pi).

    The wrap uses ``fmod``, which is exact in IEEE arithmetic: two distances
    that differ by exactly the unambiguous range map to bit-identical phases
    and therefore bit-identical buckets.
    """
    period = unambiguous_range(f_mod)
    wrapped = np.fmod(np.asarray(distance, dtype=np.float64), period)
    return _TWO_PI * wrapped / period


def undistort_pixel(u_d, v_d, k1: float, k2: float):
    """Remove radial distortion from coordinates relative to the principal point.

    r_u = r_d + k1*r_d^3 + k2*r_d^5, applied as a radial scale so the center
    is an exact fixed point. Callers should pass normalized (u/f, v/f)
    coordinates; the polynomial itself is agnostic.
    """
    u_d = np.asarray(u_d, dtype=np.float64)
    v_d = np.asarray(v_d, dtype=np.float64)
    r_sq = u_d * u_d + v_d * v_d
    scale = 1.0 + k1 * r_sq + k2 * r_sq * r_sq
    return u_d * scale, v_d * scale


def unit_rays(intr: TofIntrinsics) -> np.ndarray:
    """Unit view ray per pixel in the camera frame, after undistortion.

    Shape (height, width, 3); a pixel at distance D backprojects to
    ``D * unit_rays(intr)[j, i]``.
    """
    return _unit_rays(
        intr.focal_length,
        intr.width,
        intr.height,
        intr.pixel_pitch,
        intr.cx,
        intr.cy,
        intr.k1,
        intr.k2,
    )


def _unit_rays(f, width, height, pitch, cx, cy, k1=0.0, k2=0.0) -> np.ndarray:
    x = (np.arange(width, dtype=np.float64) + 0.5 - cx) * pitch
    y = (np.arange(height, dtype=np.float64) + 0.5 - cy) * pitch
    u, v = np.meshgrid(x / f, y / f)
    uu, vu = undistort_pixel(u, v, k1, k2)
    norm = np.sqrt(1.0 + uu * uu + vu * vu)
    return np.stack([uu / norm, vu / norm, 1.0 / norm], axis=-1)


def backproject(frame: RangeFrame, intr: TofIntrinsics, keep_invalid: bool = True) -> PointCloud:
    """Lift a range frame to metric 3D points along the undistorted view rays.

    Each valid pixel yields (X, Y, Z) = D / d * (u, v, f) with
    d = sqrt(f^2 + u^2 + v^2), so the point norm equals the measured distance.
    With ``keep_invalid`` (default) invalid pixels yield zero placeholder rows,
    preserving the grid; otherwise they are dropped.
    """
    if (frame.height, frame.width) != (intr.height, intr.width):
        raise DimensionMismatchError(
            f"range frame is {frame.width}x{frame.height}, intrinsics say "
            f"{intr.width}x{intr.height}"
        )
    rays = unit_rays(intr)
    points = (frame.distance[..., None] * rays).reshape(-1, 3)
    valid = frame.valid.ravel().copy()
    points[~valid] = 0.0
    indices = np.arange(points.shape[0], dtype=np.int64)
    if not keep_invalid:
        points = points[valid]
        indices = indices[valid]
        valid = np.ones(points.shape[0], dtype=bool)
    return PointCloud(points, indices, valid, intr.width, intr.height)


# --- frame container adapters -------------------------------------------------

def raw_frames_to_container(frames: Sequence[RawTofFrame]) -> FrameContainer:
    return FrameContainer.stack(
        [{name: f.samples[:, :, k] for k, name in enumerate(RAW_CHANNELS)} for f in frames]
    )


def raw_frames_from_container(cont: FrameContainer) -> list[RawTofFrame]:
    if tuple(cont.channel_names) != RAW_CHANNELS:
        raise DimensionMismatchError(
            f"expected channels {RAW_CHANNELS}, got {cont.channel_names}"
        )
    return [RawTofFrame(cont.data[k].astype(np.float64)) for k in range(cont.frames)]


def range_frames_to_container(frames: Sequence[RangeFrame]) -> FrameContainer:
    return FrameContainer.stack(
        [
            {
                "distance": f.distance,
                "amplitude": f.amplitude,
                "offset": f.offset,
                "valid": f.valid.astype(np.float32),
            }
            for f in frames
        ]
    )


def range_frames_from_container(cont: FrameContainer) -> list[RangeFrame]:
    if tuple(cont.channel_names) != RANGE_CHANNELS:
        raise DimensionMismatchError(
            f"expected channels {RANGE_CHANNELS}, got {cont.channel_names}"
        )
    return [
        RangeFrame(
            cont.channel("distance", k).astype(np.float64),
            cont.channel("amplitude", k).astype(np.float64),
            cont.channel("offset", k).astype(np.float64),
            cont.channel("valid", k) > 0.5,
        )
        for k in range(cont.frames)
    ]
