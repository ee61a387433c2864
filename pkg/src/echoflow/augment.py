"""Stochastic 3-d geometric and photometric clip augmentation.

One affine draw (shear, scale, rotation) is applied identically to the
grayscale and flow streams so they stay spatially registered; the
brightness multiplier touches only the grayscale stream.  Flow vectors
are resampled by the warp but their components are not re-rotated;
for the mild default ranges this is treated as augmentation noise, not
a correctness contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .video import Clip, VideoTensor


@dataclass(frozen=True)
class AugmentParams:
    """Ranges are half-widths / bounds around the identity transform.

    ``shear`` bounds each of the six off-diagonal (t,y,x) shear
    coefficients; ``scale`` is an isotropic draw; ``rotate_deg`` is
    in-plane (about the time axis) by default, with optional temporal
    axes enabled via ``rotate_axes``.
    """

    shear: float = 0.1
    scale_low: float = 0.9
    scale_high: float = 1.1
    rotate_deg: float = 10.0
    brightness_low: float = 0.8
    brightness_high: float = 1.2
    rotate_axes: tuple = ("yx",)

    def __post_init__(self):
        if self.scale_low <= 0 or self.scale_high < self.scale_low:
            raise ValueError("scale range must be positive and ordered")
        if self.brightness_high < self.brightness_low:
            raise ValueError("brightness range must be ordered")
        for ax in self.rotate_axes:
            if ax not in ("yx", "ty", "tx"):
                raise ValueError(f"unknown rotation plane {ax!r}")


def _rotation(plane: str, theta: float) -> np.ndarray:
    axes = {"yx": (1, 2), "ty": (0, 1), "tx": (0, 2)}[plane]
    r = np.eye(4)
    c, s = np.cos(theta), np.sin(theta)
    i, j = axes
    r[i, i] = c
    r[i, j] = -s
    r[j, i] = s
    r[j, j] = c
    return r


def affine3d_warp(volume: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp a (T,H,W,C) volume by a 4x4 affine over (t,y,x) coordinates.

    Output voxel p takes the trilinear sample of the input at
    ``matrix^-1 @ p``; samples outside the volume read as 0.
    """
    vol = np.asarray(volume)
    if vol.ndim != 4:
        raise ShapeError(f"expected T,H,W,C volume; got {vol.shape}")
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise ShapeError(f"affine matrix must be 4x4; got {m.shape}")
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("affine matrix is singular")
    inv = np.linalg.inv(m)

    t, h, w, c = vol.shape
    grid = np.stack(np.meshgrid(np.arange(t), np.arange(h), np.arange(w),
                                indexing="ij"), axis=-1).astype(np.float64)
    src = grid @ inv[:3, :3].T + inv[:3, 3]

    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    out = np.zeros_like(vol, dtype=np.float64)
    for dt in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                idx = lo + np.array([dt, dy, dx])
                weight = (
                    (frac[..., 0] if dt else 1.0 - frac[..., 0])
                    * (frac[..., 1] if dy else 1.0 - frac[..., 1])
                    * (frac[..., 2] if dx else 1.0 - frac[..., 2])
                )
                valid = ((idx[..., 0] >= 0) & (idx[..., 0] < t)
                         & (idx[..., 1] >= 0) & (idx[..., 1] < h)
                         & (idx[..., 2] >= 0) & (idx[..., 2] < w))
                ic = np.clip(idx, 0, [t - 1, h - 1, w - 1])
                vals = vol[ic[..., 0], ic[..., 1], ic[..., 2]]
                out += vals * (weight * valid)[..., None]
    return out.astype(vol.dtype if np.issubdtype(vol.dtype, np.floating) else np.float64)


def draw_affine(shape_thw, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Sample one random affine (shear * scale * rotation) centered on
    the volume midpoint."""
    t, h, w = shape_thw
    center = np.array([(t - 1) / 2.0, (h - 1) / 2.0, (w - 1) / 2.0])

    shear = np.eye(4)
    offdiag = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    for i, j in offdiag:
        shear[i, j] = rng.uniform(-params.shear, params.shear) if params.shear > 0 else 0.0

    s = rng.uniform(params.scale_low, params.scale_high)
    scale = np.diag([s, s, s, 1.0])

    rot = np.eye(4)
    for plane in params.rotate_axes:
        theta = np.deg2rad(rng.uniform(-params.rotate_deg, params.rotate_deg)) \
            if params.rotate_deg > 0 else 0.0
        rot = rot @ _rotation(plane, theta)

    to_center = np.eye(4)
    to_center[:3, 3] = center
    from_center = np.eye(4)
    from_center[:3, 3] = -center
    return to_center @ rot @ shear @ scale @ from_center


def random_augment(clip: Clip, flow_clip: VideoTensor, params: AugmentParams,
                   rng: np.random.Generator) -> tuple[Clip, VideoTensor]:
    """Apply one shared geometric draw to both streams, then a
    brightness multiplier (clamped to [0,1]) to the grayscale stream."""
    gray = clip.video.data
    flow = flow_clip.data
    if gray.shape[:3] != flow.shape[:3]:
        raise ShapeError(
            f"gray {gray.shape[:3]} and flow {flow.shape[:3]} clips must share T,H,W"
        )
    m = draw_affine(gray.shape[:3], params, rng)
    warped_gray = affine3d_warp(gray, m)
    warped_flow = affine3d_warp(flow, m)
    brightness = rng.uniform(params.brightness_low, params.brightness_high)
    warped_gray = np.clip(warped_gray * brightness, 0.0, 1.0)
    return (
        Clip(VideoTensor(warped_gray), clip.scan_id, clip.start),
        VideoTensor(warped_flow),
    )
