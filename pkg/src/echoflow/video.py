"""Video tensor container and the deterministic preprocessing stages.

A video is carried as a dense ``T x H x W x C`` float32 volume.  The
preprocessing order used by the pipeline is fixed and documented:
grayscale -> sector mask -> max-intensity normalization -> bilinear
downsampling.  All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import etns
from .errors import DegenerateInputError, ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class VideoTensor:
    """Dense T x H x W x C scalar volume, C order.

    Values are in [0, 1] once normalized; raw inputs may be unbounded.
    """

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 4:
            raise ShapeError(f"video tensor must be T,H,W,C; got shape {d.shape}")
        if min(d.shape) < 1:
            raise ShapeError(f"all dims must be >= 1; got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("video tensor contains non-finite values")
        object.__setattr__(self, "data", np.ascontiguousarray(d, dtype=np.float32))

    @property
    def shape(self):
        return self.data.shape

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class SectorMask:
    """H x W binary bitmap; 1 marks pixels inside the scanning sector."""

    mask: np.ndarray

    def __post_init__(self):
        m = self.mask
        if m.ndim != 2:
            raise ShapeError(f"sector mask must be H,W; got shape {m.shape}")
        m = (np.asarray(m) != 0)
        if not m.any():
            raise DegenerateInputError("sector mask has no inside pixels")
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class Clip:
    """A contiguous fixed-length cut of a source video."""

    video: VideoTensor
    scan_id: str
    start: int

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"clip start {self.start} < 0")


def load_video(path) -> VideoTensor:
    return VideoTensor(etns.read_tensor(path))


def save_video(path, video: VideoTensor) -> None:
    etns.write_tensor(path, video.data)


def normalize_video(v: VideoTensor) -> tuple[VideoTensor, bool]:
    """Divide every pixel by the maximal intensity.

    Returns ``(video, degenerate)``; the flag is True for an all-zero
    input, which is passed through unchanged instead of dividing by 0.
    """
    peak = float(v.data.max())
    if peak <= 0.0:
        return v, True
    return VideoTensor(v.data / np.float32(peak)), False


def apply_sector_mask(v: VideoTensor, m: SectorMask) -> VideoTensor:
    """Zero every pixel outside the scanning sector, in every frame."""
    if m.mask.shape != v.shape[1:3]:
        raise ShapeError(f"mask {m.mask.shape} does not match frames {v.shape[1:3]}")
    return VideoTensor(v.data * m.mask[None, :, :, None].astype(np.float32))


def estimate_sector_mask(v: VideoTensor, var_threshold: float = 1e-3) -> SectorMask:
    """Locate the scanning sector as the temporally active image region.

    Pixels whose temporal standard deviation exceeds ``var_threshold``
    (any channel) are marked inside, the bitmap is morphologically
    closed, and only the largest connected region is kept.
    """
    if v.frames < 2:
        raise ShapeError("need at least 2 frames to estimate a sector mask")
    std = v.data.std(axis=0).max(axis=-1)
    active = std > var_threshold
    if not active.any():
        raise DegenerateInputError(
            f"no pixel exceeds std threshold {var_threshold}; cannot locate sector"
        )
    closed = ndimage.binary_closing(active, structure=np.ones((3, 3), bool))
    closed |= active
    labels, n = ndimage.label(closed)
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
        closed = labels == (1 + int(np.argmax(sizes)))
    return SectorMask(closed)


def _axis_weights(n_in: int, n_out: int):
    # Half-pixel-centered sampling grid; clamped at the borders.
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    centers = np.clip(centers, 0.0, n_in - 1.0)
    i0 = np.floor(centers).astype(np.int64)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = (centers - i0).astype(np.float32)
    return i0, i1, frac


def resize_bilinear(v: VideoTensor, out_h: int, out_w: int) -> VideoTensor:
    """Resample each frame with half-pixel-centered bilinear interpolation."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1; got {out_h}x{out_w}")
    t, h, w, c = v.shape
    if (out_h, out_w) == (h, w):
        return VideoTensor(v.data.copy())
    r0, r1, rf = _axis_weights(h, out_h)
    c0, c1, cf = _axis_weights(w, out_w)
    rows = v.data[:, r0] * (1.0 - rf)[None, :, None, None] + v.data[:, r1] * rf[None, :, None, None]
    out = rows[:, :, c0] * (1.0 - cf)[None, None, :, None] + rows[:, :, c1] * cf[None, None, :, None]
    return VideoTensor(out)


def to_grayscale(v: VideoTensor) -> VideoTensor:
    """Reduce RGB to a single luma channel; single-channel passes through."""
    if v.channels == 1:
        return v
    if v.channels != 3:
        raise ShapeError(f"grayscale conversion expects C in {{1,3}}; got C={v.channels}")
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float32)
    return VideoTensor((v.data @ w)[..., None])


def sample_clips(
    v: VideoTensor, scan_id: str = "", n_clips: int = 5, clip_len: int = 32, seed: int = 0
) -> list[Clip]:
    """Cut ``n_clips`` random fixed-length clips from a video.

    Start indices are drawn independently and uniformly from
    ``[0, T - clip_len]``; the same seed reproduces the same clips.
    Videos shorter than one clip are rejected, mirroring the discard
    rule for scans with too few frames.
    """
    t = v.frames
    if t < clip_len:
        raise DegenerateInputError(
            f"video has {t} frames; insufficient for clip_len {clip_len}"
        )
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, t - clip_len + 1, size=n_clips)
    return [
        Clip(VideoTensor(v.data[s : s + clip_len].copy()), scan_id, int(s)) for s in starts
    ]
