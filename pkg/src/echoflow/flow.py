"""Dense two-frame optical flow by local polynomial expansion.

Each frame is approximated around every pixel by a quadratic model
``f(p) ~ p'Ap + b'p + c`` fit under a Gaussian window.  For a pure
translation d the first-order coefficients satisfy ``b2 = b1 - 2*A*d``,
so a displacement field can be read off the two expansions; a prior
estimate is folded in by warping the second frame's coefficients, and
the per-pixel 2x2 systems are averaged over a window before solving.
Run coarse-to-fine over an image pyramid, this recovers displacements
well beyond the window radius.

Vector components are ordered ``(dx, dy)`` = (column, row) motion in
pixels per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ShapeError
from .video import VideoTensor

# Displacements are clipped to this many pixels before entering the
# network so both input streams live on comparable bounded scales.
FLOW_CLIP_PX = 20.0

# Tikhonov term keeping texture-free systems solvable (flow -> 0).
SOLVE_EPS = 1e-6

_BORDER_TAPER = 5


@dataclass(frozen=True)
class FlowParams:
    """Pyramid and window parameters for the displacement solver."""

    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must be in (0,1); got {self.pyramid_scale}")
        if self.pyramid_levels < 1 or self.iterations < 1 or self.window_size < 1:
            raise ValueError("pyramid_levels, iterations and window_size must be >= 1")
        if self.poly_n < 3 or self.poly_n % 2 == 0:
            raise ValueError(f"poly_n must be odd and >= 3; got {self.poly_n}")

    def check_image(self, h: int, w: int) -> None:
        coarsest = self.pyramid_scale ** (self.pyramid_levels - 1) * min(h, w)
        if coarsest < self.poly_n:
            raise ShapeError(
                f"coarsest pyramid level {coarsest:.1f} px is smaller than "
                f"poly_n={self.poly_n}; reduce pyramid_levels"
            )


@dataclass(frozen=True)
class PolyExpansion:
    """Per-pixel quadratic model coefficients.

    ``a`` is the symmetric 2x2 matrix (H,W,2,2), ``b`` the linear term
    (H,W,2) in (x,y) order and ``c`` the constant (H,W).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def _as_frame(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"expected a single-channel frame; got shape {arr.shape}")
    return arr


def polynomial_expansion(frame, poly_n: int = 5, poly_sigma: float = 1.1) -> PolyExpansion:
    """Weighted least-squares quadratic fit around every pixel.

    The window is ``poly_n`` wide (odd) with Gaussian weights of scale
    ``poly_sigma``.  Correlations with the six weighted basis functions
    are separable, so the whole fit is six 1-d filter passes plus one
    shared 6x6 solve.
    """
    f = _as_frame(frame)
    if poly_n % 2 == 0 or poly_n < 3:
        raise ValueError(f"poly_n must be odd and >= 3; got {poly_n}")
    if min(f.shape) < poly_n:
        raise ShapeError(f"frame {f.shape} smaller than poly_n={poly_n}")

    m = poly_n // 2
    x = np.arange(-m, m + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * poly_sigma**2))
    g /= g.sum()

    # Gram matrix of the basis (1, x, y, x^2, y^2, xy) under w(y,x)=g(y)g(x).
    w2 = np.outer(g, g)
    yy, xx = np.meshgrid(x, x, indexing="ij")
    basis = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy])
    gram = np.einsum("iyx,jyx,yx->ij", basis, basis, w2)
    ginv = np.linalg.inv(gram)

    def corr(img, ky, kx):
        out = ndimage.correlate1d(img, ky, axis=0, mode="mirror")
        return ndimage.correlate1d(out, kx, axis=1, mode="mirror")

    proj = np.stack(
        [
            corr(f, g, g),
            corr(f, g, g * x),
            corr(f, g * x, g),
            corr(f, g, g * x**2),
            corr(f, g * x**2, g),
            corr(f, g * x, g * x),
        ],
        axis=-1,
    )
    coef = proj @ ginv.T  # (H,W,6): c, bx, by, axx, ayy, axy

    a = np.empty(f.shape + (2, 2), dtype=np.float64)
    a[..., 0, 0] = coef[..., 3]
    a[..., 1, 1] = coef[..., 4]
    a[..., 0, 1] = a[..., 1, 0] = 0.5 * coef[..., 5]
    return PolyExpansion(a=a, b=coef[..., 1:3].copy(), c=coef[..., 0].copy())


def _resize2d(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # Half-pixel-centered bilinear, matching the video resizer.
    def axis(n_in, n_out):
        centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        centers = np.clip(centers, 0.0, n_in - 1.0)
        i0 = np.minimum(np.floor(centers).astype(np.int64), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, centers - i0

    r0, r1, rf = axis(img.shape[0], out_h)
    c0, c1, cf = axis(img.shape[1], out_w)
    rows = img[r0] * (1.0 - rf)[:, None] + img[r1] * rf[:, None]
    return rows[:, c0] * (1.0 - cf) + rows[:, c1] * cf


def _bilinear_sample(field: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``field`` (H,W,...) at fractional positions, clamped to borders."""
    h, w = field.shape[:2]
    ysc = np.clip(ys, 0.0, h - 1.0)
    xsc = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(ysc.astype(np.int64), h - 1)
    x0 = np.minimum(xsc.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ysc - y0).reshape(ys.shape + (1,) * (field.ndim - 2))
    fx = (xsc - x0).reshape(xs.shape + (1,) * (field.ndim - 2))
    top = field[y0, x0] * (1 - fx) + field[y0, x1] * fx
    bot = field[y1, x0] * (1 - fx) + field[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _border_taper(h: int, w: int) -> np.ndarray:
    ramp_y = np.minimum((np.arange(h) + 0.5) / _BORDER_TAPER, 1.0)
    ramp_y = np.minimum(ramp_y, ramp_y[::-1])
    ramp_x = np.minimum((np.arange(w) + 0.5) / _BORDER_TAPER, 1.0)
    ramp_x = np.minimum(ramp_x, ramp_x[::-1])
    return np.outer(ramp_y, ramp_x)


def _flow_pass(exp1: PolyExpansion, exp2: PolyExpansion, flow: np.ndarray,
               window_size: int) -> np.ndarray:
    """One refinement pass: warp, build per-pixel systems, blur, solve."""
    h, w = exp1.c.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = xs + flow[..., 0]
    ty = ys + flow[..., 1]
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)

    a2w = _bilinear_sample(exp2.a.reshape(h, w, 4), ty, tx).reshape(h, w, 2, 2)
    b2w = _bilinear_sample(exp2.b, ty, tx)

    a_avg = 0.5 * (exp1.a + a2w)
    db = -0.5 * (b2w - exp1.b)
    # Where the warp leaves the frame, fall back to the prior flow:
    # A <- A1 and db <- 0 so the solve reproduces d0.
    a_avg = np.where(inside[..., None, None], a_avg, exp1.a)
    db = np.where(inside[..., None], db, 0.0)
    db = db + np.einsum("hwij,hwj->hwi", a_avg, flow)

    taper = _border_taper(h, w)
    a_avg = a_avg * taper[..., None, None]
    db = db * taper[..., None]

    axx, axy, ayy = a_avg[..., 0, 0], a_avg[..., 0, 1], a_avg[..., 1, 1]
    g11 = axx**2 + axy**2
    g12 = axy * (axx + ayy)
    g22 = ayy**2 + axy**2
    h1 = axx * db[..., 0] + axy * db[..., 1]
    h2 = axy * db[..., 0] + ayy * db[..., 1]

    blur = lambda z: ndimage.uniform_filter(z, size=window_size, mode="mirror")
    g11, g12, g22, h1, h2 = map(blur, (g11, g12, g22, h1, h2))

    g11 = g11 + SOLVE_EPS
    g22 = g22 + SOLVE_EPS
    det = g11 * g22 - g12**2
    out = np.empty_like(flow)
    out[..., 0] = (g22 * h1 - g12 * h2) / det
    out[..., 1] = (g11 * h2 - g12 * h1) / det
    return out


def estimate_flow(prev, next_, params: FlowParams = FlowParams()) -> np.ndarray:
    """Dense displacement field from ``prev`` to ``next_`` in px/frame.

    Returns an (H,W,2) array with (dx, dy) ordering.  The estimate is
    intensity-scale invariant up to the Tikhonov term and close to
    antisymmetric under frame exchange for small motions.
    """
    f1 = _as_frame(prev)
    f2 = _as_frame(next_)
    if f1.shape != f2.shape:
        raise ShapeError(f"frame shapes differ: {f1.shape} vs {f2.shape}")
    params.check_image(*f1.shape)

    h, w = f1.shape
    sizes = []
    for k in range(params.pyramid_levels):
        s = params.pyramid_scale**k
        sizes.append((max(int(round(h * s)), params.poly_n),
                      max(int(round(w * s)), params.poly_n)))

    flow = None
    for lh, lw in reversed(sizes):
        if flow is None:
            flow = np.zeros((lh, lw, 2), dtype=np.float64)
        else:
            scaled = np.empty((lh, lw, 2), dtype=np.float64)
            scaled[..., 0] = _resize2d(flow[..., 0], lh, lw) * (lw / flow.shape[1])
            scaled[..., 1] = _resize2d(flow[..., 1], lh, lw) * (lh / flow.shape[0])
            flow = scaled
        level_sigma = 0.5 * max(min(h / lh, w / lw) - 1.0, 0.0)
        imgs = []
        for f in (f1, f2):
            smooth = ndimage.gaussian_filter(f, level_sigma, mode="mirror") if level_sigma > 0.01 else f
            imgs.append(_resize2d(smooth, lh, lw))
        exp1 = polynomial_expansion(imgs[0], params.poly_n, params.poly_sigma)
        exp2 = polynomial_expansion(imgs[1], params.poly_n, params.poly_sigma)
        for _ in range(params.iterations):
            flow = _flow_pass(exp1, exp2, flow, params.window_size)
    return flow


def video_flow_stack(video: VideoTensor, params: FlowParams = FlowParams()) -> VideoTensor:
    """Pairwise flow over a whole video: (T-1, H, W, 2) in raw px/frame."""
    if video.frames < 2:
        raise ShapeError("need at least 2 frames for pairwise flow")
    gray = video.data[..., 0].astype(np.float64)
    fields = [
        estimate_flow(gray[t], gray[t + 1], params) for t in range(video.frames - 1)
    ]
    return VideoTensor(np.stack(fields).astype(np.float32))


def flow_to_input(flows, clip_len: int = 32) -> VideoTensor:
    """Encode ``clip_len - 1`` consecutive flow fields as a network input.

    Values are clipped to +-FLOW_CLIP_PX, scaled to [-1, 1], and the
    final field is duplicated so T matches the grayscale clip.
    """
    fields = [np.asarray(f, dtype=np.float32) for f in flows]
    if len(fields) != clip_len - 1:
        raise ShapeError(f"expected {clip_len - 1} flow fields, got {len(fields)}")
    for f in fields:
        if f.ndim != 3 or f.shape[2] != 2:
            raise ShapeError(f"flow field must be H,W,2; got {f.shape}")
        if f.shape != fields[0].shape:
            raise ShapeError("flow fields must share dims")
    stack = np.stack(fields + [fields[-1]])
    stack = np.clip(stack, -FLOW_CLIP_PX, FLOW_CLIP_PX) / FLOW_CLIP_PX
    if not np.all(np.isfinite(stack)):
        raise DegenerateInputError("flow stack contains non-finite values")
    return VideoTensor(stack)
