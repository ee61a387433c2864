"""Primitive layers with hand-derived backward passes.

5-d activations use a ``(C, N, T, H, W)`` layout throughout: channels
lead so the im2col matrices feed straight into BLAS without transposes.
Every layer caches what its backward pass needs during ``forward`` and
overwrites ``self.grads`` on ``backward``; gradients are exact, which
the test suite verifies against central finite differences.

Convolutions use cross-correlation semantics (no kernel flip).
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def xavier_init(shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Zero-mean normal draws with variance 2 / (fan_in + fan_out).

    For convolution kernels shaped (out_ch, in_ch, *kernel) the fans
    include the receptive-field size; for dense weights (out, in) they
    are the matrix dims.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("shape must be nonempty")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_out = shape[0] * receptive
        fan_in = shape[1] * receptive
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape).astype(dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected scalar or length-3; got {v!r}")
    return t


class Layer:
    """Minimal layer protocol: params/grads dicts + forward/backward."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv3d(Layer):
    """3-d convolution via im2col + GEMM, with exact gradients."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.kernel = _triple(kernel)
        self.stride = _triple(stride)
        self.padding = _triple(padding) if padding is not None else tuple(k // 2 for k in self.kernel)
        rng = rng or np.random.default_rng(0)
        self.params["kernel"] = xavier_init((out_ch, in_ch) + self.kernel, rng, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_ch, dtype=dtype)
        self._col = None
        self._xshape = None
        self._bufs: dict = {}

    def _buf(self, key, shape, dtype, zero=False):
        # Persistent workspaces: repeated same-shape calls would other-
        # wise re-mmap hundreds of MB per step and stall on page faults.
        buf = self._bufs.get(key)
        if buf is None or buf.shape != shape or buf.dtype != dtype:
            buf = np.empty(shape, dtype=dtype)
            self._bufs[key] = buf
        if zero:
            buf.fill(0)
        return buf

    def out_shape(self, tin, hin, win):
        k, s, p = self.kernel, self.stride, self.padding
        return tuple((d + 2 * pi - ki) // si + 1 for d, ki, si, pi in zip((tin, hin, win), k, s, p))

    def _parity_views(self, xp):
        # Contiguous per-parity copies turn every kernel-offset gather
        # into a unit-stride slice; for stride 1 this is xp itself.
        st, sh, sw = self.stride
        if (st, sh, sw) == (1, 1, 1):
            return {(0, 0, 0): xp}
        return {
            (a0, b0, d0): np.ascontiguousarray(xp[:, :, a0::st, b0::sh, d0::sw])
            for a0 in range(st) for b0 in range(sh) for d0 in range(sw)
        }

    def _im2col(self, xp, out_dims):
        c = xp.shape[0]
        n = xp.shape[1]
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        to, ho, wo = out_dims
        views = self._parity_views(xp)
        col = self._buf("col", (c, kt, kh, kw, n, to, ho, wo), xp.dtype)
        for a in range(kt):
            for b in range(kh):
                for d in range(kw):
                    q = views[(a % st, b % sh, d % sw)]
                    ia, ib, id_ = a // st, b // sh, d // sw
                    col[:, a, b, d] = q[:, :, ia : ia + to, ib : ib + ho, id_ : id_ + wo]
        return col

    @property
    def _pointwise(self):
        return self.kernel == (1, 1, 1)

    def forward(self, x, train=True):
        if x.shape[0] != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} input channels, got {x.shape[0]}")
        c, n, t, h, w = x.shape
        pt, ph, pw = self.padding
        out_dims = self.out_shape(t, h, w)
        if min(out_dims) < 1:
            raise ShapeError(f"conv output dims {out_dims} collapse for input {x.shape}")
        k = self.in_ch * int(np.prod(self.kernel))
        if self._pointwise:
            # 1x1x1 kernels need no window gather; strided slicing is enough.
            st, sh, sw = self.stride
            xs = x if self.stride == (1, 1, 1) else np.ascontiguousarray(
                x[:, :, ::st, ::sh, ::sw])
            col_mat = xs.reshape(c, -1)
            xpshape = None
        else:
            xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
            col_mat = self._im2col(xp, out_dims).reshape(k, -1)
            xpshape = xp.shape
        w_mat = self.params["kernel"].reshape(self.out_ch, k)
        y = np.matmul(w_mat, col_mat,
                      out=self._buf("y", (self.out_ch, col_mat.shape[1]), x.dtype))
        if "bias" in self.params:
            y += self.params["bias"][:, None]
        if train:
            self._col = col_mat
            self._xshape = x.shape
            self._xpshape = xpshape
            self._outdims = out_dims
        else:
            self._col = None
        return y.reshape((self.out_ch, n) + out_dims)

    def backward(self, dy):
        if self._col is None:
            raise RuntimeError("backward called without a cached training forward")
        c, n, t, h, w = self._xshape
        to, ho, wo = self._outdims
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        pt, ph, pw = self.padding
        k = self.in_ch * kt * kh * kw

        dy_mat = dy.reshape(self.out_ch, -1)
        self.grads["kernel"] = (dy_mat @ self._col.T).reshape(self.params["kernel"].shape)
        if "bias" in self.params:
            self.grads["bias"] = dy_mat.sum(axis=1)

        w_mat = self.params["kernel"].reshape(self.out_ch, k)
        dcol = np.matmul(w_mat.T, dy_mat,
                         out=self._buf("dcol", (k, dy_mat.shape[1]), dy.dtype))
        if self._pointwise:
            if self.stride == (1, 1, 1):
                return dcol.reshape(self._xshape)
            dx = np.zeros(self._xshape, dtype=dy.dtype)
            dx[:, :, ::st, ::sh, ::sw] = dcol.reshape(c, n, to, ho, wo)
            return dx
        dcol = dcol.reshape(c, kt, kh, kw, n, to, ho, wo)
        dxp = np.zeros(self._xpshape, dtype=dy.dtype)
        # Accumulate per parity class in contiguous buffers, then write
        # each class back with a single strided assignment.
        cls, nn, tp_, hp_, wp_ = self._xpshape
        bufs = {}
        for a in range(kt):
            for b in range(kh):
                for d in range(kw):
                    key = (a % st, b % sh, d % sw)
                    if key not in bufs:
                        a0, b0, d0 = key
                        bufs[key] = np.zeros(
                            (cls, nn, (tp_ - a0 + st - 1) // st,
                             (hp_ - b0 + sh - 1) // sh, (wp_ - d0 + sw - 1) // sw),
                            dtype=dy.dtype)
                    ia, ib, id_ = a // st, b // sh, d // sw
                    bufs[key][:, :, ia : ia + to, ib : ib + ho, id_ : id_ + wo] += dcol[:, a, b, d]
        for (a0, b0, d0), buf in bufs.items():
            dxp[:, :, a0::st, b0::sh, d0::sw] += buf
        return dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]


class BatchNorm3d(Layer):
    """Per-channel batch normalization over (N, T, H, W)."""

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.channels = int(channels)
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def _exp(self, v):
        return v.reshape(self.channels, 1, 1, 1, 1)

    def forward(self, x, train=True):
        if x.shape[0] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, got {x.shape[0]}")
        axes = (1, 2, 3, 4)
        if train:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - self._exp(mu)) * self._exp(inv)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.running_var.dtype)
            self._cache = (xhat, inv, True)
        else:
            inv = 1.0 / np.sqrt(self.running_var.astype(x.dtype) + self.eps)
            xhat = (x - self._exp(self.running_mean.astype(x.dtype))) * self._exp(inv)
            self._cache = (xhat, inv, False)
        return self._exp(self.params["gamma"]) * xhat + self._exp(self.params["beta"])

    def backward(self, dy):
        xhat, inv, was_train = self._cache
        axes = (1, 2, 3, 4)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        g = self._exp(self.params["gamma"] * inv)
        if not was_train:
            return dy * g
        m = float(np.prod(dy.shape[1:]))
        return g * (dy - self._exp(self.grads["beta"]) / m
                    - xhat * self._exp(self.grads["gamma"]) / m)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train=True):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy, guided=False):
        d = dy * self._mask
        if guided:
            d = d * (dy > 0)
        return d


class MaxPool3d(Layer):
    """Max pooling; padding cells hold -inf so they never win the argmax."""

    def __init__(self, kernel=3, stride=(1, 2, 2), padding=1):
        super().__init__()
        self.kernel = _triple(kernel)
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        self._cache = None
        self._win = None

    def forward(self, x, train=True):
        c, n, t, h, w = x.shape
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        pt, ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)),
                    constant_values=-np.inf)
        to = (t + 2 * pt - kt) // st + 1
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if min(to, ho, wo) < 1:
            raise ShapeError(f"pool output collapses for input {x.shape}")
        win_shape = (kt * kh * kw, c, n, to, ho, wo)
        if self._win is None or self._win.shape != win_shape or self._win.dtype != x.dtype:
            self._win = np.empty(win_shape, dtype=x.dtype)
        win = self._win
        i = 0
        for a in range(kt):
            for b in range(kh):
                for d in range(kw):
                    win[i] = xp[:, :, a : a + to * st : st,
                                b : b + ho * sh : sh,
                                d : d + wo * sw : sw]
                    i += 1
        arg = win.argmax(axis=0)
        out = np.take_along_axis(win, arg[None], axis=0)[0]
        self._cache = (arg, x.shape, xp.shape, (to, ho, wo))
        return out

    def backward(self, dy):
        arg, xshape, xpshape, outdims = self._cache
        c, n, t, h, w = xshape
        kt, kh, kw = self.kernel
        st, sh, sw = self.stride
        pt, ph, pw = self.padding
        to, ho, wo = outdims
        # Decode the flat window offset back to padded-input coordinates.
        at = arg // (kh * kw)
        ab = (arg // kw) % kh
        ad = arg % kw
        ci, ni, ti, hi, wi = np.indices((c, n, to, ho, wo), sparse=True)
        tt = ti * st + at
        hh = hi * sh + ab
        ww = wi * sw + ad
        dxp = np.zeros(xpshape, dtype=dy.dtype)
        np.add.at(dxp, (ci, ni, tt, hh, ww), dy)
        return dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + w]


class GlobalAvgPool(Layer):
    """Mean over (T, H, W): (C, N, T, H, W) -> (N, C) feature matrix."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=True):
        self._shape = x.shape
        return np.ascontiguousarray(x.mean(axis=(2, 3, 4)).T)

    def backward(self, dy):
        c, n, t, h, w = self._shape
        scale = 1.0 / (t * h * w)
        return np.broadcast_to((dy.T * scale)[:, :, None, None, None], self._shape).astype(dy.dtype)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = xavier_init((out_features, in_features), rng, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self._x = None

    def forward(self, x, train=True):
        if x.shape[1] != self.params["weight"].shape[1]:
            raise ShapeError(
                f"linear expects {self.params['weight'].shape[1]} features, got {x.shape[1]}"
            )
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] = dy.T @ self._x
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"]
