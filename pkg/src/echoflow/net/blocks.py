"""Bottleneck residual block in 3-d.

A 3x3x3 convolution sandwiched between two 1x1x1 convolutions, each
followed by normalization; the block output is ReLU(branch + shortcut).
The shortcut is the identity when shapes allow, otherwise a strided
1x1x1 projection.  Channel expansion factor is fixed at 4.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .layers import BatchNorm3d, Conv3d, ReLU

EXPANSION = 4


class BottleneckBlock3d:
    def __init__(self, in_ch, mid_ch, stride=1, batchnorm=True, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.in_ch = int(in_ch)
        self.mid_ch = int(mid_ch)
        self.out_ch = EXPANSION * int(mid_ch)
        self.stride = stride
        self.batchnorm = batchnorm
        bias = not batchnorm

        self.conv1 = Conv3d(in_ch, mid_ch, 1, stride=1, bias=bias, rng=rng, dtype=dtype)
        self.conv2 = Conv3d(mid_ch, mid_ch, 3, stride=stride, bias=bias, rng=rng, dtype=dtype)
        self.conv3 = Conv3d(mid_ch, self.out_ch, 1, stride=1, bias=bias, rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.relu2 = ReLU()
        self.relu_out = ReLU()
        if batchnorm:
            self.bn1 = BatchNorm3d(mid_ch, dtype=dtype)
            self.bn2 = BatchNorm3d(mid_ch, dtype=dtype)
            self.bn3 = BatchNorm3d(self.out_ch, dtype=dtype)

        stride3 = stride if not np.isscalar(stride) else (stride,) * 3
        self.has_projection = self.out_ch != in_ch or tuple(stride3) != (1, 1, 1)
        if self.has_projection:
            self.proj = Conv3d(in_ch, self.out_ch, 1, stride=stride, bias=bias, rng=rng, dtype=dtype)
            if batchnorm:
                self.proj_bn = BatchNorm3d(self.out_ch, dtype=dtype)

    def sublayers(self):
        names = ["conv1", "conv2", "conv3"]
        if self.batchnorm:
            names += ["bn1", "bn2", "bn3"]
        if self.has_projection:
            names.append("proj")
            if self.batchnorm:
                names.append("proj_bn")
        return {n: getattr(self, n) for n in names}

    def forward(self, x, train=True):
        if x.shape[0] != self.in_ch:
            raise ShapeError(f"block expects {self.in_ch} channels, got {x.shape[0]}")
        h = self.conv1.forward(x, train)
        if self.batchnorm:
            h = self.bn1.forward(h, train)
        h = self.relu1.forward(h, train)
        h = self.conv2.forward(h, train)
        if self.batchnorm:
            h = self.bn2.forward(h, train)
        h = self.relu2.forward(h, train)
        h = self.conv3.forward(h, train)
        if self.batchnorm:
            h = self.bn3.forward(h, train)

        if self.has_projection:
            s = self.proj.forward(x, train)
            if self.batchnorm:
                s = self.proj_bn.forward(s, train)
        else:
            s = x
        if s.shape != h.shape:
            raise ShapeError(f"shortcut {s.shape} incompatible with branch {h.shape}")
        return self.relu_out.forward(h + s, train)

    def backward(self, dy, guided=False):
        dsum = self.relu_out.backward(dy, guided=guided)

        db = dsum
        if self.batchnorm:
            db = self.bn3.backward(db)
        db = self.conv3.backward(db)
        db = self.relu2.backward(db, guided=guided)
        if self.batchnorm:
            db = self.bn2.backward(db)
        db = self.conv2.backward(db)
        db = self.relu1.backward(db, guided=guided)
        if self.batchnorm:
            db = self.bn1.backward(db)
        dx = self.conv1.backward(db)

        if self.has_projection:
            ds = dsum
            if self.batchnorm:
                ds = self.proj_bn.backward(ds)
            dx = dx + self.proj.backward(ds)
        else:
            dx = dx + dsum
        return dx
