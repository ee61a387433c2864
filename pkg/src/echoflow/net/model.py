"""Two-stream 3D residual network: grayscale and flow backbones fused
by feature concatenation into a single risk head.

Each backbone: 7x7x7 stem convolution (spatial stride 2, temporal
stride 1), 3x3x3 max pool (stride 1,2,2), four stages of bottleneck
blocks (counts set by the depth config), then global average pooling.
The pooled features of the active streams are concatenated and mapped
by one fully-connected layer to a scalar; the default head activation
is a sigmoid so outputs live in (0, 1).  A linear head is available
for regression-style pretraining, to be swapped for the sigmoid via
``checkpoint.swap_head``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .blocks import EXPANSION, BottleneckBlock3d
from .layers import BatchNorm3d, Conv3d, Linear, MaxPool3d, ReLU, sigmoid

# Bottleneck block counts per stage for the residual depth family.
DEPTH_CONFIGS = {10: (1, 1, 1, 1), 50: (3, 4, 6, 3), 152: (3, 8, 36, 3)}

STREAMS = ("both", "gray", "flow")


@dataclass(frozen=True)
class ModelConfig:
    block_counts: tuple = DEPTH_CONFIGS[10]
    base_width: int = 64
    streams: str = "both"
    batchnorm: bool = True
    head_activation: str = "sigmoid"  # or "linear" (pretraining interface)
    gray_channels: int = 1
    flow_channels: int = 2

    def __post_init__(self):
        if len(self.block_counts) != 4 or min(self.block_counts) < 1:
            raise ValueError(f"block_counts must be 4 positive ints; got {self.block_counts}")
        if self.streams not in STREAMS:
            raise ValueError(f"streams must be one of {STREAMS}; got {self.streams!r}")
        if self.head_activation not in ("sigmoid", "linear"):
            raise ValueError(f"unknown head activation {self.head_activation!r}")
        object.__setattr__(self, "block_counts", tuple(int(b) for b in self.block_counts))

    @property
    def feature_width(self) -> int:
        return 8 * self.base_width * EXPANSION

    @property
    def head_width(self) -> int:
        n = 2 if self.streams == "both" else 1
        return n * self.feature_width

    def to_dict(self) -> dict:
        return {
            "block_counts": list(self.block_counts),
            "base_width": self.base_width,
            "streams": self.streams,
            "batchnorm": self.batchnorm,
            "head_activation": self.head_activation,
            "gray_channels": self.gray_channels,
            "flow_channels": self.flow_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["block_counts"] = tuple(d["block_counts"])
        return cls(**d)


class Backbone:
    """One 3D-ResNet stream: stem, four bottleneck stages, global pool."""

    def __init__(self, in_channels, config: ModelConfig, rng, dtype=np.float32):
        w = config.base_width
        bias = not config.batchnorm
        self.batchnorm = config.batchnorm
        self.stem_conv = Conv3d(in_channels, w, 7, stride=(1, 2, 2), bias=bias,
                                rng=rng, dtype=dtype)
        if config.batchnorm:
            self.stem_bn = BatchNorm3d(w, dtype=dtype)
        self.stem_relu = ReLU()
        self.pool = MaxPool3d(3, stride=(1, 2, 2), padding=1)

        self.blocks: list[BottleneckBlock3d] = []
        self.block_names: list[str] = []
        in_ch = w
        for stage, count in enumerate(config.block_counts):
            mid = w * (2**stage)
            for i in range(count):
                stride = 2 if (stage > 0 and i == 0) else 1
                block = BottleneckBlock3d(in_ch, mid, stride=stride,
                                          batchnorm=config.batchnorm, rng=rng, dtype=dtype)
                self.blocks.append(block)
                self.block_names.append(f"stage{stage + 1}.block{i + 1}")
                in_ch = block.out_ch

    def forward(self, x, train=True):
        h = self.stem_conv.forward(x, train)
        if self.batchnorm:
            h = self.stem_bn.forward(h, train)
        h = self.stem_relu.forward(h, train)
        h = self.pool.forward(h, train)
        for block in self.blocks:
            h = block.forward(h, train)
        return h.mean(axis=(2, 3, 4)).T.copy(), h.shape

    def backward(self, dfeat, feat_shape, guided=False):
        c, n, t, hh, ww = feat_shape
        dh = np.broadcast_to((dfeat.T / (t * hh * ww))[:, :, None, None, None],
                             feat_shape).astype(dfeat.dtype)
        for block in reversed(self.blocks):
            dh = block.backward(dh, guided=guided)
        dh = self.pool.backward(dh)
        dh = self.stem_relu.backward(dh, guided=guided)
        if self.batchnorm:
            dh = self.stem_bn.backward(dh)
        return self.stem_conv.backward(dh)

    def named_layers(self):
        layers = {"stem.conv": self.stem_conv}
        if self.batchnorm:
            layers["stem.bn"] = self.stem_bn
        for name, block in zip(self.block_names, self.blocks):
            for sub, layer in block.sublayers().items():
                layers[f"{name}.{sub}"] = layer
        return layers


class TwoStreamModel:
    """Full model over internal (C, N, T, H, W) batches."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xEC0)))
        self.gray = (Backbone(config.gray_channels, config, rng, dtype)
                     if config.streams in ("both", "gray") else None)
        self.flow = (Backbone(config.flow_channels, config, rng, dtype)
                     if config.streams in ("both", "flow") else None)
        self.head = Linear(config.head_width, 1, rng=rng, dtype=dtype)
        self._cache = None

    # -- parameter bookkeeping -------------------------------------------
    def named_layers(self):
        layers = {}
        if self.gray is not None:
            layers.update({f"gray.{k}": v for k, v in self.gray.named_layers().items()})
        if self.flow is not None:
            layers.update({f"flow.{k}": v for k, v in self.flow.named_layers().items()})
        layers["head"] = self.head
        return layers

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr
                for ln, layer in self.named_layers().items()
                for pn, arr in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": arr
                for ln, layer in self.named_layers().items()
                for pn, arr in layer.grads.items()}

    def bn_stats(self) -> dict[str, np.ndarray]:
        out = {}
        for ln, layer in self.named_layers().items():
            if isinstance(layer, BatchNorm3d):
                out[f"{ln}.running_mean"] = layer.running_mean
                out[f"{ln}.running_var"] = layer.running_var
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.copy() for k, v in self.named_params().items()}
        state.update({k: v.copy() for k, v in self.bn_stats().items()})
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        stats = self.bn_stats()
        for k, v in state.items():
            target = params.get(k)
            if target is None:
                target = stats.get(k)
            if target is None:
                raise ShapeError(f"state entry {k!r} has no matching parameter")
            if target.shape != v.shape:
                raise ShapeError(f"state entry {k!r}: shape {v.shape} != {target.shape}")
            target[...] = v

    # -- forward / backward ----------------------------------------------
    def forward(self, gray_batch, flow_batch, train=True):
        """Returns (probabilities, logits); inputs may be None for an
        ablated stream."""
        feats = []
        shapes = []
        n = None
        if self.gray is not None:
            if gray_batch is None:
                raise ShapeError("model has a gray stream but gray_batch is None")
            f, s = self.gray.forward(gray_batch.astype(self.dtype, copy=False), train)
            feats.append(f)
            shapes.append(s)
            n = f.shape[0]
        if self.flow is not None:
            if flow_batch is None:
                raise ShapeError("model has a flow stream but flow_batch is None")
            f, s = self.flow.forward(flow_batch.astype(self.dtype, copy=False), train)
            feats.append(f)
            shapes.append(s)
            if n is not None and f.shape[0] != n:
                raise ShapeError(f"stream batch sizes differ: {n} vs {f.shape[0]}")
        concat = np.concatenate(feats, axis=1)
        logits = self.head.forward(concat, train)[:, 0]
        probs = sigmoid(logits) if self.config.head_activation == "sigmoid" else logits
        self._cache = (shapes, [f.shape[1] for f in feats], probs, logits)
        return probs, logits

    def backward(self, dlogit, guided=False):
        """Backpropagate d(loss)/d(logit); returns (dgray, dflow) input
        gradients and fills every layer's parameter grads."""
        shapes, widths, _, _ = self._cache
        dconcat = self.head.backward(np.asarray(dlogit, dtype=self.dtype).reshape(-1, 1))
        dgray = dflow = None
        offset = 0
        idx = 0
        if self.gray is not None:
            dgray = self.gray.backward(dconcat[:, offset : offset + widths[idx]],
                                       shapes[idx], guided=guided)
            offset += widths[idx]
            idx += 1
        if self.flow is not None:
            dflow = self.flow.backward(dconcat[:, offset : offset + widths[idx]],
                                       shapes[idx], guided=guided)
        return dgray, dflow


def clips_to_batch(arrays) -> np.ndarray:
    """Stack (T,H,W,C) clip arrays into the internal (C,N,T,H,W) layout."""
    stacked = np.stack([np.asarray(a) for a in arrays])  # (N,T,H,W,C)
    if stacked.ndim != 5:
        raise ShapeError(f"clips must be T,H,W,C; got batch shape {stacked.shape}")
    return np.ascontiguousarray(stacked.transpose(4, 0, 1, 2, 3))
