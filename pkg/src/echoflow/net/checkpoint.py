"""Model checkpoints: a JSON header plus concatenated ETNS1 tensors.

On-disk layout (stable across versions):

    bytes 0-7   magic ``EFCKPT1\\x00``
    bytes 8-15  u64 little-endian header length L
    then        L bytes of UTF-8 JSON:
                  {"format": 1,
                   "arch": {<ModelConfig fields>},
                   "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    then        the tensor blob; each entry is a complete ETNS1 segment
                at ``offset`` (relative to the blob start)

Tensors cover all parameters plus batch-norm running statistics, so a
round-trip reproduces predictions bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .. import etns
from ..errors import ArchitectureMismatchError, FormatError
from .layers import xavier_init
from .model import ModelConfig, TwoStreamModel

MAGIC = b"EFCKPT1\x00"
FORMAT_VERSION = 1


def save_checkpoint(model: TwoStreamModel, path) -> None:
    state = model.state_dict()
    blob = bytearray()
    entries = []
    for name, arr in state.items():
        seg = etns.tensor_to_bytes(arr)
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": len(blob), "nbytes": len(seg)})
        blob.extend(seg)
    header = json.dumps({"format": FORMAT_VERSION,
                         "arch": model.config.to_dict(),
                         "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(blob))


def _check_arch(stored: ModelConfig, expected: ModelConfig, ignore_head=False) -> None:
    pairs = [
        ("block_counts", stored.block_counts, expected.block_counts),
        ("base_width", stored.base_width, expected.base_width),
        ("streams", stored.streams, expected.streams),
        ("batchnorm", stored.batchnorm, expected.batchnorm),
        ("gray_channels", stored.gray_channels, expected.gray_channels),
        ("flow_channels", stored.flow_channels, expected.flow_channels),
    ]
    if not ignore_head:
        pairs.append(("head_activation", stored.head_activation, expected.head_activation))
    for field, a, b in pairs:
        if a != b:
            raise ArchitectureMismatchError(
                f"checkpoint {field}={a!r} but model expects {field}={b!r}"
            )


def load_checkpoint(path, expect: ModelConfig = None) -> TwoStreamModel:
    """Rebuild a model from a checkpoint file.

    If ``expect`` is given, the stored architecture descriptor must
    match it field-for-field; the error names the differing field.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (magic {raw[:8]!r})")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header: {exc}") from None
    if header.get("format") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format {header.get('format')}")
    config = ModelConfig.from_dict(header["arch"])
    if expect is not None:
        _check_arch(config, expect)

    blob = raw[16 + hlen :]
    state = {}
    for entry in header["tensors"]:
        seg = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        state[entry["name"]] = etns.tensor_from_bytes(seg, path=f"{path}:{entry['name']}")
    model = TwoStreamModel(config)
    model.load_state(state)
    return model


def swap_head(model: TwoStreamModel, seed: int = 0) -> TwoStreamModel:
    """Reinitialize only the terminal fully-connected layer and force a
    sigmoid output; backbone weights are untouched.  This is the hook
    for reusing regression-pretrained backbones for risk prediction."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x4EAD)))
    new_config = ModelConfig(**{**model.config.to_dict(),
                                "head_activation": "sigmoid",
                                "block_counts": model.config.block_counts})
    new_model = TwoStreamModel(new_config)
    state = model.state_dict()
    state["head.weight"] = xavier_init(model.head.params["weight"].shape, rng, model.dtype)
    state["head.bias"] = np.zeros_like(model.head.params["bias"])
    new_model.load_state(state)
    return new_model
