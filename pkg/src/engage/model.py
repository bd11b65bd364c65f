"""The five-layer engagement CNN: four conv blocks and a softmax classifier.

Each block is conv(3x5, same) -> batch norm -> ReLU -> max-pool(2x3); dropout
follows the last block, then flatten and a fully connected layer to two
logits.  Class 1 is "engaged".

Checkpoint layout (little-endian)::

    b"CECN" | u32 version | u32 header length | header JSON | float32 parameter blob

The blob concatenates, per block, conv weight, conv bias, BN gamma, BN beta,
BN running mean, BN running var; then linear weight and bias.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import Trial
from .errors import FormatError

CHECKPOINT_MAGIC = b"CECN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    conv_channels: tuple = (8, 16, 32, 64)
    kernel: tuple = (3, 5)
    pool: tuple = (2, 3)
    dropout: float = 0.5
    input_shape: tuple = (128, 600)
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "pool", tuple(self.pool))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.conv_channels) != 4 or min(self.conv_channels) < 1:
            raise ValueError(f"need exactly 4 positive conv channel counts, got {self.conv_channels}")
        if self.kernel != (3, 5):
            raise ValueError(f"kernel is fixed at (3, 5), got {self.kernel}")
        if self.pool != (2, 3):
            raise ValueError(f"pooling is fixed at (2, 3), got {self.pool}")
        if self.n_classes != 2:
            raise ValueError("only two-class heads are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        h, w = self.feature_map_shapes()[-1][1:]
        if h < 1 or w < 1:
            raise ValueError(f"input shape {self.input_shape} too small for four pooling stages")

    def feature_map_shapes(self) -> list[tuple[int, int, int]]:
        """(channels, H, W) after each conv block."""
        h, w = self.input_shape
        shapes = []
        for c in self.conv_channels:
            h, w = h // self.pool[0], w // self.pool[1]
            shapes.append((c, h, w))
        return shapes

    @property
    def flat_features(self) -> int:
        c, h, w = self.feature_map_shapes()[-1]
        return c * h * w

    def parameter_count(self, include_running_stats: bool = True) -> int:
        kh, kw = self.kernel
        total, c_in = 0, 1
        per_bn = 4 if include_running_stats else 2
        for c in self.conv_channels:
            total += c * c_in * kh * kw + c + per_bn * c
            c_in = c
        return total + self.flat_features * self.n_classes + self.n_classes

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class CENet:
    def __init__(self, config: ArchitectureConfig, seed: int = 0, dtype=np.float32, fused: bool = True):
        self.config = config
        self.fused = fused
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.blocks = []
        c_in = 1
        for i, c in enumerate(config.conv_channels):
            self.blocks.append([
                nn.Conv2d(c_in, c, config.kernel, rng=rng, dtype=dtype, input_grad=i > 0),
                nn.BatchNorm2d(c, dtype=dtype),
                nn.ReLU(),
                nn.MaxPool2d(config.pool),
            ])
            c_in = c
        # same parameters, one pass for bn -> relu -> pool
        self.fused_tails = [nn.BatchNormReluPool(bn, pool) for _, bn, _, pool in self.blocks]
        self.dropout = nn.Dropout(config.dropout, rng=np.random.default_rng([seed, 1]))
        self.flatten = nn.Flatten()
        self.fc = nn.Linear(config.flat_features, config.n_classes, rng=rng, dtype=dtype)
        self.metadata: dict = {"seed": seed}

    @property
    def layers(self):
        out = [layer for block in self.blocks for layer in block]
        return out + [self.dropout, self.flatten, self.fc]

    def named_arrays(self, include_buffers: bool = True):
        """(name, array) pairs in checkpoint order; arrays are live references."""
        out = []
        for i, (conv, bn, _, _) in enumerate(self.blocks):
            out += [(f"block{i}.conv.weight", conv.params["weight"]),
                    (f"block{i}.conv.bias", conv.params["bias"]),
                    (f"block{i}.bn.gamma", bn.params["gamma"]),
                    (f"block{i}.bn.beta", bn.params["beta"])]
            if include_buffers:
                out += [(f"block{i}.bn.running_mean", bn.buffers["running_mean"]),
                        (f"block{i}.bn.running_var", bn.buffers["running_var"])]
        out += [("fc.weight", self.fc.params["weight"]), ("fc.bias", self.fc.params["bias"])]
        return out

    def parameters(self) -> dict:
        return dict(self.named_arrays(include_buffers=False))

    def gradients(self) -> dict:
        grads = {}
        for i, (conv, bn, _, _) in enumerate(self.blocks):
            grads[f"block{i}.conv.weight"] = conv.grads["weight"]
            grads[f"block{i}.conv.bias"] = conv.grads["bias"]
            grads[f"block{i}.bn.gamma"] = bn.grads["gamma"]
            grads[f"block{i}.bn.beta"] = bn.grads["beta"]
        grads["fc.weight"] = self.fc.grads["weight"]
        grads["fc.bias"] = self.fc.grads["bias"]
        return grads

    def forward(self, x, training: bool = False, return_blocks: bool = False):
        """Logits for a batch ``(N, 1, H, W)``; optionally also each block's output."""
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != self.config.input_shape:
            raise ValueError(f"expected (N, 1, {self.config.input_shape[0]}, {self.config.input_shape[1]}) "
                             f"input, got {x.shape}")
        block_out = []
        for block, tail in zip(self.blocks, self.fused_tails):
            if self.fused:
                x = tail.forward(block[0].forward(x, training), training)
            else:
                for layer in block:
                    x = layer.forward(x, training)
            block_out.append(x)
        x = self.dropout.forward(x, training)
        x = self.flatten.forward(x, training)
        logits = self.fc.forward(x, training)
        return (logits, block_out) if return_blocks else logits

    def backward(self, dlogits):
        d = self.fc.backward(dlogits.astype(self.fc.params["weight"].dtype))
        d = self.flatten.backward(d)
        d = self.dropout.backward(d)
        for block, tail in zip(reversed(self.blocks), reversed(self.fused_tails)):
            layers = [block[0], tail] if self.fused else block
            for layer in reversed(layers):
                d = layer.backward(d)
                if d is None:
                    break

    def probabilities(self, x, batch_size: int = 32) -> np.ndarray:
        """Eval-mode class probabilities, computed in chunks of ``batch_size``."""
        x = np.asarray(x)
        if len(x) == 0:
            return np.empty((0, 2))
        return np.concatenate([nn.softmax(self.forward(x[s:s + batch_size]))
                               for s in range(0, len(x), batch_size)])


def build_model(config: ArchitectureConfig | None = None, seed: int = 0, dtype=np.float32,
                fused: bool = True) -> CENet:
    return CENet(config or ArchitectureConfig(), seed=seed, dtype=dtype, fused=fused)


def _trial_array(trial, shape, index=None):
    data = trial.data if isinstance(trial, Trial) else trial
    data = np.asarray(data)
    if data.shape != shape:
        where = "" if index is None else f"trial {index}: "
        raise ValueError(f"{where}expected shape {shape}, got {data.shape}")
    return data


def _decide(p_engaged: float) -> int:
    # exact ties go to "disengaged"
    return 1 if p_engaged > 0.5 else 0


def predict(model: CENet, trial) -> tuple[float, int]:
    data = _trial_array(trial, model.config.input_shape)
    p = float(model.probabilities(data[None, None])[0, 1])
    return p, _decide(p)


def predict_batch(model: CENet, trials, batch_size: int = 32) -> list[tuple[float, int]]:
    shape = model.config.input_shape
    if len(trials) == 0:
        return []
    if isinstance(trials, np.ndarray):
        if trials.ndim == 3:
            trials = trials[:, None]
        if trials.shape[1:] != (1, *shape):
            raise ValueError(f"expected (N, 1, {shape[0]}, {shape[1]}) array, got {trials.shape}")
        p = model.probabilities(trials, batch_size)[:, 1]
    else:
        out = []
        for s in range(0, len(trials), batch_size):
            chunk = np.stack([_trial_array(t, shape, s + i) for i, t in enumerate(trials[s:s + batch_size])])
            out.append(model.probabilities(chunk[:, None], batch_size)[:, 1])
        p = np.concatenate(out)
    return [(float(pi), _decide(pi)) for pi in p]


def save_checkpoint(model: CENet, path) -> None:
    header = {"config": model.config.to_dict(), "metadata": model.metadata,
              "arrays": [[name, list(a.shape)] for name, a in model.named_arrays()]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, a in model.named_arrays():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> CENet:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r}", 0)
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated checkpoint header", len(raw))
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}", 4)
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        config = ArchitectureConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})", 12) from exc
    model = build_model(config, seed=header.get("metadata", {}).get("seed", 0))
    model.metadata = header.get("metadata", {})
    offset = 12 + header_len
    for name, a in model.named_arrays():
        nbytes = a.size * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated while reading {name}", len(raw))
        a[...] = np.frombuffer(raw, dtype="<f4", count=a.size, offset=offset).reshape(a.shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes", offset)
    return model
