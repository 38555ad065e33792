"""1D-conv residual network: three conv blocks, global average pooling and a
two-way softmax head, plus the versioned binary save format."""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterator, Optional, Union

import numpy as np

from .layers import BatchNorm1D, Conv1D, Dense, GlobalAvgPool1D, Layer, ReLU, softmax

MAGIC = b"APTM"
FORMAT_VERSION = 1
MIN_WIDTH = 8

DESK_FILTERS = (8, 16, 8)
FULL_FILTERS = (128, 256, 128)


@dataclass
class ModelConfig:
    in_channels: int
    filters: tuple[int, int, int] = DESK_FILTERS
    kernels: tuple[int, int, int] = (8, 5, 3)
    n_blocks: int = 3
    residual: bool = True
    n_classes: int = 2
    width: int = 16
    bn_momentum: float = 0.9
    bn_eps: float = 1e-3

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        self.kernels = tuple(int(k) for k in self.kernels)
        if len(self.filters) != 3 or len(self.kernels) != 3:
            raise ValueError("a block has exactly three conv layers")
        if min(self.filters) < 1 or self.in_channels < 1 or self.n_blocks < 1:
            raise ValueError("channel and block counts must be positive")
        if self.width < max(self.kernels):
            raise ValueError(f"window width must be at least {max(self.kernels)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["kernels"] = list(self.kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ResidualBlock:
    """conv-BN-ReLU, conv-BN-ReLU, conv-BN, add shortcut, ReLU."""

    def __init__(self, in_channels: int, cfg: ModelConfig, rng: np.random.Generator):
        f, k = cfg.filters, cfg.kernels
        chans = (in_channels,) + f
        self.convs = [Conv1D(chans[i], chans[i + 1], k[i], rng) for i in range(3)]
        self.bns = [BatchNorm1D(c, cfg.bn_momentum, cfg.bn_eps) for c in f]
        self.relus = [ReLU(), ReLU(), ReLU()]
        self.residual = cfg.residual
        self.proj: Optional[tuple[Conv1D, BatchNorm1D]] = None
        if cfg.residual and in_channels != f[2]:
            self.proj = (Conv1D(in_channels, f[2], 1, rng),
                         BatchNorm1D(f[2], cfg.bn_momentum, cfg.bn_eps))
        self.frozen = False

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        for i in range(3):
            yield f"conv{i}", self.convs[i]
            yield f"bn{i}", self.bns[i]
        if self.proj is not None:
            yield "proj_conv", self.proj[0]
            yield "proj_bn", self.proj[1]

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        # frozen blocks always run batch norm on running statistics
        training = training and not self.frozen
        h = x
        for i in range(3):
            h = self.bns[i].forward(self.convs[i].forward(h, training), training)
            if i < 2:
                h = self.relus[i].forward(h)
        if self.residual:
            if self.proj is None:
                h = h + x
            else:
                h = h + self.proj[1].forward(self.proj[0].forward(x, training), training)
        return self.relus[2].forward(h)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dh = self.relus[2].backward(dout)
        dshort = None
        if self.residual:
            if self.proj is None:
                dshort = dh
            else:
                dshort = self.proj[0].backward(self.proj[1].backward(dh))
        for i in (2, 1, 0):
            if i < 2:
                dh = self.relus[i].backward(dh)
            dh = self.convs[i].backward(self.bns[i].backward(dh))
        return dh if dshort is None else dh + dshort


class ResNet1D:
    """Input ``(n, channels, width)``; output logits ``(n, n_classes)``."""

    def __init__(self, config: ModelConfig, seed: Union[int, np.random.Generator] = 0):
        self.config = config
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.blocks = []
        ch = config.in_channels
        for _ in range(config.n_blocks):
            self.blocks.append(ResidualBlock(ch, config, rng))
            ch = config.filters[2]
        self.gap = GlobalAvgPool1D()
        self.head = Dense(ch, config.n_classes, rng)

    # -- parameters ------------------------------------------------------------

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        for b, block in enumerate(self.blocks):
            for name, layer in block.named_layers():
                yield f"block{b}.{name}", layer
        yield "head", self.head

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every weight tensor, running stats included, in declaration order."""
        for lname, layer in self.named_layers():
            for k, v in layer.params.items():
                yield f"{lname}.{k}", v
            for k, v in layer.buffers.items():
                yield f"{lname}.{k}", v

    def trainable_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        pairs = []
        for block in self.blocks:
            if block.frozen:
                continue
            for _, layer in block.named_layers():
                pairs.extend((layer.params[k], layer.grads[k]) for k in layer.params)
        pairs.extend((self.head.params[k], self.head.grads[k]) for k in self.head.params)
        return pairs

    @property
    def frozen_mask(self) -> list[bool]:
        return [b.frozen for b in self.blocks]

    def freeze(self, n_trainable_blocks: int = 0) -> None:
        """Freeze all conv blocks except the last ``n_trainable_blocks``."""
        n = len(self.blocks)
        for i, block in enumerate(self.blocks):
            block.frozen = i < n - n_trainable_blocks

    def copy(self) -> "ResNet1D":
        return copy.deepcopy(self)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_tensors()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for lname, layer in self.named_layers():
            for store in (layer.params, layer.buffers):
                for k in store:
                    src = state[f"{lname}.{k}"]
                    if src.shape != store[k].shape:
                        raise ValueError(f"shape mismatch for {lname}.{k}")
                    # params are updated in place so optimizer references stay valid
                    store[k][...] = src

    # -- compute ---------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected input (n, {self.config.in_channels}, width), "
                             f"got {x.shape}")
        if x.shape[2] < MIN_WIDTH:
            raise ValueError(f"window width {x.shape[2]} is below the minimum {MIN_WIDTH}")
        return x

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        h = self._check_input(x)
        for block in self.blocks:
            h = block.forward(h, training)
        return self.head.forward(self.gap.forward(h), training)

    def backward(self, dlogits: np.ndarray) -> None:
        d = self.gap.backward(self.head.backward(dlogits))
        for block in reversed(self.blocks):
            if block.frozen and all(b.frozen for b in self.blocks[:self.blocks.index(block)]):
                break  # nothing upstream needs a gradient
            d = block.backward(d)

    def predict_proba(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        x = self._check_input(x)
        out = [softmax(self.forward(x[i:i + batch_size], training=False))
               for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.config.n_classes))
        return np.concatenate(out)

    # -- serialization -----------------------------------------------------------

    def to_bytes(self, extra: Optional[dict[str, Any]] = None) -> bytes:
        header = {"config": self.config.to_dict(), "frozen": self.frozen_mask,
                  "extra": extra or {}}
        cfg = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", FORMAT_VERSION, len(cfg)))
        buf.write(cfg)
        for _, t in self.named_tensors():
            buf.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["ResNet1D", dict[str, Any]]:
        if data[:4] != MAGIC:
            raise ValueError("not a model file (bad magic)")
        version, n = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        header = json.loads(data[12:12 + n])
        model = cls(ModelConfig.from_dict(header["config"]))
        for block, frozen in zip(model.blocks, header["frozen"]):
            block.frozen = bool(frozen)
        off = 12 + n
        for _, t in model.named_tensors():
            size = t.size * 8
            if off + size > len(data):
                raise ValueError("model file truncated")
            t[...] = np.frombuffer(data, dtype="<f8", count=t.size, offset=off).reshape(t.shape)
            off += size
        if off != len(data):
            raise ValueError("trailing bytes in model file")
        return model, header["extra"]

    def save(self, path: Union[str, Path], extra: Optional[dict[str, Any]] = None) -> None:
        Path(path).write_bytes(self.to_bytes(extra))

    @classmethod
    def load(cls, path: Union[str, Path]) -> tuple["ResNet1D", dict[str, Any]]:
        return cls.from_bytes(Path(path).read_bytes())
