"""Res-BRNet: three spatial blocks, four residual blocks, then an FC head."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import functional as F
from .autograd import Tensor, relu
from .errors import ConfigError, ShapeError
from .layers import DenseLayer, PoolSpec, ResidualBlock, SpatialBlock

NUM_SPATIAL_BLOCKS = 3
NUM_RESIDUAL_BLOCKS = 4


@dataclass
class SpatialBlockSpec:
    filters: int
    pool: PoolSpec
    kernel: int = 3


@dataclass
class ResidualBlockSpec:
    filters: int
    downsample: Optional[PoolSpec] = None
    kernel: int = 3


@dataclass
class FCSpec:
    width: int
    dropout_rate: float = 0.5


@dataclass
class ResBRNetConfig:
    input: tuple = (1, 227, 227)
    spatial_blocks: list = field(default_factory=list)
    residual_blocks: list = field(default_factory=list)
    fc: list = field(default_factory=list)
    num_classes: int = 4
    head: str = "gap"  # "gap" (global average pool) or "flatten"

    def validate(self) -> None:
        if len(self.input) != 3 or any(int(d) < 1 for d in self.input):
            raise ConfigError(f"input must be (channels, height, width) with positive dims, got {self.input}")
        if len(self.spatial_blocks) != NUM_SPATIAL_BLOCKS:
            raise ConfigError(f"Res-BRNet needs {NUM_SPATIAL_BLOCKS} spatial blocks, got {len(self.spatial_blocks)}")
        if len(self.residual_blocks) != NUM_RESIDUAL_BLOCKS:
            raise ConfigError(
                f"Res-BRNet needs {NUM_RESIDUAL_BLOCKS} residual blocks, got {len(self.residual_blocks)}"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.head not in ("gap", "flatten"):
            raise ConfigError(f"head must be 'gap' or 'flatten', got {self.head!r}")
        for spec in list(self.spatial_blocks) + list(self.residual_blocks):
            if spec.filters < 1 or spec.kernel < 1:
                raise ConfigError(f"block filters and kernel must be positive: {spec}")
        for spec in self.fc:
            if spec.width < 1 or not 0.0 <= spec.dropout_rate < 1.0:
                raise ConfigError(f"bad FC spec {spec}")

    def to_dict(self) -> dict:
        return {
            "input": list(self.input),
            "spatial_blocks": [
                {"filters": s.filters, "kernel": s.kernel, "pool": s.pool.to_dict()} for s in self.spatial_blocks
            ],
            "residual_blocks": [
                {
                    "filters": r.filters,
                    "kernel": r.kernel,
                    "downsample": None if r.downsample is None else r.downsample.to_dict(),
                }
                for r in self.residual_blocks
            ],
            "fc": [{"width": f.width, "dropout_rate": f.dropout_rate} for f in self.fc],
            "num_classes": self.num_classes,
            "head": self.head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResBRNetConfig":
        try:
            return cls(
                input=tuple(int(v) for v in d["input"]),
                spatial_blocks=[
                    SpatialBlockSpec(int(s["filters"]), PoolSpec.from_dict(s["pool"]), int(s.get("kernel", 3)))
                    for s in d["spatial_blocks"]
                ],
                residual_blocks=[
                    ResidualBlockSpec(int(r["filters"]), PoolSpec.from_dict(r.get("downsample")), int(r.get("kernel", 3)))
                    for r in d["residual_blocks"]
                ],
                fc=[FCSpec(int(f["width"]), float(f.get("dropout_rate", 0.5))) for f in d["fc"]],
                num_classes=int(d.get("num_classes", 4)),
                head=d.get("head", "gap"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


def canonical_config(input_shape=(1, 227, 227), num_classes: int = 4) -> ResBRNetConfig:
    """Full-size architecture: filters 32/64/128 then 128/128/256/256, FC 256."""
    return ResBRNetConfig(
        input=tuple(input_shape),
        spatial_blocks=[
            SpatialBlockSpec(32, PoolSpec("avg")),
            SpatialBlockSpec(64, PoolSpec("max")),
            SpatialBlockSpec(128, PoolSpec("avg")),
        ],
        residual_blocks=[
            ResidualBlockSpec(128),
            ResidualBlockSpec(128, PoolSpec("max")),
            ResidualBlockSpec(256),
            ResidualBlockSpec(256, PoolSpec("max")),
        ],
        fc=[FCSpec(256, 0.5)],
        num_classes=num_classes,
    )


def desk_config(input_shape=(1, 64, 64), num_classes: int = 4) -> ResBRNetConfig:
    """Laptop-scale variant: filters 8/16/32 then 32/32/64/64, FC 64."""
    return ResBRNetConfig(
        input=tuple(input_shape),
        spatial_blocks=[
            SpatialBlockSpec(8, PoolSpec("avg")),
            SpatialBlockSpec(16, PoolSpec("max")),
            SpatialBlockSpec(32, PoolSpec("avg")),
        ],
        residual_blocks=[
            ResidualBlockSpec(32),
            ResidualBlockSpec(32, PoolSpec("max")),
            ResidualBlockSpec(64),
            ResidualBlockSpec(64, PoolSpec("max")),
        ],
        fc=[FCSpec(64, 0.5)],
        num_classes=num_classes,
    )


ARCHITECTURES = {"canonical": canonical_config, "desk": desk_config}


class Model:
    """An instantiated Res-BRNet with stable, unique parameter names."""

    def __init__(self, cfg: ResBRNetConfig, spatial, residual, fc, classifier):
        self.cfg = cfg
        self.spatial: list[SpatialBlock] = spatial
        self.residual: list[ResidualBlock] = residual
        self.fc: list[tuple[DenseLayer, float]] = fc
        self.classifier: DenseLayer = classifier

    @property
    def dtype(self):
        return self.classifier.weight.dtype

    def _named_parts(self):
        for i, blk in enumerate(self.spatial, 1):
            yield f"spatial{i}", blk
        for i, blk in enumerate(self.residual, 1):
            yield f"residual{i}", blk
        for i, (layer, _) in enumerate(self.fc, 1):
            yield f"fc{i}", layer
        yield "classifier", self.classifier

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, part in self._named_parts():
            out.update(part.parameters(name))
        return out

    def buffers(self) -> dict[str, Tensor]:
        out = {}
        for name, part in self._named_parts():
            out.update(part.buffers(name))
        return out

    def state(self) -> dict[str, Tensor]:
        """Parameters followed by batchnorm running statistics, in a fixed order."""
        out = self.parameters()
        out.update(self.buffers())
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.state().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        state = self.state()
        missing = set(state) - set(arrays)
        extra = set(arrays) - set(state)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in state.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: expected shape {list(t.shape)}, got {list(arr.shape)}")
            t.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def forward(self, batch, mode: str = "infer", seed: int = 0, return_features: bool = False):
        """Logits ``[B, num_classes]``; with ``return_features`` also the
        activations feeding the final classifier."""
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        expected = tuple(self.cfg.input)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"expected input [B, {', '.join(map(str, expected))}], got {list(x.shape)}")
        for blk in self.spatial:
            x = blk(x, mode)
        for blk in self.residual:
            x = blk(x, mode)
        x = F.global_avg_pool(x) if self.cfg.head == "gap" else F.flatten(x)
        keys = seed if isinstance(seed, tuple) else (seed,)
        for i, (layer, rate) in enumerate(self.fc):
            x = F.dropout(relu(layer(x)), rate, mode, seed=keys + (i,))
        logits = self.classifier(x)
        return (logits, x) if return_features else logits

    __call__ = forward


def forward(model: Model, batch, mode: str = "infer", seed: int = 0) -> Tensor:
    return model.forward(batch, mode, seed)


def build_res_brnet(cfg: ResBRNetConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate ``cfg`` with He-initialised parameters drawn from ``seed``."""
    cfg.validate()
    channels, h, w = (int(d) for d in cfg.input)

    spatial = []
    for i, spec in enumerate(cfg.spatial_blocks):
        blk = SpatialBlock.init(channels, spec.filters, spec.kernel, spec.pool, seed=(seed, 1, i), dtype=dtype)
        h_conv, w_conv = blk.conv.output_size(h), blk.conv.output_size(w)
        if min(h_conv, w_conv) < spec.pool.window:
            raise ConfigError(f"spatial block {i + 1}: pool window {spec.pool.window} exceeds {h_conv}x{w_conv}")
        h, w = blk.output_size(h), blk.output_size(w)
        spatial.append(blk)
        channels = spec.filters

    residual = []
    for i, spec in enumerate(cfg.residual_blocks):
        blk = ResidualBlock.init(
            channels, spec.filters, seed=(seed, 2, i), kernel=spec.kernel, downsample=spec.downsample, dtype=dtype
        )
        if spec.downsample is not None and min(h, w) < spec.downsample.window:
            raise ConfigError(f"residual block {i + 1}: downsample window exceeds {h}x{w}")
        h, w = blk.output_size(h), blk.output_size(w)
        residual.append(blk)
        channels = spec.filters

    features = channels if cfg.head == "gap" else channels * h * w
    fc = []
    for i, spec in enumerate(cfg.fc):
        fc.append((DenseLayer.init(features, spec.width, seed=(seed, 3, i), dtype=dtype), spec.dropout_rate))
        features = spec.width
    classifier = DenseLayer.init(features, cfg.num_classes, seed=(seed, 4), dtype=dtype)
    return Model(cfg, spatial, residual, fc, classifier)
