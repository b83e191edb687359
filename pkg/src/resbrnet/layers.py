"""Parameterised layers and the two Res-BRNet building blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import functional as F
from .autograd import Tensor, add, create, relu
from .errors import ShapeError


@dataclass(frozen=True)
class PoolSpec:
    kind: str  # "max" or "avg"
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.kind not in ("max", "avg"):
            raise ValueError(f"pool kind must be 'max' or 'avg', got {self.kind!r}")
        if self.window < 1 or self.stride < 1:
            raise ValueError("pool window and stride must be positive")

    def __call__(self, x: Tensor) -> Tensor:
        return F.pool2d(x, self.kind, self.window, self.stride)

    def output_size(self, size: int) -> int:
        return F.pool_output_size(size, self.window, self.stride)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "window": self.window, "stride": self.stride}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["PoolSpec"]:
        return None if d is None else cls(d["kind"], int(d.get("window", 2)), int(d.get("stride", 2)))


@dataclass
class Conv2DLayer:
    weight: Tensor  # [out_ch, in_ch, r, s]
    bias: Tensor  # [out_ch]
    stride: int = 1
    padding: str = "same"

    @classmethod
    def init(cls, in_ch, out_ch, kernel, seed, stride=1, padding="same", dtype=np.float32):
        """He-initialised weights drawn from ``seed``; zero bias."""
        if kernel < 1 or in_ch < 1 or out_ch < 1:
            raise ShapeError("conv dimensions must be >= 1")
        w = create(
            (out_ch, in_ch, kernel, kernel), "he_normal", fan_in=in_ch * kernel * kernel,
            seed=seed, dtype=dtype, requires_grad=True,
        )
        b = create((out_ch,), "zeros", dtype=dtype, requires_grad=True)
        return cls(w, b, stride, padding)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def output_size(self, size: int) -> int:
        return F.conv_output_size(size, self.weight.shape[2], self.stride, self.padding)

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def buffers(self, prefix: str) -> dict:
        return {}


@dataclass
class BatchNormLayer:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def init(cls, channels, dtype=np.float32, eps=1e-5, momentum=0.9):
        return cls(
            create((channels,), "ones", dtype=dtype, requires_grad=True),
            create((channels,), "zeros", dtype=dtype, requires_grad=True),
            create((channels,), "zeros", dtype=dtype),
            create((channels,), "ones", dtype=dtype),
            eps,
            momentum,
        )

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return F.batchnorm(
            x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
            mode=mode, eps=self.eps, momentum=self.momentum,
        )

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def buffers(self, prefix: str) -> dict:
        return {f"{prefix}.running_mean": self.running_mean, f"{prefix}.running_var": self.running_var}


@dataclass
class DenseLayer:
    weight: Tensor  # [in_features, out_features]
    bias: Tensor

    @classmethod
    def init(cls, in_features, out_features, seed, dtype=np.float32):
        w = create(
            (in_features, out_features), "he_normal", fan_in=in_features,
            seed=seed, dtype=dtype, requires_grad=True,
        )
        return cls(w, create((out_features,), "zeros", dtype=dtype, requires_grad=True))

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return F.dense(x, self.weight, self.bias)

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def buffers(self, prefix: str) -> dict:
        return {}


def _collect(parts, prefix, kind):
    out = {}
    for name, part in parts:
        if part is not None:
            out.update(getattr(part, kind)(f"{prefix}.{name}"))
    return out


@dataclass
class SpatialBlock:
    """conv -> batchnorm -> ReLU -> pool, with no skip path."""

    conv: Conv2DLayer
    bn: BatchNormLayer
    pool: PoolSpec

    @classmethod
    def init(cls, in_ch, filters, kernel, pool, seed, dtype=np.float32):
        return cls(
            Conv2DLayer.init(in_ch, filters, kernel, seed=seed, dtype=dtype),
            BatchNormLayer.init(filters, dtype=dtype),
            pool,
        )

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return self.pool(relu(self.bn(self.conv(x), mode)))

    def output_size(self, size: int) -> int:
        return self.pool.output_size(self.conv.output_size(size))

    def _parts(self):
        return [("conv", self.conv), ("bn", self.bn)]

    def parameters(self, prefix: str) -> dict:
        return _collect(self._parts(), prefix, "parameters")

    def buffers(self, prefix: str) -> dict:
        return _collect(self._parts(), prefix, "buffers")


@dataclass
class ResidualBlock:
    """Post-activation residual unit ``relu(f(x) + proj(x))``.

    ``f`` is conv-BN-ReLU-conv-BN; ``proj`` is the identity unless the channel
    count changes, in which case it is a 1x1 conv followed by BN. An optional
    pool downsamples after the final ReLU.
    """

    conv1: Conv2DLayer
    bn1: BatchNormLayer
    conv2: Conv2DLayer
    bn2: BatchNormLayer
    proj_conv: Optional[Conv2DLayer] = None
    proj_bn: Optional[BatchNormLayer] = None
    downsample: Optional[PoolSpec] = field(default=None)

    @classmethod
    def init(cls, in_ch, filters, seed, kernel=3, downsample=None, dtype=np.float32):
        keys = seed if isinstance(seed, tuple) else (seed,)
        proj_conv = proj_bn = None
        if in_ch != filters:
            proj_conv = Conv2DLayer.init(in_ch, filters, 1, seed=keys + (2,), dtype=dtype)
            proj_bn = BatchNormLayer.init(filters, dtype=dtype)
        return cls(
            Conv2DLayer.init(in_ch, filters, kernel, seed=keys + (0,), dtype=dtype),
            BatchNormLayer.init(filters, dtype=dtype),
            Conv2DLayer.init(filters, filters, kernel, seed=keys + (1,), dtype=dtype),
            BatchNormLayer.init(filters, dtype=dtype),
            proj_conv,
            proj_bn,
            downsample,
        )

    @property
    def out_channels(self) -> int:
        return self.conv2.out_channels

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        h = relu(self.bn1(self.conv1(x), mode))
        h = self.bn2(self.conv2(h), mode)
        skip = x if self.proj_conv is None else self.proj_bn(self.proj_conv(x), mode)
        y = relu(add(h, skip))
        return y if self.downsample is None else self.downsample(y)

    def output_size(self, size: int) -> int:
        size = self.conv2.output_size(self.conv1.output_size(size))
        return size if self.downsample is None else self.downsample.output_size(size)

    def _parts(self):
        return [
            ("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2),
            ("proj.conv", self.proj_conv), ("proj.bn", self.proj_bn),
        ]

    def parameters(self, prefix: str) -> dict:
        return _collect(self._parts(), prefix, "parameters")

    def buffers(self, prefix: str) -> dict:
        return _collect(self._parts(), prefix, "buffers")
