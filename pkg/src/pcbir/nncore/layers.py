"""Layers, parameters and sequential networks built from :class:`LayerSpec`."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    conv2d,
    conv_output_size,
    conv_transpose2d,
    conv_transpose_output_size,
)

LAYER_KINDS = (
    "conv2d",
    "transposed_conv2d",
    "instance_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "residual_block",
)

INIT_STD = 0.02


class ShapeError(ValueError):
    """Input shape does not fit a layer."""


class Parameter(Tensor):
    """A trainable leaf tensor carrying its adaptive-moment state."""

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)
        self.first_moment = np.zeros_like(self.data)
        self.second_moment = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self


@contextmanager
def frozen(params: Iterable[Parameter]):
    """Stop gradients from reaching ``params`` for the duration of the block."""
    params = list(params)
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, prev):
            p.requires_grad = flag


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``channels`` is the output channel count for convolutions and the
    working channel count for residual blocks; it is ignored elsewhere.
    """

    kind: str
    channels: int | None = None
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    slope: float = 0.2
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.kind in ("conv2d", "transposed_conv2d") and not self.channels:
            raise ValueError(f"{self.kind} needs a positive channel count")


class Layer:
    spec: LayerSpec
    name: str

    def parameters(self) -> list[Parameter]:
        return []

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        return in_shape

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


def _resolve_std(init_std: float | None, fan_in: int) -> float:
    # None selects He initialisation, sqrt(2 / fan_in)
    return float(np.sqrt(2.0 / fan_in)) if init_std is None else init_std


class Conv2d(Layer):
    def __init__(self, spec: LayerSpec, in_channels: int, rng: np.random.Generator, name: str,
                 init_std: float | None = INIT_STD):
        self.spec, self.name, self.in_channels = spec, name, in_channels
        k = spec.kernel
        std = _resolve_std(init_std, in_channels * k * k)
        self.weight = Parameter(rng.normal(0.0, std, (spec.channels, in_channels, k, k)),
                                name=f"{name}.weight")
        self.bias = Parameter(np.zeros(spec.channels), name=f"{name}.bias") if spec.bias else None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"layer {self.name}: expected {self.in_channels} channels, got {c}")
        s = self.spec
        ho = conv_output_size(h, s.kernel, s.stride, s.padding)
        wo = conv_output_size(w, s.kernel, s.stride, s.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"layer {self.name}: {h}x{w} input gives empty {ho}x{wo} output")
        return (s.channels, ho, wo)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class ConvTranspose2d(Layer):
    def __init__(self, spec: LayerSpec, in_channels: int, rng: np.random.Generator, name: str,
                 init_std: float | None = INIT_STD):
        self.spec, self.name, self.in_channels = spec, name, in_channels
        k = spec.kernel
        std = _resolve_std(init_std, in_channels * k * k)
        self.weight = Parameter(rng.normal(0.0, std, (in_channels, spec.channels, k, k)),
                                name=f"{name}.weight")
        self.bias = Parameter(np.zeros(spec.channels), name=f"{name}.bias") if spec.bias else None

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"layer {self.name}: expected {self.in_channels} channels, got {c}")
        s = self.spec
        ho = conv_transpose_output_size(h, s.kernel, s.stride, s.padding, s.output_padding)
        wo = conv_transpose_output_size(w, s.kernel, s.stride, s.padding, s.output_padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"layer {self.name}: {h}x{w} input gives empty {ho}x{wo} output")
        return (s.channels, ho, wo)

    def forward(self, x):
        s = self.spec
        return conv_transpose2d(x, self.weight, self.bias, s.stride, s.padding, s.output_padding)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    return centered * (var + eps) ** -0.5


class InstanceNorm(Layer):
    """Per-sample, per-channel normalisation over the spatial axes (no affine)."""

    def __init__(self, spec: LayerSpec, name: str, eps: float = 1e-5):
        self.spec, self.name, self.eps = spec, name, eps

    def forward(self, x):
        return instance_norm(x, self.eps)


class Activation(Layer):
    def __init__(self, spec: LayerSpec, name: str):
        self.spec, self.name = spec, name

    def forward(self, x):
        kind = self.spec.kind
        if kind == "relu":
            return x.relu()
        if kind == "leaky_relu":
            return x.leaky_relu(self.spec.slope)
        if kind == "tanh":
            return x.tanh()
        return x.sigmoid()


class ResidualBlock(Layer):
    """conv-norm-relu-conv-norm with an identity skip; channel count is preserved."""

    def __init__(self, spec: LayerSpec, in_channels: int, rng: np.random.Generator, name: str,
                 init_std: float | None = INIT_STD):
        self.spec, self.name = spec, name
        ch = spec.channels or in_channels
        if ch != in_channels:
            raise ShapeError(f"layer {name}: residual block needs {ch} channels in, got {in_channels}")
        conv = LayerSpec("conv2d", channels=ch, kernel=spec.kernel, padding=spec.kernel // 2)
        self.conv1 = Conv2d(conv, ch, rng, f"{name}.conv1", init_std)
        self.conv2 = Conv2d(conv, ch, rng, f"{name}.conv2", init_std)

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def output_shape(self, in_shape):
        mid = self.conv1.output_shape(in_shape)
        out = self.conv2.output_shape(mid)
        if out != in_shape:
            raise ShapeError(f"layer {self.name}: residual path changes shape {in_shape} -> {out}")
        return out

    def forward(self, x):
        h = instance_norm(self.conv1(x)).relu()
        return x + instance_norm(self.conv2(h))


@dataclass
class Network:
    """A sequential stack of layers with a declared (C, H, W) input shape."""

    layers: list[Layer]
    input_shape: tuple[int, int, int]
    name: str = "net"
    specs: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        self.output_shape = self.infer_shapes()[-1]

    def infer_shapes(self, input_shape: tuple[int, int, int] | None = None) -> list[tuple[int, int, int]]:
        shape = tuple(input_shape or self.input_shape)
        shapes = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected a (N, C, H, W) batch, got shape {x.shape}")
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            first = self.layers[0].name if self.layers else self.name
            raise ShapeError(f"{self.name}: input {tuple(x.shape[1:])} does not match declared "
                             f"{tuple(self.input_shape)} (first layer {first})")
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_scalars(self) -> int:
        return sum(p.size for p in self.parameters())


def build_network(specs: Sequence[LayerSpec], input_shape: tuple[int, int, int],
                  rng: np.random.Generator, name: str = "net", init_std: float | None = INIT_STD) -> Network:
    """Instantiate ``specs`` in order, validating shapes as layers are added.

    Convolution kernels are drawn from N(0, init_std), or He-scaled when
    ``init_std`` is None; biases start at zero.
    """
    layers: list[Layer] = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        lname = f"{name}.{i}.{spec.kind}"
        if spec.kind == "conv2d":
            layer: Layer = Conv2d(spec, shape[0], rng, lname, init_std)
        elif spec.kind == "transposed_conv2d":
            layer = ConvTranspose2d(spec, shape[0], rng, lname, init_std)
        elif spec.kind == "instance_norm":
            layer = InstanceNorm(spec, lname)
        elif spec.kind == "residual_block":
            layer = ResidualBlock(spec, shape[0], rng, lname, init_std)
        else:
            layer = Activation(spec, lname)
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Network(layers, tuple(input_shape), name, list(specs))


def iter_parameters(*networks: Network) -> Iterator[Parameter]:
    for net in networks:
        yield from net.parameters()
