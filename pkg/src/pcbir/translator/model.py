"""CycleGAN networks, configuration and the replay buffer of generated images."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..nncore import LayerSpec, Network, build_network, load_checkpoint, save_checkpoint
from ..nncore.layers import INIT_STD


@dataclass
class TranslatorConfig:
    lambda_cyc: float = 10.0
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 1
    batch_size: int = 1
    image_size: int = 64
    history_buffer_capacity: int = 50
    seed: int = 0
    visible_channels: int = 3
    ir_channels: int = 1
    gen_base_channels: int = 8
    gen_downsamplings: int = 2
    gen_residual_blocks: int = 3
    disc_base_channels: int = 8
    disc_layers: int = 3
    identity_weight: float = 0.0
    checkpoint_every: int = 1
    init_std: float = INIT_STD

    def __post_init__(self):
        if not self.lambda_cyc > 0:
            raise ValueError("lambda_cyc must be positive")
        if self.history_buffer_capacity < 0:
            raise ValueError("history_buffer_capacity must be >= 0")
        if self.image_size % (2 ** self.gen_downsamplings):
            raise ValueError("image_size must be divisible by 2**gen_downsamplings")
        if self.identity_weight and self.visible_channels != self.ir_channels:
            raise ValueError("identity loss needs equal channel counts in both domains")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def generator_specs(in_channels: int, out_channels: int, base: int = 8, downsamplings: int = 2,
                    residual_blocks: int = 3) -> list[LayerSpec]:
    """conv stem, strided downsampling, residual trunk, transposed upsampling, tanh head."""
    specs = [LayerSpec("conv2d", base, kernel=3, padding=1), LayerSpec("instance_norm"), LayerSpec("relu")]
    ch = base
    for _ in range(downsamplings):
        ch *= 2
        specs += [LayerSpec("conv2d", ch, kernel=3, stride=2, padding=1),
                  LayerSpec("instance_norm"), LayerSpec("relu")]
    specs += [LayerSpec("residual_block", ch, kernel=3) for _ in range(residual_blocks)]
    for _ in range(downsamplings):
        ch //= 2
        specs += [LayerSpec("transposed_conv2d", ch, kernel=3, stride=2, padding=1, output_padding=1),
                  LayerSpec("instance_norm"), LayerSpec("relu")]
    specs += [LayerSpec("conv2d", out_channels, kernel=3, padding=1), LayerSpec("tanh")]
    return specs


def discriminator_specs(base: int = 8, layers: int = 3) -> list[LayerSpec]:
    """Strided 4x4 convs ending in a one-channel sigmoid patch map."""
    specs = [LayerSpec("conv2d", base, kernel=4, stride=2, padding=1), LayerSpec("leaky_relu", slope=0.2)]
    ch = base
    for _ in range(layers - 1):
        ch *= 2
        specs += [LayerSpec("conv2d", ch, kernel=4, stride=2, padding=1),
                  LayerSpec("instance_norm"), LayerSpec("leaky_relu", slope=0.2)]
    specs += [LayerSpec("conv2d", 1, kernel=3, padding=1), LayerSpec("sigmoid")]
    return specs


@dataclass
class CycleGanModel:
    """G maps visible to infrared, F maps back; D_X and D_Y judge each domain."""

    G: Network
    F: Network
    D_X: Network
    D_Y: Network
    config: TranslatorConfig

    @classmethod
    def build(cls, config: TranslatorConfig, rng: np.random.Generator | None = None) -> CycleGanModel:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        s, cv, ci = config.image_size, config.visible_channels, config.ir_channels
        gen = dict(base=config.gen_base_channels, downsamplings=config.gen_downsamplings,
                   residual_blocks=config.gen_residual_blocks)
        disc = dict(base=config.disc_base_channels, layers=config.disc_layers)
        std = config.init_std
        G = build_network(generator_specs(cv, ci, **gen), (cv, s, s), rng, "G", std)
        F = build_network(generator_specs(ci, cv, **gen), (ci, s, s), rng, "F", std)
        D_X = build_network(discriminator_specs(**disc), (cv, s, s), rng, "D_X", std)
        D_Y = build_network(discriminator_specs(**disc), (ci, s, s), rng, "D_Y", std)
        return cls(G, F, D_X, D_Y, config)

    def generator_parameters(self):
        return self.G.parameters() + self.F.parameters()

    def discriminator_parameters(self):
        return self.D_X.parameters() + self.D_Y.parameters()

    def named_parameters(self) -> dict:
        out = {}
        for net in (self.G, self.F, self.D_X, self.D_Y):
            out.update(net.named_parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    def save(self, path: str | Path, step_index: int = 0, include_optimizer: bool = True,
             meta: dict | None = None, extra_arrays: dict | None = None) -> Path:
        header = {"kind": "cyclegan", "config": self.config.to_dict()}
        header.update(meta or {})
        return save_checkpoint(path, self.named_parameters(), step_index, include_optimizer,
                               header, extra_arrays)

    @classmethod
    def load(cls, path: str | Path) -> CycleGanModel:
        ckpt = load_checkpoint(path)
        if ckpt.meta.get("kind") != "cyclegan":
            raise ValueError(f"{path} is not a translator checkpoint")
        model = cls.build(TranslatorConfig(**ckpt.meta["config"]))
        ckpt.restore(model.named_parameters())
        return model


class HistoryBuffer:
    """Replay pool of past generated images for discriminator updates.

    Until full, each new image is stored and returned. Afterwards each
    image is, with probability one half, swapped for a random stored one
    (which it replaces). Capacity 0 passes images straight through.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.images: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.images)

    def query(self, batch: np.ndarray) -> np.ndarray:
        if self.capacity == 0:
            return batch
        out = []
        for img in batch:
            if len(self.images) < self.capacity:
                self.images.append(img.copy())
                out.append(img)
            elif self.rng.random() < 0.5:
                k = int(self.rng.integers(len(self.images)))
                out.append(self.images[k])
                self.images[k] = img.copy()
            else:
                out.append(img)
        return np.stack(out)
