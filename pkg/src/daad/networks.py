"""The DAAD generator (UNet-style autoencoder with block-wise memories on the
skip paths and the bottleneck) and the DCGAN-style discriminator.

Checkpoint names:

* ``enc.{l}.{0,1}.*``   encoder ConvBNReLU pair of scale ``l``
* ``dec.{l}.{0,1}.*``   decoder ConvBNReLU pair of stage ``l``, ``dec.{l}.2.*`` its ConvTranspose
* ``dec.0.{0,1,2}.*``   output head (two ConvBNReLU + 1x1 conv)
* ``mem.scale{l}.items`` memory bank of scale ``l``
* ``disc.{idx}.*``      discriminator convs in order; the last one is the classifier
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blockmem import BlockMemory, DivisionRates
from .nn import Conv2d, ConvBNAct, ConvBNReLU, ConvTranspose2d, Module
from .tensor import Tensor

VARIANTS = ("ae", "ae_skip", "memae", "daad")


@dataclass
class GeneratorSpec:
    variant: str = "daad"
    scales: int = 4
    base_channels: int = 64
    rates: DivisionRates = field(default_factory=lambda: DivisionRates(8, 8, 1))
    bank_size: int = 500
    input_size: tuple[int, int] = (256, 256)
    input_channels: int = 3
    renormalize: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown generator variant {self.variant!r}; expected one of {VARIANTS}")
        if isinstance(self.rates, (tuple, list)):
            self.rates = DivisionRates(*self.rates)
        self.input_size = tuple(self.input_size)
        div = 2 ** self.scales
        h, w = self.input_size
        if h % div or w % div:
            raise ValueError(f"input size {h}x{w} must be divisible by 2^L = {div}")
        for level in self.memory_levels():
            try:
                self.rates_for(level).check(self.channels(level), *self.resolution(level))
            except ValueError as exc:
                raise ValueError(f"memory at scale {level}: {exc}") from None

    def channels(self, level: int) -> int:
        """Channels at encoder scale ``level`` (1-based); ``scales + 1`` is the bottleneck."""
        return self.base_channels * 2 ** (level - 1)

    def resolution(self, level: int) -> tuple[int, int]:
        h, w = self.input_size
        return h // 2 ** level, w // 2 ** level

    @property
    def has_skips(self) -> bool:
        return self.variant in ("ae_skip", "daad")

    def memory_levels(self) -> list[int]:
        if self.variant == "daad":
            return list(range(1, self.scales + 1))
        if self.variant == "memae":
            return [self.scales]
        return []

    def rates_for(self, level: int) -> DivisionRates:
        if self.variant == "memae":
            h, w = self.resolution(level)
            return DivisionRates(h, w, 1)
        return self.rates


class Generator(Module):
    def __init__(self, spec: GeneratorSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        L = spec.scales
        enc = self.add_child("enc", Module())
        cin = spec.input_channels
        for level in range(1, L + 1):
            c = spec.channels(level)
            stage = enc.add_child(str(level), Module())
            stage.add_child("0", ConvBNReLU(cin, c, rng))
            stage.add_child("1", ConvBNReLU(c, c, rng))
            cin = c

        self.memories: dict[int, BlockMemory] = {}
        mem = self.add_child("mem", Module())
        for level in spec.memory_levels():
            h, w = spec.resolution(level)
            bm = BlockMemory(spec.bank_size, spec.channels(level), h, w, spec.rates_for(level),
                             seed=rng, renormalize=spec.renormalize)
            mem.add_child(f"scale{level}", bm)
            self.memories[level] = bm

        dec = self.add_child("dec", Module())
        c_bottom = spec.channels(L + 1)
        stage = dec.add_child(str(L), Module())
        stage.add_child("0", ConvBNReLU(spec.channels(L), c_bottom, rng))
        stage.add_child("1", ConvBNReLU(c_bottom, c_bottom, rng))
        stage.add_child("2", ConvTranspose2d(c_bottom, spec.channels(L), rng=rng))
        for level in range(L - 1, 0, -1):
            c_up = spec.channels(level + 1)
            c_in = c_up + (spec.channels(level) if spec.has_skips else 0)
            stage = dec.add_child(str(level), Module())
            stage.add_child("0", ConvBNReLU(c_in, c_up, rng))
            stage.add_child("1", ConvBNReLU(c_up, c_up, rng))
            stage.add_child("2", ConvTranspose2d(c_up, spec.channels(level), rng=rng))
        head = dec.add_child("0", Module())
        c1 = spec.channels(1)
        head.add_child("0", ConvBNReLU(c1, c1, rng))
        head.add_child("1", ConvBNReLU(c1, c1, rng))
        head.add_child("2", Conv2d(c1, spec.input_channels, 1, rng=rng, gain=1.0))

    def _stage(self, group: str, idx) -> Module:
        return self._children[group]._children[str(idx)]

    def check_input(self, x: Tensor) -> None:
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.input_channels or tuple(x.shape[2:]) != spec.input_size:
            raise ValueError(f"generator expects input (B, {spec.input_channels}, {spec.input_size[0]}, "
                             f"{spec.input_size[1]}), got {x.shape}")

    def encode(self, x: Tensor) -> list[Tensor]:
        """Pooled encoder features ``e_1 .. e_L``."""
        self.check_input(x)
        feats = []
        h = x
        for level in range(1, self.spec.scales + 1):
            stage = self._stage("enc", level)
            h = stage._children["1"](stage._children["0"](h))
            h = ops.maxpool2d(h, 2, 2)
            feats.append(h)
        return feats

    def apply_memories(self, feats: list[Tensor], survivors: dict | None = None) -> list[Tensor | None]:
        """Map ``e_l`` to the decoder inputs ``m_l``; ``None`` marks an absent skip."""
        spec = self.spec
        L = spec.scales
        out: list[Tensor | None] = []
        for level, e in enumerate(feats, start=1):
            if level in self.memories:
                mask = survivors.get(level) if survivors else None
                out.append(self.memories[level](e, mask))
            elif level == L or spec.has_skips:
                out.append(e)
            else:
                out.append(None)
        return out

    def decode(self, mems: list[Tensor | None]) -> Tensor:
        L = self.spec.scales
        stage = self._stage("dec", L)
        h = stage._children["1"](stage._children["0"](mems[L - 1]))
        h = stage._children["2"](h)
        for level in range(L - 1, 0, -1):
            skip = mems[level - 1]
            if skip is not None:
                h = ops.concat_channels(h, skip)
            stage = self._stage("dec", level)
            h = stage._children["1"](stage._children["0"](h))
            h = stage._children["2"](h)
        head = self._stage("dec", 0)
        h = head._children["1"](head._children["0"](h))
        return ops.tanh(head._children["2"](h))

    def __call__(self, x: Tensor, survivors: dict | None = None) -> Tensor:
        return self.decode(self.apply_memories(self.encode(x), survivors))

    def memory_parameters(self) -> list[Tensor]:
        return [bm.bank.items for bm in self.memories.values()]


@dataclass
class DiscriminatorSpec:
    input_size: tuple[int, int] = (256, 256)
    input_channels: int = 3
    base_channels: int = 64
    feature_dim: int = 100
    slope: float = 0.2

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        h, w = self.input_size
        if h != w or h < 8 or h & (h - 1):
            raise ValueError(f"discriminator needs a square power-of-two input >= 8, got {h}x{w}")

    @property
    def stages(self) -> int:
        return int(math.log2(min(self.input_size))) - 2


class Discriminator(Module):
    """Strided 4x4 conv feature extractor ending in a ``feature_dim`` x 1 x 1 map,
    followed by a 3x3 conv + sigmoid classifier."""

    def __init__(self, spec: DiscriminatorSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        gain = np.sqrt(2.0 / (1 + spec.slope ** 2))
        self.layers: list[Module] = []
        disc = self.add_child("disc", Module())
        c = spec.base_channels
        self.layers.append(disc.add_child("0", Conv2d(spec.input_channels, c, 4, 2, 1, rng=rng, gain=gain)))
        for k in range(1, spec.stages):
            self.layers.append(disc.add_child(str(k), ConvBNAct(c, 2 * c, rng, 4, 2, 1, "leaky_relu", spec.slope)))
            c *= 2
        self.layers.append(disc.add_child(str(spec.stages), Conv2d(c, spec.feature_dim, 4, 1, 0, rng=rng, gain=1.0)))
        self.layers.append(disc.add_child(str(spec.stages + 1), Conv2d(spec.feature_dim, 1, 3, 1, 1, rng=rng, gain=1.0)))

    def features_map(self, img: Tensor) -> Tensor:
        spec = self.spec
        if img.ndim != 4 or img.shape[1] != spec.input_channels or tuple(img.shape[2:]) != spec.input_size:
            raise ValueError(f"discriminator expects input (B, {spec.input_channels}, {spec.input_size[0]}, "
                             f"{spec.input_size[1]}), got {img.shape}")
        h = ops.leaky_relu(self.layers[0](img), spec.slope)
        for layer in self.layers[1:-2]:
            h = layer(h)
        return self.layers[-2](h)

    def __call__(self, img: Tensor) -> tuple[Tensor, Tensor]:
        """Return ``(prob, feature)``: prob shape (B,), feature shape (B, feature_dim)."""
        fmap = self.features_map(img)
        prob = ops.sigmoid(self.layers[-1](fmap))
        b = img.shape[0]
        return ops.reshape(prob, (b,)), ops.reshape(fmap, (b, self.spec.feature_dim))


def generator_forward(x: Tensor, generator: Generator) -> Tensor:
    return generator(x)


def discriminate(img: Tensor, discriminator: Discriminator) -> tuple[Tensor, Tensor]:
    return discriminator(img)
