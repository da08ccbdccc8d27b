"""Block-wise memory: divide a feature map into blocks, read each block from
a memory bank by cosine attention with hard shrinkage, and reassemble.

Layout conventions (stable; checkpoints depend on them):

* feature maps are NCHW tensors;
* blocks are ordered row-major over the (h-grid, w-grid, c-grid) cells;
* inside a block, values are flattened in (h, w, c) order, i.e. the block is
  read as an ``H/r_h x W/r_w x C/r_c`` sub-array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Module
from .tensor import Tensor

_DIVIDE_PERM = (0, 3, 5, 1, 4, 6, 2)
_ASSEMBLE_PERM = tuple(int(i) for i in np.argsort(_DIVIDE_PERM))


@dataclass(frozen=True)
class DivisionRates:
    """Number of splits along height, width and channels."""

    r_h: int
    r_w: int
    r_c: int = 1

    def __post_init__(self):
        for name in ("r_h", "r_w", "r_c"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"division rate {name} must be a positive integer, got {v!r}")

    @property
    def num_blocks(self) -> int:
        return self.r_h * self.r_w * self.r_c

    def check(self, channels: int, height: int, width: int) -> None:
        for dim, size, rate in (("height", height, self.r_h), ("width", width, self.r_w),
                                ("channels", channels, self.r_c)):
            if size % rate:
                raise ValueError(f"{dim} {size} is not divisible by division rate {rate}")

    def block_dim(self, channels: int, height: int, width: int) -> int:
        self.check(channels, height, width)
        return (height // self.r_h) * (width // self.r_w) * (channels // self.r_c)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.r_h, self.r_w, self.r_c)


def divide(f: Tensor, rates: DivisionRates) -> Tensor:
    """Split an NCHW map into ``(B, Q, D)`` flattened query blocks."""
    b, c, h, w = f.shape
    rates.check(c, h, w)
    rh, rw, rc = rates.as_tuple()
    x = ops.reshape(f, (b, rc, c // rc, rh, h // rh, rw, w // rw))
    x = ops.transpose(x, _DIVIDE_PERM)
    return ops.reshape(x, (b, rates.num_blocks, -1))


def assemble(blocks: Tensor, shape: tuple[int, int, int, int], rates: DivisionRates) -> Tensor:
    """Inverse of :func:`divide`; ``shape`` is the NCHW shape of the original map."""
    b, c, h, w = shape
    rates.check(c, h, w)
    rh, rw, rc = rates.as_tuple()
    d = (h // rh) * (w // rw) * (c // rc)
    if blocks.shape != (b, rates.num_blocks, d):
        raise ValueError(f"assemble: expected blocks of shape {(b, rates.num_blocks, d)}, got {blocks.shape}")
    x = ops.reshape(blocks, (b, rh, rw, rc, h // rh, w // rw, c // rc))
    x = ops.transpose(x, _ASSEMBLE_PERM)
    return ops.reshape(x, shape)


def init_bank(n: int, d: int, seed=0, dtype=np.float32) -> np.ndarray:
    """Standard-normal rows scaled to unit L2 norm."""
    if n < 1 or d < 1:
        raise ValueError(f"memory bank needs N, D >= 1 (got N={n}, D={d})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    items = rng.standard_normal((n, d))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    return items.astype(dtype)


class MemoryBank(Module):
    """An ``N x D`` matrix of learnable memory items."""

    def __init__(self, n: int, d: int, seed=0):
        super().__init__()
        self.items = self.add_param("items", init_bank(n, d, seed))

    @property
    def n(self) -> int:
        return self.items.shape[0]

    @property
    def d(self) -> int:
        return self.items.shape[1]


@dataclass
class AttentionWeights:
    weights: Tensor
    survivors: np.ndarray | None = None  # boolean mask, set after shrinkage


def address(q: Tensor, bank: MemoryBank | Tensor, eps: float = ops.COSINE_EPS) -> AttentionWeights:
    """Softmax of cosine similarities between each query row and each memory item.

    ``q`` may be a single length-D vector or a ``(P, D)`` matrix.
    """
    items = bank.items if isinstance(bank, MemoryBank) else bank
    single = q.ndim == 1
    if single:
        q = ops.reshape(q, (1, -1))
    if q.shape[-1] != items.shape[1]:
        raise ValueError(f"query dimension {q.shape[-1]} != memory item dimension {items.shape[1]}")
    w = ops.softmax(ops.cosine_similarity_matrix(q, items, eps), axis=-1)
    if single:
        w = ops.reshape(w, (-1,))
    return AttentionWeights(w)


def survivor_mask(w: np.ndarray, n: int | None = None) -> np.ndarray:
    """Entries kept by hard shrinkage: ``w_i >= 1/N`` (strictly smaller ones drop).

    The largest weight of a simplex vector is at least ``1/N``; it is kept
    explicitly so rounding can never leave a row without survivors.
    """
    n = w.shape[-1] if n is None else n
    threshold = np.asarray(1, dtype=w.dtype) / np.asarray(n, dtype=w.dtype)
    mask = w >= threshold
    np.put_along_axis(mask, np.argmax(w, axis=-1)[..., None], True, axis=-1)
    return mask


def shrink(att: AttentionWeights, n: int | None = None, renormalize: bool = True,
           survivors: np.ndarray | None = None) -> AttentionWeights:
    """Zero weights below ``1/N`` and optionally re-normalize survivors to sum 1.

    The survivor mask is a constant for differentiation. Passing ``survivors``
    overrides the mask (used to hold it fixed under finite differences).
    """
    w = att.weights
    mask = survivor_mask(w.data, n) if survivors is None else np.asarray(survivors, dtype=bool)
    kept = ops.mul(w, mask.astype(w.dtype))
    if renormalize:
        kept = ops.div(kept, ops.sum(kept, axis=-1, keepdims=True))
    return AttentionWeights(kept, mask)


def aggregate(att: AttentionWeights | Tensor, bank: MemoryBank | Tensor) -> Tensor:
    """Weighted sum of memory items, ``w @ M``."""
    w = att.weights if isinstance(att, AttentionWeights) else att
    items = bank.items if isinstance(bank, MemoryBank) else bank
    if w.ndim == 1:
        return ops.reshape(ops.matmul(ops.reshape(w, (1, -1)), items), (-1,))
    return ops.matmul(w, items)


def memory_forward(f: Tensor, bank: MemoryBank, rates: DivisionRates, renormalize: bool = True,
                   survivors: np.ndarray | None = None, return_attention: bool = False):
    """Divide ``f``, read every block from ``bank`` and assemble the result.

    Output has the same shape as ``f``. With ``return_attention`` the
    post-shrink :class:`AttentionWeights` (rows ordered (image, block)) are
    returned as well.
    """
    b = f.shape[0]
    blocks = divide(f, rates)
    q = ops.reshape(blocks, (b * rates.num_blocks, -1))
    if q.shape[1] != bank.d:
        raise ValueError(f"block dimension {q.shape[1]} does not match memory bank dimension {bank.d}")
    att = shrink(address(q, bank), bank.n, renormalize, survivors)
    q_hat = aggregate(att, bank)
    out = assemble(ops.reshape(q_hat, (b, rates.num_blocks, -1)), f.shape, rates)
    if return_attention:
        return out, att
    return out


class BlockMemory(Module):
    """A memory bank bound to one scale's division rates."""

    def __init__(self, n: int, channels: int, height: int, width: int, rates: DivisionRates,
                 seed=0, renormalize: bool = True):
        super().__init__()
        self.rates = rates
        self.renormalize = renormalize
        self.bank = MemoryBank(n, rates.block_dim(channels, height, width), seed)
        # expose the bank's items directly: checkpoint name is mem.scale{l}.items
        self._params["items"] = self.bank.items

    def __call__(self, f: Tensor, survivors: np.ndarray | None = None) -> Tensor:
        return memory_forward(f, self.bank, self.rates, self.renormalize, survivors)

    def attention(self, f: Tensor) -> AttentionWeights:
        _, att = memory_forward(f, self.bank, self.rates, self.renormalize, return_attention=True)
        return att


__all__ = [
    "DivisionRates", "MemoryBank", "AttentionWeights", "BlockMemory", "divide", "assemble",
    "address", "shrink", "survivor_mask", "aggregate", "memory_forward", "init_bank",
]
