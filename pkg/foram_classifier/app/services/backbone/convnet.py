"""Small five-block convolutional network written against numpy.

Arrays are NHWC. Each block is a 3x3 same-padded convolution, ReLU and a
2x2 max-pool with stride 2 (odd trailing rows/columns are dropped). The final
feature map is flattened row-major in (height, width, channel) order; head
weights depend on that order.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ...core.errors import DimensionError
from ...core.utils import substream

WIDTHS = (8, 16, 32, 32, 32)
KERNEL = 3
# images per tensordot chunk; bounds the window copies
CHUNK = 8


def _pad(x: np.ndarray) -> np.ndarray:
    p = KERNEL // 2
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _windows(x: np.ndarray) -> np.ndarray:
    # (B, H, W, C, kh, kw)
    return sliding_window_view(_pad(x), (KERNEL, KERNEL), axis=(1, 2))


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded 3x3 convolution (cross-correlation); weights are (kh, kw, C_in, C_out)."""
    out = np.empty(x.shape[:3] + (weights.shape[3],))
    for s in range(0, len(x), CHUNK):
        out[s:s + CHUNK] = np.tensordot(_windows(x[s:s + CHUNK]), weights, axes=([3, 4, 5], [2, 0, 1]))
    out += bias
    return out


def conv2d_backward(
    x: np.ndarray, weights: np.ndarray, dout: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dW, db)`` of a same-padded convolution."""
    dw = np.zeros((weights.shape[2], KERNEL, KERNEL, weights.shape[3]))
    dx = np.empty(x.shape) if need_input_grad else None
    flipped = weights[::-1, ::-1]
    for s in range(0, len(x), CHUNK):
        d = dout[s:s + CHUNK]
        dw += np.tensordot(_windows(x[s:s + CHUNK]), d, axes=([0, 1, 2], [0, 1, 2]))
        if need_input_grad:
            dx[s:s + CHUNK] = np.tensordot(_windows(d), flipped, axes=([3, 4, 5], [3, 0, 1]))
    return dx, dw.transpose(1, 2, 0, 3), dout.sum(axis=(0, 1, 2))


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 stride-2 max-pool; returns the pooled map and the argmax within each window."""
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = (
        x[:, :2 * h2, :2 * w2]
        .reshape(b, h2, 2, w2, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, h2, w2, c, 4)
    )
    idx = win.argmax(axis=-1)
    return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, input_shape: tuple[int, ...]) -> np.ndarray:
    b, h, w, c = input_shape
    h2, w2 = dout.shape[1:3]
    g = np.zeros((b, h2, w2, c, 4))
    np.put_along_axis(g, idx[..., None], dout[..., None], axis=-1)
    g = g.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)
    dx = np.zeros(input_shape)
    dx[:, :2 * h2, :2 * w2] = g
    return dx


@dataclass
class ConvBlock:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape[:2] != (KERNEL, KERNEL) or self.bias.shape != (self.weights.shape[3],):
            raise DimensionError(f"conv block weights {self.weights.shape} / bias {self.bias.shape} mismatch")


@dataclass
class _BlockCache:
    x: np.ndarray
    z: np.ndarray
    pool_idx: np.ndarray


@dataclass
class ForwardCache:
    first: int
    blocks: list[_BlockCache] = field(default_factory=list)


@dataclass
class SmallConvNet:
    blocks: list[ConvBlock]
    in_channels: int = 3

    def __post_init__(self):
        if len(self.blocks) != len(WIDTHS):
            raise DimensionError(f"SmallConvNet needs {len(WIDTHS)} blocks, got {len(self.blocks)}")
        channels = self.in_channels
        for i, block in enumerate(self.blocks, start=1):
            if block.weights.shape[2] != channels:
                raise DimensionError(f"block {i} expects {block.weights.shape[2]} channels, gets {channels}")
            channels = block.weights.shape[3]

    @classmethod
    def initialize(cls, seed: int = 0, widths: Sequence[int] = WIDTHS, in_channels: int = 3) -> "SmallConvNet":
        """He-normal kernels and zero biases."""
        rng = substream(seed, "backbone-init")
        blocks, c = [], in_channels
        for w in widths:
            fan_in = KERNEL * KERNEL * c
            blocks.append(ConvBlock(rng.normal(0.0, np.sqrt(2.0 / fan_in), (KERNEL, KERNEL, c, w)), np.zeros(w)))
            c = w
        return cls(blocks, in_channels)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(int(b.weights.shape[3]) for b in self.blocks)

    def feature_shape(self, size: int = 224) -> tuple[int, int, int]:
        for _ in self.blocks:
            size //= 2
        return (size, size, self.widths[-1])

    def feature_dim(self, size: int = 224) -> int:
        return int(np.prod(self.feature_shape(size)))

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, block in enumerate(self.blocks, start=1):
            out[f"block{i}.weights"] = block.weights
            out[f"block{i}.bias"] = block.bias
        return out

    def block_tensors(self, block_ids: Sequence[int]) -> dict[str, np.ndarray]:
        return {
            k: v for k, v in self.tensors().items() if int(k.split(".")[0][len("block"):]) in set(block_ids)
        }

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.tensors().items():
            if name in tensors:
                arr[...] = tensors[name]

    def copy(self) -> "SmallConvNet":
        return copy.deepcopy(self)

    def forward(self, x: np.ndarray, cache_from: int | None = None) -> np.ndarray | tuple[np.ndarray, ForwardCache]:
        """Flattened features for a (B, H, W, C) batch.

        With ``cache_from = k`` the activations of blocks ``k..5`` are kept
        and ``(features, cache)`` is returned for ``backward``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DimensionError(f"expected a (batch, H, W, {self.in_channels}) input, got {x.shape}")
        cache = ForwardCache(first=cache_from) if cache_from is not None else None
        a = x
        for i, block in enumerate(self.blocks, start=1):
            z = conv2d_forward(a, block.weights, block.bias)
            pooled, idx = maxpool_forward(np.maximum(z, 0.0))
            if cache is not None and i >= cache.first:
                cache.blocks.append(_BlockCache(a, z, idx))
            a = pooled
        features = a.reshape(len(a), -1)
        return (features, cache) if cache is not None else features

    def backward(self, cache: ForwardCache, dfeatures: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every cached block, walking back from the features."""
        grads: dict[str, np.ndarray] = {}
        last = cache.blocks[-1]
        _, h, w, c = last.z.shape
        out_shape = (len(dfeatures), h // 2, w // 2, c)
        d = dfeatures.reshape(out_shape)
        for offset in range(len(cache.blocks) - 1, -1, -1):
            bc = cache.blocks[offset]
            i = cache.first + offset
            block = self.blocks[i - 1]
            d = maxpool_backward(d, bc.pool_idx, bc.z.shape) * (bc.z > 0)
            dx, dw, db = conv2d_backward(bc.x, block.weights, d, need_input_grad=offset > 0)
            grads[f"block{i}.weights"] = dw
            grads[f"block{i}.bias"] = db
            d = dx
        return grads
