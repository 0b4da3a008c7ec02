"""Tiny convolutional pyramid standing in for a pretrained video encoder.

Four levels at strides 4, 8, 16, 32 relative to the input frame, produced by
non-overlapping patch embeddings (stride == kernel, so each level is a reshape
plus one linear map). Level widths grow with depth and are projected to the
common token width before any cross-modal attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Linear, ParamFactory, gelu
from .tensor import Tensor, concat


@dataclass
class FeaturePyramid:
    """levels[i] has shape [T, C_i, H_i, W_i]; spatial extent halves per level."""

    levels: list

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValueError("feature pyramid must have exactly 4 levels")

    def grid(self, i: int):
        t = self.levels[i]
        return t.shape[-2], t.shape[-1]


def _pad_to_even(x: Tensor) -> Tensor:
    """Zero-pad the trailing two axes of [T, C, H, W] up to even extents."""
    t, c, h, w = x.shape
    if h % 2:
        x = concat([x, Tensor(np.zeros((t, c, 1, w), x.dtype))], axis=2)
        h += 1
    if w % 2:
        x = concat([x, Tensor(np.zeros((t, c, h, 1), x.dtype))], axis=3)
    return x


def _patchify(x: Tensor, patch: int) -> Tensor:
    """[T, C, H, W] -> [T, H/p, W/p, C*p*p] by non-overlapping patches."""
    t, c, h, w = x.shape
    x = x.reshape(t, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(t, h // patch, w // patch, c * patch * patch)


class ConvPyramid:
    def __init__(self, factory: ParamFactory, name: str, c: int):
        self.c = c
        self.widths = (c, 2 * c, 4 * c, 8 * c)
        self.embed1 = Linear(factory, f"{name}.embed1", 3 * 16, self.widths[0])
        self.embed2 = Linear(factory, f"{name}.embed2", self.widths[0] * 4, self.widths[1])
        self.embed3 = Linear(factory, f"{name}.embed3", self.widths[1] * 4, self.widths[2])
        self.embed4 = Linear(factory, f"{name}.embed4", self.widths[2] * 4, self.widths[3])
        # per-level projections to the common width used by attention
        self.proj = [
            Linear(factory, f"{name}.proj{i + 1}", self.widths[i], c) for i in range(4)
        ]

    def __call__(self, frames: np.ndarray) -> FeaturePyramid:
        """frames: [T, 3, H, W] in [0, 1]; H and W must be multiples of 4."""
        x = Tensor(frames)
        levels = []
        feats = gelu(self.embed1(_patchify(x, 4)))          # [T, H/4, W/4, c]
        levels.append(feats.transpose(0, 3, 1, 2))
        for embed in (self.embed2, self.embed3, self.embed4):
            grid = _pad_to_even(levels[-1])
            feats = gelu(embed(_patchify(grid, 2)))
            levels.append(feats.transpose(0, 3, 1, 2))
        return FeaturePyramid(levels)

    def project(self, pyramid: FeaturePyramid) -> list:
        """Common-width levels: list of [T, c, H_i, W_i]."""
        out = []
        for i, level in enumerate(pyramid.levels):
            t, ci, h, w = level.shape
            flat = level.transpose(0, 2, 3, 1).reshape(t, h * w, ci)
            proj = self.proj[i](flat)
            out.append(proj.reshape(t, h, w, self.c).transpose(0, 3, 1, 2))
        return out


def sample_features(feats: Tensor, coords: np.ndarray, stride: float) -> Tensor:
    """Bilinearly sample [C, Hf, Wf] features at frame-pixel (x, y) coords.

    coords is [n, 2] in frame pixels; stride converts to the feature grid.
    Returns [n, C]. Differentiable with respect to the features only.
    """
    c, hf, wf = feats.shape
    fx = (coords[:, 0] + 0.5) / stride - 0.5
    fy = (coords[:, 1] + 0.5) / stride - 0.5
    fx = np.clip(fx, 0, wf - 1)
    fy = np.clip(fy, 0, hf - 1)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, wf - 1)
    y1 = np.minimum(y0 + 1, hf - 1)
    wx = (fx - x0).astype(feats.dtype)
    wy = (fy - y0).astype(feats.dtype)

    def gather(ys, xs):
        return feats[:, ys, xs].swapaxes(0, 1)  # [n, C]

    w00 = Tensor(((1 - wy) * (1 - wx))[:, None])
    w01 = Tensor(((1 - wy) * wx)[:, None])
    w10 = Tensor((wy * (1 - wx))[:, None])
    w11 = Tensor((wy * wx)[:, None])
    return (
        gather(y0, x0) * w00
        + gather(y0, x1) * w01
        + gather(y1, x0) * w10
        + gather(y1, x1) * w11
    )
