"""Per-frame query decoder: turns appearance queries plus level-1 features
into object tokens, coarse instance masks, boxes, and pixel embeddings.

This is a three-round residual decoder with the same output contract as the
heavyweight segmenter it replaces: tokens index the same query slot at every
frame (cross-frame identity is established later by linking, not here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MLP, CrossAttention, Linear, ParamFactory
from .tensor import Tensor, stack


@dataclass(frozen=True)
class Box:
    """Mask-derived box: centroid (cx, cy) and tight extents in pixels.
    An all-background mask yields the degenerate (0, 0, 0, 0) box with
    ``empty=True``."""

    cx: float
    cy: float
    w: float
    h: float
    empty: bool = False


def box_from_mask(mask: np.ndarray) -> Box:
    """Binarize at 0.5 and take the centroid plus tight bounding extents."""
    m = np.asarray(mask) > 0.5
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        return Box(0.0, 0.0, 0.0, 0.0, empty=True)
    return Box(
        float(xs.mean()),
        float(ys.mean()),
        float(xs.max() - xs.min() + 1),
        float(ys.max() - ys.min() + 1),
    )


@dataclass
class ObjectTokens:
    """Decoder outputs for one clip.

    o: [N, T, C] tokens; coarse_masks: [N, T, h, w] probabilities at the
    decoder grid; mask_logits: same shape, pre-sigmoid; boxes: [T][N] Box;
    pixel_embed: [T, C1, h, w].
    """

    o: Tensor
    coarse_masks: Tensor
    mask_logits: Tensor
    boxes: list
    pixel_embed: Tensor


class DecoderLayer:
    def __init__(self, factory: ParamFactory, name: str, c: int, scale_logits=True):
        self.cross = CrossAttention(factory, f"{name}.cross", c, out_proj=True, scale_logits=scale_logits)
        self.self_attn = CrossAttention(factory, f"{name}.self", c, out_proj=True, scale_logits=scale_logits)
        self.mlp = MLP(factory, f"{name}.mlp", c, c)

    def __call__(self, tokens: Tensor, pixels: Tensor, want_weights=False):
        if want_weights:
            upd, w = self.cross(tokens, pixels, return_weights=True)
        else:
            upd, w = self.cross(tokens, pixels), None
        tokens = tokens + upd
        tokens = tokens + self.self_attn(tokens, tokens)
        tokens = tokens + self.mlp(tokens)
        return tokens, w


class FrameDecoder:
    def __init__(self, factory: ParamFactory, name: str, c: int, c1: int, layers: int = 3, scale_logits=True):
        self.c = c
        self.c1 = c1
        self.layers = [
            DecoderLayer(factory, f"{name}.layer{i}", c, scale_logits) for i in range(layers)
        ]
        self.pixel_proj = Linear(factory, f"{name}.pixel_proj", c, c1)
        self.mask_proj = Linear(factory, f"{name}.mask_proj", c, c1)

    def decode_frame(self, q_app: Tensor, feats_t: Tensor, want_weights=False):
        """One frame: feats_t is [C, h, w]; returns tokens [N, C], mask logits
        [N, h, w], pixel embedding [C1, h, w], and cross-attention maps."""
        c, h, w = feats_t.shape
        pixels = feats_t.reshape(c, h * w).swapaxes(0, 1)
        tokens = q_app
        maps = []
        for layer in self.layers:
            tokens, wmap = layer(tokens, pixels, want_weights)
            if wmap is not None:
                maps.append(wmap)
        pixel_embed = self.pixel_proj(pixels)                 # [h*w, C1]
        coeff = self.mask_proj(tokens)                        # [N, C1]
        logits = coeff @ pixel_embed.swapaxes(0, 1)           # [N, h*w]
        return tokens, logits.reshape(-1, h, w), pixel_embed.swapaxes(0, 1).reshape(self.c1, h, w), maps

    def decode_clip(self, q_app: Tensor, level1: Tensor, want_weights=False) -> ObjectTokens:
        """level1: [T, C, h, w] common-width per-frame features."""
        t = level1.shape[0]
        tok, logit, pix, all_maps = [], [], [], []
        for i in range(t):
            tokens, logits, pixel_embed, maps = self.decode_frame(q_app, level1[i], want_weights)
            tok.append(tokens)
            logit.append(logits)
            pix.append(pixel_embed)
            all_maps.append(maps)
        o = stack(tok, axis=1)                  # [N, T, C]
        mask_logits = stack(logit, axis=1)      # [N, T, h, w]
        masks = mask_logits.sigmoid()
        pixel_embed = stack(pix, axis=0)        # [T, C1, h, w]
        boxes = [
            [box_from_mask(masks.data[j, i]) for j in range(masks.shape[0])]
            for i in range(t)
        ]
        out = ObjectTokens(o, masks, mask_logits, boxes, pixel_embed)
        return (out, all_maps) if want_weights else out
