"""Prediction head and the three-term training objective.

Video tokens project to class logits (column 0 = referred) and mask
coefficients; masks are the per-pixel sigmoid of coefficient/pixel-embedding
dot products. Supervision combines a frame-level term over matched decoder
slots, a video-level term on the best tracklet plus classification, and a
temporal consistency term on refined tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import hungarian
from .nn import Linear, ParamFactory
from .tensor import Tensor, softmax, stack, where

_SIG_HI = 1.0 / (1.0 + np.exp(-15.0))   # prob clamp equivalent to logits in [-15, 15]
_SIG_LO = 1.0 - _SIG_HI


@dataclass
class Prediction:
    """class_logits: [N_E, 2]; mask_coeffs: [N_E, C1]; video_masks /
    mask_logits: [N_E, T, h, w] at the decoder grid; ranking: slot indices by
    referred-class confidence, descending, ties to the lower index."""

    class_logits: Tensor
    mask_coeffs: Tensor
    video_masks: Tensor
    mask_logits: Tensor
    ranking: np.ndarray


class PredictionHead:
    def __init__(self, factory: ParamFactory, name: str, c: int, c1: int):
        self.class_proj = Linear(factory, f"{name}.class_proj", c, 2)
        self.coeff_proj = Linear(factory, f"{name}.coeff_proj", c, c1)
        self.c1 = c1

    def predict(self, v: Tensor, pixel_embed: Tensor) -> Prediction:
        """v: [N_E, C] video tokens; pixel_embed: [T, C1, h, w]."""
        t, c1, h, w = pixel_embed.shape
        class_logits = self.class_proj(v)
        coeffs = self.coeff_proj(v)
        pix = pixel_embed.transpose(1, 0, 2, 3).reshape(c1, t * h * w)
        logits = (coeffs @ pix).reshape(-1, t, h, w)
        masks = logits.sigmoid()
        probs = _softmax_rows(class_logits.data)[:, 0]
        ranking = np.argsort(-probs, kind="stable")
        return Prediction(class_logits, coeffs, masks, logits, ranking)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    z = x - shift
    return z - z.exp().sum(axis=axis, keepdims=True).log()


# -- loss terms ---------------------------------------------------------------


def consistency_loss(o_hat: Tensor, mean_over_t: bool = False) -> Tensor:
    """Mean over identities of the per-step cosine gap between consecutive
    refined tokens. Zero-norm vectors contribute cosine 0. The sum of T-1
    step terms is averaged by T-1 (or by T when ``mean_over_t``); a single
    frame yields exactly 0.
    """
    n, t, _ = o_hat.shape
    if t < 2:
        return Tensor(np.zeros((), o_hat.dtype))
    a = o_hat[:, :-1]
    b = o_hat[:, 1:]
    dots = (a * b).sum(axis=2)
    prod = (a * a).sum(axis=2) * (b * b).sum(axis=2)
    nz = prod.data > 0
    denom = where(nz, prod, Tensor(np.ones_like(prod.data))).sqrt()
    cos = (dots / denom) * Tensor(nz.astype(o_hat.dtype))
    norm = t if mean_over_t else t - 1
    return (1.0 - cos).sum() * (1.0 / (n * norm))


def dice_loss(p: Tensor, gt: np.ndarray) -> Tensor:
    """1 - 2|P.G| / (|P| + |G|) over all elements; 0 when both sides are empty."""
    g = Tensor(np.asarray(gt, p.dtype))
    denom = p.sum() + g.sum()
    if float(denom.data) == 0.0:
        return Tensor(np.zeros((), p.dtype))
    return 1.0 - (p * g).sum() * 2.0 / denom


def bce_loss(p: Tensor, gt: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities, clamped to the range a
    logit in [-15, 15] can produce (keeps the saturated limit finite)."""
    g = np.asarray(gt, p.dtype)
    pc = p.clip(_SIG_LO, _SIG_HI)
    terms = Tensor(g) * pc.log() + Tensor(1.0 - g) * (1.0 - pc).log()
    return -terms.mean()


def _dice_value(p: np.ndarray, g: np.ndarray) -> float:
    denom = p.sum() + g.sum()
    if denom == 0:
        return 0.0
    return float(1.0 - 2.0 * (p * g).sum() / denom)


def frame_assignment(mask_probs: np.ndarray, gt_masks: np.ndarray) -> list:
    """Match decoder slots to ground-truth objects for one clip.

    Cost is the clip-level soft-overlap (dice) distance; the square matrix is
    padded with constant cost so spare slots absorb the surplus columns.
    Returns [(gt index, slot index)] pairs.
    """
    n_gt = gt_masks.shape[0]
    n_slots = mask_probs.shape[0]
    if n_gt > n_slots:
        raise ValueError(f"{n_gt} objects exceed {n_slots} decoder slots")
    p = mask_probs.reshape(n_slots, -1)
    g = np.asarray(gt_masks, p.dtype).reshape(n_gt, -1)
    num = 2.0 * (g @ p.T)
    den = g.sum(axis=1)[:, None] + p.sum(axis=1)[None, :]
    dice = np.where(den > 0, 1.0 - num / np.maximum(den, 1e-12), 0.0)
    cost = np.ones((n_slots, n_slots))
    cost[:n_gt, :] = dice
    perm = hungarian(cost)
    return [(gi, int(perm[gi])) for gi in range(n_gt)]


def frame_loss(mask_probs: Tensor, gt_masks: np.ndarray, assignment: list) -> Tensor:
    """Mean over matched (object, slot) pairs of dice + cross-entropy."""
    terms = []
    for gi, slot in assignment:
        p = mask_probs[slot]
        g = gt_masks[gi]
        terms.append(dice_loss(p, g) + bce_loss(p, g))
    if not terms:
        return Tensor(np.zeros((), mask_probs.dtype))
    return stack(terms).sum() * (1.0 / len(terms))


def video_loss(prediction: Prediction, referred_probs: Tensor, gt_referred: np.ndarray):
    """Best-matching tracklet supervision plus referred/background classification.

    ``referred_probs`` holds every token's full-resolution soft masks
    [N_E, T, H, W]; the token with the smallest clip dice against the single
    referred object is supervised with dice + cross-entropy, and the class head
    is trained to call that token referred (column 0) and the rest background.
    Returns (loss, best token index).
    """
    n_e = referred_probs.shape[0]
    dvals = [_dice_value(referred_probs.data[e], gt_referred) for e in range(n_e)]
    best = int(np.argmin(dvals))
    mask_term = dice_loss(referred_probs[best], gt_referred) + bce_loss(
        referred_probs[best], gt_referred
    )
    targets = np.ones(n_e, int)
    targets[best] = 0
    logp = log_softmax(prediction.class_logits, axis=-1)
    picked = logp[np.arange(n_e), targets]
    class_term = -picked.mean()
    return mask_term + class_term, best


@dataclass
class LossBundle:
    l_f: float
    l_v: float
    l_con: float
    l_total: float
    lambda_v: float
    lambda_f: float
    lambda_con: float

    def to_dict(self):
        return {"l_f": self.l_f, "l_v": self.l_v, "l_con": self.l_con, "l_total": self.l_total}


def combine_losses(l_v: Tensor, l_f: Tensor, l_con: Tensor, lambda_v, lambda_f, lambda_con) -> Tensor:
    return l_v * lambda_v + l_f * lambda_f + l_con * lambda_con
