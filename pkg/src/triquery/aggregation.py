"""Motion-aware token aggregation.

Within a frame: pairwise directed relational features built from box geometry
and mask overlap bias the token-to-token attention, and relation sets are
selected against the intra-frame queries. Across frames: minimum-cost
bipartite linking chains query slots into identities, a short-window temporal
attention smooths each identity, and a final cross-modal refinement plus
semantic selection produces the video-level tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import Box
from .nn import MLP, CrossAttention, Linear, ParamFactory
from .tensor import NumericError, ShapeError, Tensor, softmax, stack


# -- positional encodings ------------------------------------------------------


def sincos_pairs(values: np.ndarray, periods: np.ndarray) -> np.ndarray:
    """Interleaved (sin, cos) features of ``values`` at the given periods.

    Output shape is values.shape + (2 * len(periods),), ordered
    sin p0, cos p0, sin p1, cos p1, ...
    """
    v = np.asarray(values, float)[..., None]
    ang = 2.0 * np.pi * v / np.asarray(periods, float)
    out = np.empty(ang.shape[:-1] + (2 * len(periods),))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


_REL_PERIODS = 2.0 ** np.arange(1, 9)  # 2, 4, ..., 256


def sine_cos_encode(v: np.ndarray) -> np.ndarray:
    """Encode 3-vectors (last axis) into 48 dims: 8 geometric periods from 2
    to 256, one (sin, cos) pair each, concatenated per component."""
    v = np.asarray(v, float)
    if v.shape[-1] != 3:
        raise ShapeError(f"expected trailing axis 3, got {v.shape}")
    parts = [sincos_pairs(v[..., i], _REL_PERIODS) for i in range(3)]
    return np.concatenate(parts, axis=-1)


# -- relational geometry ---------------------------------------------------------


def mask_iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    a = np.asarray(mask_a) > 0.5
    b = np.asarray(mask_b) > 0.5
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def rel_pos(box_i: Box, box_j: Box, mask_i: np.ndarray, mask_j: np.ndarray) -> np.ndarray:
    """Directed geometric relation i->j: log-normalized centroid offsets and
    mask overlap. Degenerate source extents clamp to 1 to stay finite."""
    wi = max(box_i.w, 1.0)
    hi = max(box_i.h, 1.0)
    return np.array(
        [
            np.log(abs(box_i.cx - box_j.cx) / wi + 1.0),
            np.log(abs(box_i.cy - box_j.cy) / hi + 1.0),
            mask_iou(mask_i, mask_j),
        ]
    )


def rel_pos_matrix(boxes: list, masks: np.ndarray) -> np.ndarray:
    """All ordered pairs for one frame: [N, N, 3], diagonal left at zero."""
    n = len(boxes)
    bins = np.asarray(masks) > 0.5
    areas = bins.reshape(n, -1).sum(axis=1)
    inter = bins.reshape(n, -1).astype(np.int64) @ bins.reshape(n, -1).T.astype(np.int64)
    union = areas[:, None] + areas[None, :] - inter
    with np.errstate(invalid="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    out = np.zeros((n, n, 3))
    cx = np.array([b.cx for b in boxes])
    cy = np.array([b.cy for b in boxes])
    ww = np.maximum(np.array([b.w for b in boxes]), 1.0)
    hh = np.maximum(np.array([b.h for b in boxes]), 1.0)
    out[..., 0] = np.log(np.abs(cx[:, None] - cx[None, :]) / ww[:, None] + 1.0)
    out[..., 1] = np.log(np.abs(cy[:, None] - cy[None, :]) / hh[:, None] + 1.0)
    out[..., 2] = iou
    idx = np.arange(n)
    out[idx, idx, :] = 0.0
    return out


# -- intra-frame aggregation -------------------------------------------------------


class IntraFrameAggregator:
    """Position-biased token interaction within one frame.

    Pairwise logits combine token similarity with a learned scalar projection
    of the encoded geometry; the softmax normalizes over j != i only (diagonal
    weight is structurally zero). Directed features R[i, j] = w_ij * o_j are
    then attended by the intra-frame queries per object, and the pooled update
    enters through a residual.
    """

    def __init__(self, factory: ParamFactory, name: str, c: int, scale_logits=True):
        self.c = c
        self.scale_logits = scale_logits
        self.phi_mlp = MLP(factory, f"{name}.phi", 48, c)
        self.bias_proj = Linear(factory, f"{name}.bias_proj", c, 1)
        self.select = CrossAttention(factory, f"{name}.select", c, scale_logits=scale_logits)
        self.fuse = MLP(factory, f"{name}.fuse", c, c)

    def __call__(self, o_t: Tensor, relpos: np.ndarray, q_intra: Tensor, use_rpe=True, return_weights=False):
        n = o_t.shape[0]
        if n == 1:
            return (o_t, None) if return_weights else o_t
        enc = Tensor(sine_cos_encode(relpos).astype(o_t.dtype))
        phi = self.phi_mlp(enc).relu()                      # [N, N, C] >= 0
        logits = o_t @ o_t.T
        if self.scale_logits:
            logits = logits * (1.0 / np.sqrt(self.c))
        if use_rpe:
            logits = logits + self.bias_proj(phi).reshape(n, n)
        # softmax over j != i: shift by the off-diagonal max, zero the diagonal
        # (the diagonal exponent is neutralized before exp so it cannot overflow)
        offdiag = ~np.eye(n, dtype=bool)
        od = Tensor(offdiag.astype(o_t.dtype))
        shift = np.max(np.where(offdiag, logits.data, -np.inf), axis=1, keepdims=True)
        e = ((logits - Tensor(shift)) * od).exp() * od
        w = e / e.sum(axis=1, keepdims=True)                # [N, N], diag exactly 0
        r = w.reshape(n, n, 1) * o_t.reshape(1, n, self.c)  # R[i, j] = w_ij * o_j

        cols = np.array([[j for j in range(n) if j != i] for i in range(n)])
        keys = r[np.arange(n)[:, None], cols]               # [N, N-1, C]
        q_b = Tensor(np.ones((n, 1, 1), o_t.dtype)) * q_intra.reshape(1, -1, self.c)
        ctx = self.select(q_b, keys)                        # [N, N_I, C]
        update = self.fuse(ctx).mean(axis=1)                # [N, C]
        out = o_t + update
        return (out, w) if return_weights else out


# -- minimum-cost assignment ---------------------------------------------------------


def _solve_potentials(cost: np.ndarray):
    """O(n^3) shortest-augmenting-path assignment. Returns (perm, u, v) where
    perm[row] = col and the duals satisfy u[i] + v[j] <= cost[i, j]."""
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, int)  # p[j] = row matched to column j (1-based; 0 free)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        way = np.zeros(n + 1, int)
        used = np.zeros(n + 1, bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1  # first minimum: deterministic
            delta = masked[j1 - 1]
            rows = p[: n + 1][used]
            u[rows] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, int)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm, u[1:], v[1:]


def _matching_feasible(adj, banned_cols: np.ndarray, start_row: int, n: int) -> bool:
    """Can rows start_row..n-1 be perfectly matched into non-banned columns?"""
    match_col = np.full(n, -1)

    def try_row(r, visited):
        for j in adj[r]:
            if banned_cols[j] or visited[j]:
                continue
            visited[j] = True
            if match_col[j] == -1 or try_row(match_col[j], visited):
                match_col[j] = r
                return True
        return False

    for r in range(start_row, n):
        if not try_row(r, np.zeros(n, bool)):
            return False
    return True


def hungarian(cost) -> np.ndarray:
    """Minimum-total-cost perfect matching of a square cost matrix.

    Returns perm with perm[i] = assigned column of row i. Among all optimal
    assignments the lexicographically smallest one is returned, found by
    restricting to zero-reduced-cost edges of the optimal duals and fixing
    rows greedily.
    """
    cost = np.asarray(cost, np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] == 0:
        raise ShapeError(f"cost must be square and nonempty, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericError("non-finite entry in assignment cost matrix")
    n = cost.shape[0]
    if n == 1:
        return np.zeros(1, int)
    perm, u, v = _solve_potentials(cost)
    red = cost - u[:, None] - v[None, :]
    tol = 1e-9 * np.maximum(1.0, np.abs(cost))
    tight = red <= tol
    tight[np.arange(n), perm] = True
    adj = [np.nonzero(tight[i])[0] for i in range(n)]

    result = np.full(n, -1)
    banned = np.zeros(n, bool)
    for i in range(n):
        for j in adj[i]:
            if banned[j]:
                continue
            banned[j] = True
            if _matching_feasible(adj, banned, i + 1, n):
                result[i] = j
                break
            banned[j] = False
        if result[i] < 0:  # tolerance pathologies: keep the certified optimum
            return perm
    return result


# -- cross-frame linking ----------------------------------------------------------


@dataclass
class TokenTimeline:
    """Tokens re-indexed so index i is one object identity across all frames.

    slots[i, t] is the decoder slot holding identity i at frame t; perms[t] is
    the inverse map (slot -> identity), a bijection per frame.
    """

    linked: Tensor
    slots: np.ndarray
    perms: np.ndarray


def _cosine_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    cos = np.zeros((a.shape[0], b.shape[0]))
    ok = denom > 0
    raw = a @ b.T
    cos[ok] = raw[ok] / denom[ok]
    return 1.0 - cos


def link_tokens(o_prime: Tensor) -> TokenTimeline:
    """Chain consecutive frames with minimum-cost matching on cosine distance.

    Matching runs on detached values; gradients flow through the gathered
    tokens with the permutations held fixed.
    """
    n, t, _ = o_prime.shape
    if t < 1:
        raise ShapeError("need at least one frame")
    slots = np.zeros((n, t), int)
    slots[:, 0] = np.arange(n)
    perms = np.zeros((t, n), int)
    perms[0] = np.arange(n)
    data = o_prime.data
    for ft in range(1, t):
        prev = data[slots[:, ft - 1], ft - 1]
        cur = data[:, ft]
        sigma = hungarian(_cosine_cost(prev, cur))  # identity -> slot
        slots[:, ft] = sigma
        inv = np.empty(n, int)
        inv[sigma] = np.arange(n)
        perms[ft] = inv
    time_idx = np.broadcast_to(np.arange(t), (n, t))
    linked = o_prime[slots, time_idx]
    return TokenTimeline(linked, slots, perms)


# -- temporal attention and video tokens ----------------------------------------------


class TemporalWindowAttention:
    """Per-identity attention over a clipped odd window of neighboring frames."""

    def __init__(self, factory: ParamFactory, name: str, c: int, scale_logits=True):
        self.c = c
        self.scale_logits = scale_logits
        self.wq = Linear(factory, f"{name}.wq", c, c, bias=False)
        self.wk = Linear(factory, f"{name}.wk", c, c, bias=False)
        self.wv = Linear(factory, f"{name}.wv", c, c, bias=False)

    def __call__(self, linked: Tensor, window: int, return_weights=False):
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be odd and >= 1")
        n, t, c = linked.shape
        half = window // 2
        scale = (1.0 / np.sqrt(self.c)) if self.scale_logits else 1.0
        outs = []
        supports = []
        weights = []
        for ft in range(t):
            lo, hi = max(0, ft - half), min(t, ft + half + 1)
            supports.append(tuple(range(lo, hi)))
            keys = linked[:, lo:hi]                       # [N, nb, C]
            q = self.wq(linked[:, ft]).reshape(n, 1, c)
            logits = (q @ self.wk(keys).swapaxes(1, 2)) * scale
            w = softmax(logits, axis=-1)                  # [N, 1, nb]
            outs.append((w @ self.wv(keys)).reshape(n, c))
            if return_weights:
                weights.append(w)
        out = stack(outs, axis=1)
        if return_weights:
            return out, supports, weights
        return out


@dataclass
class VideoTokens:
    v: Tensor


class InterFrameAggregator:
    """Cross-modal refinement of linked tokens plus semantic selection.

    Every token attends the inter-frame queries through a residual branch, a
    per-identity full self-attention over time follows (also residual), and
    finally the queries attend all refined tokens to produce the video-level
    representations.
    """

    def __init__(self, factory: ParamFactory, name: str, c: int, scale_logits=True):
        self.c = c
        self.refine = CrossAttention(factory, f"{name}.refine", c, out_proj=True, scale_logits=scale_logits)
        self.temp = CrossAttention(factory, f"{name}.temp", c, out_proj=True, scale_logits=scale_logits)
        self.select = CrossAttention(factory, f"{name}.select", c, scale_logits=scale_logits)
        self.ffn = MLP(factory, f"{name}.ffn", c, c)

    def __call__(self, o_tilde: Tensor, q_inter: Tensor, refine: bool = True, return_weights=False):
        n, t, c = o_tilde.shape
        if refine:
            flat = o_tilde.reshape(n * t, c)
            flat = flat + self.refine(flat, q_inter)
            x = flat.reshape(n, t, c)
            o_hat = x + self.temp(x, x)                   # per-identity over its T steps
        else:
            o_hat = o_tilde
        sel_keys = o_hat.reshape(n * t, c)
        if return_weights:
            pooled, w = self.select(q_inter, sel_keys, return_weights=True)
        else:
            pooled, w = self.select(q_inter, sel_keys), None
        v = self.ffn(pooled)
        if return_weights:
            return o_hat, VideoTokens(v), w
        return o_hat, VideoTokens(v)
