"""Triple query generation: appearance queries refined coarse-to-fine through
the feature pyramid under top-K key selection, intra-frame queries fusing
relational text with sentence context, and inter-frame queries pooled from
point trajectories under motion-text guidance. Also first-frame seed-point
selection by cross-modal similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import sincos_pairs
from .nn import MLP, CrossAttention, Linear, ParamFactory
from .tensor import BIG_NEG, NumericError, ShapeError, Tensor, softmax


@dataclass
class TrajectorySet:
    """Tracked points: frame-pixel coords [n, T, 2] (x, y), validity [n, T],
    and per-step embeddings [n, T, C] once attached."""

    coords: np.ndarray
    valid: np.ndarray
    embeddings: Tensor | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, float)
        self.valid = np.asarray(self.valid, bool)
        if self.coords.ndim != 3 or self.coords.shape[-1] != 2:
            raise ShapeError(f"trajectory coords must be [n, T, 2], got {self.coords.shape}")
        if self.valid.shape != self.coords.shape[:2]:
            raise ShapeError("validity mask must be [n, T]")


@dataclass
class QueryTriple:
    q_app: Tensor
    q_intra: Tensor
    q_inter: Tensor


def _cosine_field(feats: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Best cosine similarity of each pixel feature against any text row."""
    c, h, w = feats.shape
    flat = feats.reshape(c, h * w).T
    fn = np.linalg.norm(flat, axis=1)
    rn = np.linalg.norm(rows, axis=1)
    denom = np.outer(fn, rn)
    sims = np.zeros((h * w, rows.shape[0]))
    ok = denom > 0
    raw = flat @ rows.T
    sims[ok] = raw[ok] / denom[ok]
    return sims.max(axis=1).reshape(h, w)


def select_seed_points(frame_feats, static_rows, n: int, radius: int | None = None):
    """Greedy cross-modal seed picking on the first frame.

    Scores each pixel by its best cosine similarity against the (projected)
    static text rows, then picks the top score repeatedly while suppressing a
    Chebyshev neighborhood of radius max(2, H/8) around every pick. Ties break
    to the smallest row-major index. Returns [n, 2] integer (x, y) coords.
    """
    feats = frame_feats.data if isinstance(frame_feats, Tensor) else np.asarray(frame_feats)
    rows = static_rows.data if isinstance(static_rows, Tensor) else np.asarray(static_rows)
    c, h, w = feats.shape
    if n < 1:
        raise ValueError("need n >= 1 seed points")
    if n > h * w:
        raise ValueError(f"cannot pick {n} points from a {h}x{w} grid")
    r = radius if radius is not None else max(2, h // 8)
    score = _cosine_field(feats, rows)
    alive = np.ones((h, w), bool)
    picks = []
    for _ in range(n):
        if not alive.any():
            raise ValueError("suppression radius exhausted the grid before n picks")
        masked = np.where(alive, score, -np.inf)
        flat = int(np.argmax(masked))  # first occurrence = row-major tie-break
        py, px = divmod(flat, w)
        picks.append((px, py))
        y0, y1 = max(0, py - r + 1), min(h, py + r)
        x0, x1 = max(0, px - r + 1), min(w, px + r)
        alive[y0:y1, x0:x1] = False
    return np.array(picks, int)


def children_indices(prev_idx: np.ndarray, prev_grid, grid) -> np.ndarray:
    """Flat indices of the 2x2 children of coarser-level cells, clipped to grid."""
    hp, wp = prev_grid
    h, w = grid
    rows, cols = np.divmod(np.asarray(prev_idx, int), wp)
    out = []
    for dr in (0, 1):
        for dc in (0, 1):
            rr = 2 * rows + dr
            cc = 2 * cols + dc
            keep = (rr < h) & (cc < w)
            out.append(rr[keep] * w + cc[keep])
    return np.unique(np.concatenate(out))


def _flatten_level(level: Tensor) -> Tensor:
    """[C, H, W] -> [H*W, C]."""
    c, h, w = level.shape
    return level.reshape(c, h * w).swapaxes(0, 1)


def topk_positions(
    h: Tensor,
    level_feats: Tensor,
    k: int,
    attn: CrossAttention,
    prev_idx: np.ndarray | None = None,
    prev_grid=None,
) -> np.ndarray:
    """Top-k grid positions by total attention mass from the alignment rows.

    Candidates are the whole grid, or the 2x2 children of ``prev_idx`` when
    given. Relevance of a candidate is the column sum of the attention weights
    of every alignment row over the candidate set; ties break row-major.
    Returns at most min(k, |candidates|) flat indices into this level's grid.
    """
    grid = (level_feats.shape[-2], level_feats.shape[-1])
    if prev_idx is None:
        cand = np.arange(grid[0] * grid[1])
    else:
        cand = children_indices(prev_idx, prev_grid, grid)
    if cand.size == 0:
        raise ValueError("empty candidate set for top-k selection")
    keys = _flatten_level(level_feats)[cand]
    with np.errstate(all="ignore"):
        q = attn.wq(h).data
        kk = attn.wk(keys).data
        logits = q @ kk.T
        if attn.scale_logits:
            logits = logits / np.sqrt(q.shape[-1])
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        weights = e / e.sum(axis=-1, keepdims=True)
    relevance = weights.sum(axis=0)
    take = min(k, cand.size)
    order = np.lexsort((cand, -relevance))  # by relevance desc, then index asc
    return cand[order[:take]]


class AppearanceQueryGenerator:
    """Coarse-to-fine cross-modal alignment ending in learnable query slots.

    The static text rows attend the full coarsest level; each finer level only
    attends the 2x2 children of the previous level's top-K cells, bounding the
    attended key count independently of image size. The final queries are a
    residual update of learned initial slots.
    """

    def __init__(self, factory: ParamFactory, name: str, c: int, n_a: int, scale_logits=True):
        self.c = c
        self.n_a = n_a
        self.ca = [
            CrossAttention(factory, f"{name}.ca{i}", c, scale_logits=scale_logits)
            for i in range(4)
        ]  # index 0..3 = levels 1..4
        self.mlp = [MLP(factory, f"{name}.mlp{i}", c, c) for i in range(4)]
        self.q_init = factory.uniform(f"{name}.q_init", (n_a, c), fan_in=c)
        self.ca_q = CrossAttention(factory, f"{name}.ca_q", c, scale_logits=scale_logits)
        self.mlp_q = MLP(factory, f"{name}.mlp_q", c, c)

    def __call__(self, f_s: Tensor, levels_pooled: list, k: int):
        """levels_pooled: time-averaged common-width levels, [C, H_i, W_i] each."""
        aux = {"attended": [], "indices": []}
        lvl4 = levels_pooled[3]
        keys4 = _flatten_level(lvl4)
        h = f_s + self.mlp[3](self.ca[3](f_s, keys4))
        idx = topk_positions(h, lvl4, k, self.ca[3])
        aux["indices"].append(idx)
        prev_grid = (lvl4.shape[-2], lvl4.shape[-1])
        for i in (2, 1, 0):
            lvl = levels_pooled[i]
            grid = (lvl.shape[-2], lvl.shape[-1])
            cand = children_indices(idx, prev_grid, grid)
            keys = _flatten_level(lvl)[cand]
            h = h + self.mlp[i](self.ca[i](h, keys))
            aux["attended"].append(int(cand.size))
            if i > 0:
                idx = topk_positions(h, lvl, k, self.ca[i], prev_idx=idx, prev_grid=prev_grid)
                aux["indices"].append(idx)
            prev_grid = grid
        q_app = self.q_init.tensor + self.mlp_q(self.ca_q(self.q_init.tensor, h))
        return q_app, aux


class IntraQueryGenerator:
    """Relation-text attention fused with mean sentence context."""

    def __init__(self, factory: ParamFactory, name: str, c: int, n_i: int, scale_logits=True):
        self.c = c
        self.n_i = n_i
        self.q_init = factory.uniform(f"{name}.q_init", (n_i, c), fan_in=c)
        self.ca = CrossAttention(factory, f"{name}.ca", c, scale_logits=scale_logits)
        self.mlp = MLP(factory, f"{name}.mlp", 2 * c, c)

    def __call__(self, f_r: Tensor, ctx: Tensor) -> Tensor:
        """f_r: [W_r, C] relational rows; ctx: [C] pooled sentence context."""
        attn = self.ca(self.q_init.tensor, f_r)
        ones = Tensor(np.ones((self.n_i, 1), attn.dtype))
        ctx_rep = ones * ctx.reshape(1, self.c)
        from .tensor import concat

        fused = concat([attn, ctx_rep], axis=1)
        return self.q_init.tensor + self.mlp(fused)


class InterQueryGenerator:
    """Trajectory attention pooling steered by motion-phrase semantics.

    Queries are text-enriched slots; keys are trajectory embeddings, both with
    explicit positional terms (a learned per-slot embedding on the query side,
    sinusoidal coordinate encodings plus a learned map on the trajectory side).
    Pooling weights normalize over every trajectory-time token by default, or
    per track when configured; invalid steps are masked out of the softmax.
    """

    def __init__(
        self,
        factory: ParamFactory,
        name: str,
        c: int,
        n_e: int,
        scale_logits=True,
        pool_scope: str = "global",
    ):
        self.c = c
        self.n_e = n_e
        self.scale_logits = scale_logits
        self.pool_scope = pool_scope
        self.q_init = factory.uniform(f"{name}.q_init", (n_e, c), fan_in=c)
        self.ca = CrossAttention(factory, f"{name}.ca", c, scale_logits=scale_logits)
        self.mlp_sem = MLP(factory, f"{name}.mlp_sem", c, c)
        self.embed = factory.uniform(f"{name}.embed", (n_e, c), fan_in=c)
        self.mlp_q_pos = MLP(factory, f"{name}.mlp_q_pos", c, c)
        self.mlp_z_pos = MLP(factory, f"{name}.mlp_z_pos", c, c)
        self.coord_proj = Linear(factory, f"{name}.coord_proj", 32, c)

    def coord_encoding(self, coords: np.ndarray, frame_hw) -> np.ndarray:
        """Sinusoidal features of (x, y): 8 geometric periods spanning 2 to
        2*max(H, W), sin/cos pairs, x block then y block -> 32 dims."""
        m = float(max(frame_hw))
        periods = 2.0 * m ** (np.arange(8) / 7.0)
        fx = sincos_pairs(coords[..., 0], periods)
        fy = sincos_pairs(coords[..., 1], periods)
        return np.concatenate([fx, fy], axis=-1)

    def __call__(self, f_e: Tensor, traj: TrajectorySet, frame_hw) -> tuple:
        if traj.embeddings is None:
            raise ValueError("trajectory embeddings must be attached before query pooling")
        n, t = traj.valid.shape
        if n != self.n_e:
            raise ShapeError(f"expected {self.n_e} tracks, got {n}")
        if not traj.valid.any():
            raise NumericError("every trajectory step is invalid; nothing to pool")
        if self.pool_scope == "per_track" and not traj.valid.any(axis=1).all():
            raise NumericError("per-track pooling requires >= 1 valid step per track")

        z = traj.embeddings
        a = self.q_init.tensor + self.mlp_sem(self.ca(self.q_init.tensor, f_e))
        p_a = self.embed.tensor + self.mlp_q_pos(a)
        pos = Tensor(self.coord_encoding(traj.coords, frame_hw).astype(z.dtype))
        p_z = self.coord_proj(pos) + self.mlp_z_pos(z)

        aq = a + p_a                      # [n_e, C]
        zk = z + p_z                      # [n_e, T, C]
        scale = (1.0 / np.sqrt(self.c)) if self.scale_logits else 1.0
        mask_pen = np.where(traj.valid, 0.0, BIG_NEG)

        if self.pool_scope == "global":
            zk_flat = zk.reshape(n * t, self.c)
            z_flat = z.reshape(n * t, self.c)
            logits = (aq @ zk_flat.T) * scale + Tensor(mask_pen.reshape(1, n * t))
            w = softmax(logits, axis=-1)
            return w @ z_flat, w
        # per-track: each slot pools over its own track only
        q3 = aq.reshape(n, 1, self.c)
        logits = (q3 @ zk.swapaxes(1, 2)) * scale + Tensor(mask_pen.reshape(n, 1, t))
        w = softmax(logits, axis=-1)
        out = (w @ z).reshape(n, self.c)
        return out, w
