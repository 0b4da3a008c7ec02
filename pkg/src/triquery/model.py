"""Full pipeline: frames + tagged expression + trajectories in, per-frame
object tokens, video tokens, ranked tracklet masks, and losses out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregation import (
    IntraFrameAggregator,
    InterFrameAggregator,
    TemporalWindowAttention,
    TokenTimeline,
    VideoTokens,
    link_tokens,
    rel_pos_matrix,
)
from .backbone import ConvPyramid, sample_features
from .config import ConfigError, RunConfig
from .decoder import FrameDecoder, ObjectTokens
from .head import (
    LossBundle,
    Prediction,
    PredictionHead,
    combine_losses,
    consistency_loss,
    frame_assignment,
    frame_loss,
    video_loss,
)
from .nn import Linear, ParamFactory
from .queries import (
    AppearanceQueryGenerator,
    InterQueryGenerator,
    IntraQueryGenerator,
    QueryTriple,
    TrajectorySet,
)
from .tensor import Tensor, no_grad, stack, upsample_bilinear
from .text import TextEmbedder, TokenizedExpression, decompose


@dataclass
class ClipInputs:
    """Everything one training/eval step consumes for a single clip."""

    frames: np.ndarray                     # [T, 3, H, W] in [0, 1]
    expression: TokenizedExpression
    track_coords: np.ndarray               # [n_e, T, 2] frame pixels (x, y)
    track_valid: np.ndarray                # [n_e, T] bool
    gt_masks: np.ndarray | None = None     # [G, T, H, W] bool
    referred_id: int | None = None
    track_embed: np.ndarray | None = None  # recorded [n_e, T, C] override

    @classmethod
    def from_scene(cls, scene) -> "ClipInputs":
        return cls(
            frames=scene.frames,
            expression=scene.expression,
            track_coords=scene.gt_tracks.coords,
            track_valid=scene.gt_tracks.valid,
            gt_masks=scene.gt_masks,
            referred_id=scene.target_id,
        )


@dataclass
class ForwardResult:
    queries: QueryTriple
    tokens: ObjectTokens
    timeline: TokenTimeline
    o_hat: Tensor
    video: VideoTokens
    prediction: Prediction
    loss_f: Tensor | None = None
    loss_v: Tensor | None = None
    loss_con: Tensor | None = None
    loss_total: Tensor | None = None
    aux: dict = field(default_factory=dict)

    def bundle(self, cfg: RunConfig) -> LossBundle:
        total = float(self.loss_total.data)
        return LossBundle(
            l_f=float(self.loss_f.data),
            l_v=float(self.loss_v.data),
            l_con=float(self.loss_con.data),
            l_total=total,
            lambda_v=cfg.lambda_v,
            lambda_f=cfg.lambda_f,
            lambda_con=cfg.lambda_con,
        )


class Model:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        c, d = config.c, config.d
        scale = config.scale_logits
        self.factory = ParamFactory(config.seed, config.dtype)
        f = self.factory
        self.backbone = ConvPyramid(f, "backbone", c)
        self.text_embed = TextEmbedder(f, "text", config.vocab_size, d, config.max_words)
        self.text_proj = Linear(f, "qformer.text_proj", d, c)
        self.gen_app = AppearanceQueryGenerator(f, "qformer.app", c, config.n_a, scale)
        self.gen_intra = IntraQueryGenerator(f, "qformer.intra", c, config.n_i, scale)
        self.gen_inter = InterQueryGenerator(
            f, "qformer.inter", c, config.n_e, scale, config.pool_scope
        )
        self.decoder = FrameDecoder(f, "decoder", c, config.c1, layers=3, scale_logits=scale)
        self.iia = IntraFrameAggregator(f, "aggregation.intra", c, scale)
        self.window_attn = TemporalWindowAttention(f, "aggregation.window", c, scale)
        self.ima = InterFrameAggregator(f, "aggregation.inter", c, scale)
        self.head = PredictionHead(f, "head", c, config.c1)

    # -- parameters ------------------------------------------------------------

    def params(self):
        return self.factory.params()

    def load_state(self, state):
        self.factory.load_state(state)

    # -- pieces of the forward pass ----------------------------------------------

    def encode_text(self, expression: TokenizedExpression):
        masks = decompose(expression)
        tf = self.text_embed(expression, masks)
        f_s = self.text_proj(tf.f_s)
        f_r = self.text_proj(tf.f_r)
        f_e = self.text_proj(tf.f_e)
        ctx = self.text_proj(tf.f_l.mean(axis=0))
        return tf, masks, f_s, f_r, f_e, ctx

    def trajectories(self, clip: ClipInputs, level1: Tensor, use_traj: bool) -> TrajectorySet:
        n_e = self.config.n_e
        coords = np.asarray(clip.track_coords, float)
        valid = np.asarray(clip.track_valid, bool)
        if coords.shape[0] != n_e:
            raise ConfigError(
                f"clip provides {coords.shape[0]} tracks but the model expects {n_e}"
            )
        if not use_traj:
            t = coords.shape[1]
            zeros = Tensor(np.zeros((n_e, t, self.config.c), self.config.dtype))
            return TrajectorySet(np.zeros_like(coords), np.ones_like(valid), zeros)
        if clip.track_embed is not None:
            emb = np.asarray(clip.track_embed)
            if emb.shape != (n_e, coords.shape[1], self.config.c):
                raise ConfigError(f"recorded trajectory embeddings have shape {emb.shape}")
            return TrajectorySet(coords, valid, Tensor(emb.astype(self.config.dtype)))
        stride = clip.frames.shape[-1] / level1.shape[-1]
        per_frame = [
            sample_features(level1[t], coords[:, t, :], stride)
            for t in range(coords.shape[1])
        ]
        return TrajectorySet(coords, valid, stack(per_frame, axis=1))

    # -- full pass ------------------------------------------------------------------

    def forward(self, clip: ClipInputs, compute_loss: bool = True, want_aux: bool = False) -> ForwardResult:
        cfg = self.config
        frames = np.asarray(clip.frames, cfg.dtype)
        t, _, fh, fw = frames.shape
        aux: dict = {}

        pyramid = self.backbone(frames)
        levels = self.backbone.project(pyramid)
        level1 = levels[0]

        _, _, f_s, f_r, f_e, ctx = self.encode_text(clip.expression)

        pooled = [lvl.mean(axis=0) for lvl in levels]
        q_app, app_aux = self.gen_app(f_s, pooled, cfg.k)
        q_intra = self.gen_intra(f_r, ctx.reshape(-1))
        traj = self.trajectories(clip, level1, cfg.use_traj)
        q_inter, pool_w = self.gen_inter(f_e, traj, (fh, fw))
        queries = QueryTriple(q_app, q_intra, q_inter)

        if want_aux:
            tokens, cross_maps = self.decoder.decode_clip(q_app, level1, want_weights=True)
            aux["decoder_cross"] = cross_maps
            aux["appearance"] = app_aux
            aux["pool_weights"] = pool_w
        else:
            tokens = self.decoder.decode_clip(q_app, level1)

        if cfg.use_iia and cfg.n_a > 1:
            per_frame = []
            for ft in range(t):
                relpos = rel_pos_matrix(tokens.boxes[ft], tokens.coarse_masks.data[:, ft])
                per_frame.append(
                    self.iia(tokens.o[:, ft], relpos, q_intra, use_rpe=cfg.use_rpe)
                )
            o_prime = stack(per_frame, axis=1)
        else:
            o_prime = tokens.o

        timeline = link_tokens(o_prime)

        if cfg.use_ima:
            o_tilde = self.window_attn(timeline.linked, cfg.window)
            o_hat, video = self.ima(o_tilde, q_inter, refine=True)
        else:
            o_hat, video = self.ima(timeline.linked, q_inter, refine=False)

        prediction = self.head.predict(video.v, tokens.pixel_embed)

        result = ForwardResult(queries, tokens, timeline, o_hat, video, prediction, aux=aux)

        if compute_loss:
            if clip.gt_masks is None or clip.referred_id is None:
                raise ValueError("loss computation needs ground-truth masks and a referred id")
            gt = np.asarray(clip.gt_masks, cfg.dtype)
            frame_logits = upsample_bilinear(tokens.mask_logits, fh, fw)
            frame_probs = frame_logits.sigmoid()
            assignment = frame_assignment(frame_probs.data, gt)
            l_f = frame_loss(frame_probs, gt, assignment)
            video_logits = upsample_bilinear(prediction.mask_logits, fh, fw)
            video_probs = video_logits.sigmoid()
            l_v, best = video_loss(prediction, video_probs, gt[clip.referred_id])
            l_con = consistency_loss(o_hat, cfg.consistency_mean_over_t)
            l_total = combine_losses(l_v, l_f, l_con, cfg.lambda_v, cfg.lambda_f, cfg.lambda_con)
            result.loss_f, result.loss_v, result.loss_con, result.loss_total = l_f, l_v, l_con, l_total
            aux["assignment"] = assignment
            aux["best_token"] = best
        return result

    def segment(self, clip: ClipInputs) -> np.ndarray:
        """Binary tracklet of the top-ranked token at frame resolution."""
        t, _, fh, fw = clip.frames.shape
        with no_grad():
            res = self.forward(clip, compute_loss=False)
            top = int(res.prediction.ranking[0])
            logits = upsample_bilinear(res.prediction.mask_logits[top], fh, fw)
            return logits.sigmoid().data > 0.5
