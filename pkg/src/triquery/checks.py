"""Gradient-check suite over every parameterized stage, on micro shapes.

Each entry checks one operation family against central finite differences in
f64. The final entry differentiates the complete training objective on a tiny
clip (4x4 frames, 2 frames, 2 slots) with respect to every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .gradcheck import GradCheckReport, grad_check
from .model import ClipInputs, Model
from .nn import MLP, CrossAttention, ParamFactory
from .tensor import Tensor
from .text import TokenizedExpression

MICRO = dict(
    c=8, d=8, c1=4,
    n_a=2, n_i=2, n_e=2, k=2,
    window=3, frames=2, height=4, width=4,
    n_objects=2, vocab_size=64, max_words=8,
    precision="f64", seed=3,
)


@dataclass
class CheckResult:
    module: str
    op: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def micro_config(base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    return cfg.replace(**MICRO)


def micro_clip(cfg: RunConfig, seed: int = 11) -> ClipInputs:
    """Small deterministic instance: two static square objects, two tracks."""
    rng = np.random.default_rng(seed)
    t, h, w = cfg.frames, cfg.height, cfg.width
    frames = rng.uniform(0.0, 1.0, (t, 3, h, w))
    gt = np.zeros((2, t, h, w), bool)
    gt[0, :, 0 : h // 2, 0 : w // 2] = True
    gt[1, :, h // 2 :, w // 2 :] = True
    expr = TokenizedExpression.make(
        ("the", "red", "circle", "gliding", "rightward"),
        ("DET", "ADJ", "NOUN", "VERB_INTRANS", "ADV"),
    )
    coords = np.zeros((cfg.n_e, t, 2))
    coords[:, :, 0] = rng.uniform(0, w / 2 - 1, (cfg.n_e, 1))
    coords[:, :, 1] = rng.uniform(0, h / 2 - 1, (cfg.n_e, 1))
    valid = np.ones((cfg.n_e, t), bool)
    return ClipInputs(frames, expr, coords, valid, gt_masks=gt, referred_id=0)


def _params_with_prefix(model: Model, *prefixes):
    return [p for p in model.params() if any(p.name.startswith(px) for px in prefixes)]


def _sq(t: Tensor) -> Tensor:
    return (t * t).sum()


def gradcheck_suite(
    base: RunConfig | None = None,
    inject_bug: bool = False,
    eps: float = 1e-6,
    tol: float = 1e-5,
    max_coords: int = 6,
) -> list:
    cfg = micro_config(base)
    model = Model(cfg)
    clip = micro_clip(cfg)
    hook = (lambda name, a: -a) if inject_bug else None
    results = []

    def run(module, op, f, params, coords=max_coords):
        rep = grad_check(f, params, eps=eps, tol=tol, max_coords=coords, grad_hook=hook)
        results.append(CheckResult(module, op, rep))

    # numeric-core kernels on standalone instances
    kf = ParamFactory(7, np.float64)
    mlp = MLP(kf, "kernel.mlp", 6, 5)
    x_mlp = Tensor(np.random.default_rng(1).normal(size=(4, 6)))
    run("numeric-core", "mlp_apply", lambda: _sq(mlp(x_mlp)), kf.params())

    af = ParamFactory(9, np.float64)
    ca = CrossAttention(af, "kernel.attn", 6, out_proj=True)
    rng = np.random.default_rng(2)
    q_in = Tensor(rng.normal(size=(3, 6)))
    kv_in = Tensor(rng.normal(size=(5, 6)))
    run("numeric-core", "scaled_dot_attention", lambda: _sq(ca(q_in, kv_in)), af.params())

    # text embedding and projection
    def text_loss():
        _, _, f_s, f_r, f_e, ctx = model.encode_text(clip.expression)
        return _sq(f_s) + _sq(f_r) + _sq(f_e) + _sq(ctx)

    run("text-decomposer", "embed_text", text_loss, _params_with_prefix(model, "text.", "qformer.text_proj"))

    # query generation (appearance path includes the backbone features)
    def forward_queries():
        frames = np.asarray(clip.frames, cfg.dtype)
        levels = model.backbone.project(model.backbone(frames))
        _, _, f_s, f_r, f_e, ctx = model.encode_text(clip.expression)
        pooled = [lvl.mean(axis=0) for lvl in levels]
        q_app, _ = model.gen_app(f_s, pooled, cfg.k)
        q_intra = model.gen_intra(f_r, ctx.reshape(-1))
        traj = model.trajectories(clip, levels[0], True)
        q_inter, _ = model.gen_inter(f_e, traj, (cfg.height, cfg.width))
        return q_app, q_intra, q_inter

    run("query-former", "gen_appearance_queries",
        lambda: _sq(forward_queries()[0]), _params_with_prefix(model, "qformer.app.", "backbone."))
    run("query-former", "gen_intra_queries",
        lambda: _sq(forward_queries()[1]), _params_with_prefix(model, "qformer.intra."))
    run("query-former", "gen_inter_queries",
        lambda: _sq(forward_queries()[2]), _params_with_prefix(model, "qformer.inter."))

    # frame decoding
    def decode_loss():
        res = model.forward(clip, compute_loss=False)
        return _sq(res.tokens.o) + _sq(res.tokens.mask_logits)

    run("frame-decoder", "decode_frame", decode_loss, _params_with_prefix(model, "decoder."))

    # aggregation stages
    def o_hat_loss():
        res = model.forward(clip, compute_loss=False)
        return _sq(res.o_hat) + _sq(res.video.v)

    run("aggregation", "intra_frame_aggregate", o_hat_loss, _params_with_prefix(model, "aggregation.intra."))
    run("aggregation", "temporal_and_selection", o_hat_loss,
        _params_with_prefix(model, "aggregation.window.", "aggregation.inter."))

    # losses and head
    def total_loss():
        return model.forward(clip, compute_loss=True).loss_total

    run("head-loss", "predict_and_losses", total_loss, _params_with_prefix(model, "head."))
    run("head-loss", "full_pipeline", total_loss, model.params(), coords=3)
    return results
