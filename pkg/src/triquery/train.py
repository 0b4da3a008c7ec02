"""Single-clip training steps and the sequential training loop."""

from __future__ import annotations

from .head import LossBundle
from .model import ClipInputs, Model
from .optim import AdamW
from .tensor import backward


def make_optimizer(model: Model) -> AdamW:
    cfg = model.config
    return AdamW(model.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(model: Model, clip: ClipInputs, optimizer: AdamW) -> LossBundle:
    """Forward, reverse sweep, one optimizer update. Returns the losses as
    observed before the update. Non-finite values abort with a diagnostic
    naming the producing op."""
    result = model.forward(clip, compute_loss=True)
    bundle = result.bundle(model.config)
    optimizer.zero_grad()
    backward(result.loss_total, model.params())
    optimizer.step()
    return bundle


def train_loop(model: Model, clips, steps: int, optimizer: AdamW | None = None, on_step=None):
    """Cycle through ``clips`` in order for ``steps`` updates."""
    if not clips:
        raise ValueError("no training clips")
    opt = optimizer or make_optimizer(model)
    history = []
    for step in range(steps):
        clip = clips[step % len(clips)]
        bundle = train_step(model, clip, opt)
        history.append(bundle)
        if on_step is not None:
            on_step(step, bundle)
    return history
