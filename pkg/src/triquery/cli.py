"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, inspect-attn. Exit codes:
0 success, 2 configuration/validation error, 3 numeric failure. The env var
TQF_THREADS caps scene-level parallelism during evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checks import gradcheck_suite
from .config import ConfigError, RunConfig
from .metrics import eval_dataset
from .model import ClipInputs, Model
from .scenes import assign_modes, generate_scene, load_scene, save_scene
from .tenio import load_checkpoint, save_checkpoint, write_ten
from .tensor import NumericError
from .train import make_optimizer, train_step

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _resolved_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    for name in ("seed", "precision", "steps"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    for flag, field in (
        ("no_iia", "use_iia"),
        ("no_ima", "use_ima"),
        ("no_traj", "use_traj"),
        ("no_rpe", "use_rpe"),
    ):
        if getattr(args, flag, False):
            overrides[field] = False
    return cfg.replace(**overrides) if overrides else cfg.validate()


def _scene_dirs(data_dir) -> list:
    data = Path(data_dir)
    manifest = data / "manifest.json"
    if manifest.exists():
        with open(manifest) as fh:
            doc = json.load(fh)
        return [data / rec["path"] for rec in doc["scenes"]]
    dirs = sorted(p for p in data.iterdir() if (p / "scene.json").exists())
    if not dirs:
        raise ConfigError(f"no scenes found under {data_dir}")
    return dirs


def _thread_cap() -> int:
    env = os.environ.get("TQF_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"TQF_THREADS must be an integer, got {env!r}") from exc
        if cap < 1:
            raise ConfigError("TQF_THREADS must be >= 1")
        return cap
    return min(4, os.cpu_count() or 1)


def cmd_gen_data(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = assign_modes(args.count, cfg.mode_weights)
    records = []
    for i, mode in enumerate(modes):
        seed = cfg.seed + i
        scene = generate_scene(cfg, seed, mode)
        name = f"scene_{i:04d}"
        save_scene(out / name, scene)
        records.append({"path": name, "mode": mode, "seed": seed})
    with open(out / "manifest.json", "w") as fh:
        json.dump(
            {"count": len(records), "scenes": records, "config": cfg.to_dict()},
            fh, indent=1, sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {len(records)} scenes to {out}")
    return EXIT_OK


def _load_clips(cfg: RunConfig, data_dir):
    clips = []
    for d in _scene_dirs(data_dir):
        scene = load_scene(d)
        clip = ClipInputs.from_scene(scene)
        t, _, h, w = clip.frames.shape
        if (t, h, w) != (cfg.frames, cfg.height, cfg.width):
            raise ConfigError(
                f"scene {d} is {t}x{h}x{w}, config expects {cfg.frames}x{cfg.height}x{cfg.width}"
            )
        if clip.track_coords.shape[0] != cfg.n_e:
            raise ConfigError(
                f"scene {d} has {clip.track_coords.shape[0]} tracks, config expects {cfg.n_e}"
            )
        clips.append(clip)
    return clips


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    clips = _load_clips(cfg, args.data)
    model = Model(cfg)
    opt = make_optimizer(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as log:
        log.write(json.dumps({"config": cfg.to_dict()}, sort_keys=True) + "\n")
        for step in range(cfg.steps):
            clip = clips[step % len(clips)]
            bundle = train_step(model, clip, opt)
            row = {"step": step, **bundle.to_dict()}
            log.write(json.dumps(row, sort_keys=True) + "\n")
            if args.log_every and step % args.log_every == 0:
                print(f"step {step}: total {bundle.l_total:.4f}")
    save_checkpoint(out, model.params(), {"config": cfg.to_dict(), "seed": cfg.seed, "step": cfg.steps})
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _model_from_checkpoint(args) -> Model:
    manifest, state = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(manifest["config"])
    overrides = {}
    if getattr(args, "precision", None):
        overrides["precision"] = args.precision
    for flag, field in (
        ("no_iia", "use_iia"),
        ("no_ima", "use_ima"),
        ("no_traj", "use_traj"),
        ("no_rpe", "use_rpe"),
    ):
        if getattr(args, flag, False):
            overrides[field] = False
    if overrides:
        cfg = cfg.replace(**overrides)
    model = Model(cfg)
    model.load_state(state)
    return model


def evaluate_model(model: Model, clips, threads: int | None = None):
    """Segment every clip (read-only, order-stable) and score the dataset."""
    cap = threads if threads is not None else _thread_cap()
    if cap > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            preds = list(pool.map(model.segment, clips))
    else:
        preds = [model.segment(c) for c in clips]
    gts = [c.gt_masks[c.referred_id] for c in clips]
    return eval_dataset(preds, gts)


def cmd_eval(args) -> int:
    model = _model_from_checkpoint(args)
    clips = _load_clips(model.config, args.data)
    report = evaluate_model(model, clips)
    doc = report.to_dict()
    text = json.dumps(doc, indent=1, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    base = RunConfig.from_json(args.config) if args.config else None
    results = gradcheck_suite(base, inject_bug=args.inject_bug)
    failed = 0
    for res in results:
        worst = res.report.worst()
        state = "PASS" if res.passed else "FAIL"
        if not res.passed:
            failed += 1
        print(
            f"[gradcheck] {res.module}/{res.op}: {state} "
            f"(worst {worst.max_rel_err:.3e} on {worst.name})"
        )
    if failed:
        print(f"[gradcheck] {failed}/{len(results)} checks failed")
        return EXIT_NUMERIC
    print(f"[gradcheck] all {len(results)} checks passed")
    return EXIT_OK


def cmd_inspect_attn(args) -> int:
    model = _model_from_checkpoint(args)
    scene = load_scene(args.scene)
    clip = ClipInputs.from_scene(scene)
    res = model.forward(clip, compute_loss=False, want_aux=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, maps in enumerate(res.aux.get("decoder_cross", [])):
        for layer, wmap in enumerate(maps):
            write_ten(out / f"decoder_cross_t{t}_layer{layer}.ten", wmap.data)
    write_ten(out / "trajectory_pool_weights.ten", res.aux["pool_weights"].data)
    for level, idx in enumerate(res.aux["appearance"]["indices"]):
        write_ten(out / f"appearance_topk_level{4 - level}.ten", idx.astype(np.float64))
    write_ten(out / "video_masks.ten", res.prediction.video_masks.data)
    print(f"attention dumps written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="triquery", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, precision=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        if precision:
            p.add_argument("--precision", choices=("f32", "f64"), default=None)

    g = sub.add_parser("gen-data", help="generate synthetic scenes")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train on a scene directory")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--log-every", type=int, default=50)
    for flag in ("--no-iia", "--no-ima", "--no-traj", "--no-rpe"):
        t.add_argument(flag, action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--precision", choices=("f32", "f64"), default=None)
    for flag in ("--no-iia", "--no-ima", "--no-traj", "--no-rpe"):
        e.add_argument(flag, action="store_true")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks (f64)")
    c.add_argument("--config", help="JSON config file (micro dims are forced)")
    c.add_argument("--inject-bug", action="store_true", help="flip analytic signs to test the checker")
    c.set_defaults(fn=cmd_gradcheck)

    i = sub.add_parser("inspect-attn", help="dump attention maps as .ten files")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--scene", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(fn=cmd_inspect_attn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
