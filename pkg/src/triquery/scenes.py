"""Deterministic synthetic clips: colored shapes moving on a dark canvas,
with ground-truth masks, point tracks inside the target, and a templated
referring expression (tokens arrive pre-tagged, so no parser is involved).

Scene modes stress the two classic confusions: ``appearance_twin`` pairs two
same-colored shapes with different motions (only the motion phrase
disambiguates), ``motion_twin`` pairs two same-motion shapes with different
colors (only the color does), and ``mixed`` includes one distractor of each
kind so the full sentence is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SCENE_MODES, ConfigError, RunConfig
from .queries import TrajectorySet
from .tenio import read_ten, write_ten
from .text import TokenizedExpression

SHAPES = ("circle", "square", "triangle")
MOTIONS = ("static", "linear", "circular", "fall")
COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.80, 0.20),
    "blue": (0.20, 0.30, 0.90),
    "yellow": (0.90, 0.85, 0.15),
    "magenta": (0.85, 0.20, 0.80),
    "cyan": (0.15, 0.80, 0.85),
}
BACKGROUND = 0.08

_MOTION_VERB = {"static": "resting", "linear": "gliding", "circular": "circling", "fall": "falling"}
_DIR_ADV = {"right": "rightward", "left": "leftward", "down": "downward", "up": "upward"}
_DIR_VEC = {"right": (1.0, 0.0), "left": (-1.0, 0.0), "down": (0.0, 1.0), "up": (0.0, -1.0)}


@dataclass
class SceneObject:
    shape: str
    color: str
    motion: str
    size: float
    centers: np.ndarray  # [T, 2] float (x, y)
    params: dict

    def record(self) -> dict:
        return {
            "shape": self.shape,
            "color": self.color,
            "motion": self.motion,
            "size": self.size,
            "centers": self.centers.tolist(),
            "params": self.params,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SceneObject":
        return cls(
            rec["shape"], rec["color"], rec["motion"], rec["size"],
            np.asarray(rec["centers"], float), rec["params"],
        )


@dataclass
class SceneClip:
    frames: np.ndarray        # [T, 3, H, W] float32
    gt_masks: np.ndarray      # [n_obj, T, H, W] bool
    objects: list
    expression: TokenizedExpression
    target_id: int
    gt_tracks: TrajectorySet
    mode: str
    seed: int


# -- geometry -------------------------------------------------------------------


def _motion_centers(motion: str, t_frames: int, params: dict) -> np.ndarray:
    tt = np.arange(t_frames)[:, None].astype(float)
    if motion == "static":
        return np.repeat(np.asarray([params["start"]], float), t_frames, axis=0)
    if motion == "linear":
        return np.asarray(params["start"], float) + tt * np.asarray(params["velocity"], float)
    if motion == "circular":
        ang = params["phase"] + params["omega"] * tt[:, 0]
        orbit = np.asarray(params["orbit"], float)
        return orbit + params["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if motion == "fall":
        start = np.asarray(params["start"], float)
        dy = params["v0"] * tt[:, 0] + 0.5 * params["accel"] * tt[:, 0] ** 2
        return np.stack([np.full(t_frames, start[0]), start[1] + dy], axis=1)
    raise ValueError(f"unknown motion {motion!r}")


def rasterize_shape(shape: str, cx: float, cy: float, size: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= size**2
    if shape == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= size
    if shape == "triangle":
        v0 = (cx, cy - size)
        v1 = (cx - 0.9 * size, cy + 0.8 * size)
        v2 = (cx + 0.9 * size, cy + 0.8 * size)

        def half(pa, pb):
            return (pb[0] - pa[0]) * (ys - pa[1]) - (pb[1] - pa[1]) * (xs - pa[0])

        d0, d1, d2 = half(v0, v1), half(v1, v2), half(v2, v0)
        neg = (d0 <= 0) & (d1 <= 0) & (d2 <= 0)
        pos = (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
        return neg | pos
    raise ValueError(f"unknown shape {shape!r}")


def _erode(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    return mask & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]


# -- object sampling ---------------------------------------------------------------


def _sample_motion(rng, motion: str, size: float, t_frames: int, h: int, w: int, speed_scale: float):
    """Motion parameters whose whole path stays comfortably inside the frame."""
    margin = size + 2.0
    lo_x, hi_x = margin, w - 1 - margin
    lo_y, hi_y = margin, h - 1 - margin
    if hi_x <= lo_x or hi_y <= lo_y:
        raise ConfigError("objects too large for the frame")

    def pick_start(span_x=0.0, span_y_lo=0.0, span_y_hi=0.0):
        x = rng.uniform(lo_x + max(0, -span_x), hi_x - max(0, span_x))
        y = rng.uniform(lo_y + max(0, -span_y_lo), hi_y - max(0, span_y_hi))
        return [float(x), float(y)]

    if motion == "static":
        return {"start": pick_start()}
    if motion == "linear":
        direction = rng.choice(list(_DIR_VEC))
        speed = rng.uniform(1.6, 2.8) * speed_scale
        vx, vy = (speed * d for d in _DIR_VEC[direction])
        span_x, span_y = vx * (t_frames - 1), vy * (t_frames - 1)
        start = pick_start(span_x, span_y, span_y)
        return {"start": start, "velocity": [vx, vy], "direction": direction}
    if motion == "circular":
        radius = rng.uniform(4.0, 7.0) * speed_scale
        orbit = [
            float(rng.uniform(lo_x + radius, hi_x - radius)),
            float(rng.uniform(lo_y + radius, hi_y - radius)),
        ]
        omega = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 0.8))
        phase = float(rng.uniform(0, 2 * np.pi))
        return {"orbit": orbit, "radius": float(radius), "omega": omega, "phase": phase}
    if motion == "fall":
        v0 = rng.uniform(0.3, 0.8) * speed_scale
        accel = rng.uniform(0.4, 0.8) * speed_scale
        drop = v0 * (t_frames - 1) + 0.5 * accel * (t_frames - 1) ** 2
        start = pick_start(0.0, 0.0, drop)
        return {"start": start, "v0": float(v0), "accel": float(accel), "direction": "down"}
    raise ValueError(motion)


def _paths_clear(centers_a, size_a, placed) -> bool:
    sep_a = 1.5 * size_a + 1.0
    for centers_b, size_b in placed:
        sep = sep_a + 1.5 * size_b + 1.0
        d = np.linalg.norm(centers_a - centers_b, axis=1)
        if (d < sep).any():
            return False
    return True


def _expression_for(mode: str, target: SceneObject, others: list, rng) -> TokenizedExpression:
    color, shape = target.color, target.shape
    verb = _MOTION_VERB[target.motion]
    adv = _DIR_ADV.get(target.params.get("direction", ""), None)
    tokens = ["the", color, shape]
    tags = ["DET", "ADJ", "NOUN"]
    if mode == "motion_twin":
        return TokenizedExpression.make(tokens, tags)
    tokens.append(verb)
    tags.append("VERB_INTRANS")
    if adv is not None:
        tokens.append(adv)
        tags.append("ADV")
    if mode == "mixed" and others and rng.integers(3) == 0:
        # occasional relational tail mentioning another object
        other = others[int(rng.integers(len(others)))]
        tokens += ["chasing", "the", other.color, other.shape]
        tags += ["VERB_TRANS", "DET", "ADJ", "NOUN"]
    return TokenizedExpression.make(tokens, tags)


def _twin_specs(mode: str, rng, n_objects: int):
    """(shape, color, motion) for target, structured distractors, and extras."""
    colors = list(COLORS)
    shape = str(rng.choice(SHAPES))
    color = str(rng.choice(colors))
    moving = [m for m in MOTIONS if m != "static"]
    specs = []
    if mode == "appearance_twin":
        motion = str(rng.choice(moving))
        twin_motion = str(rng.choice([m for m in MOTIONS if m != motion]))
        specs = [(shape, color, motion), (shape, color, twin_motion)]
    elif mode == "motion_twin":
        motion = str(rng.choice(MOTIONS))
        twin_color = str(rng.choice([c for c in colors if c != color]))
        specs = [(shape, color, motion), (shape, twin_color, motion)]
    elif mode == "mixed":
        motion = str(rng.choice(moving))
        twin_motion = str(rng.choice([m for m in MOTIONS if m != motion]))
        specs = [(shape, color, motion), (shape, color, twin_motion)]
        if n_objects >= 3:
            twin_color = str(rng.choice([c for c in colors if c != color]))
            specs.append((shape, twin_color, motion))
    else:
        raise ConfigError(f"unknown scene mode {mode!r}; expected one of {SCENE_MODES}")
    while len(specs) < n_objects:
        ds = str(rng.choice(SHAPES))
        dc = str(rng.choice([c for c in colors if c != color]))
        dm = str(rng.choice(MOTIONS))
        specs.append((ds, dc, dm))
    return specs[:n_objects]


def generate_scene(cfg: RunConfig, seed: int, mode: str = "mixed", n_tracks: int | None = None) -> SceneClip:
    """Deterministic per (cfg, seed, mode). The target is always object 0."""
    cfg.validate()
    if mode not in SCENE_MODES:
        raise ConfigError(f"unknown scene mode {mode!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), SCENE_MODES.index(mode)]))
    t_frames, h, w = cfg.frames, cfg.height, cfg.width
    n_obj = cfg.n_objects
    n_tracks = n_tracks if n_tracks is not None else cfg.n_e

    specs = _twin_specs(mode, rng, n_obj)
    frame_scale = min(h, w) / 64.0
    objects: list[SceneObject] = []
    for round_ in range(10):
        shrink = 0.85**round_ * frame_scale
        objects = []
        placed = []
        ok = True
        for shape, color, motion in specs:
            size = float(max(2.0, rng.uniform(8.0, 11.5) * shrink))
            success = False
            for _ in range(300):
                params = _sample_motion(rng, motion, size, t_frames, h, w, shrink)
                centers = _motion_centers(motion, t_frames, params)
                if _paths_clear(centers, size, placed):
                    objects.append(SceneObject(shape, color, motion, size, centers, params))
                    placed.append((centers, size))
                    success = True
                    break
            if not success:
                ok = False
                break
        if ok:
            break
    if not ok:
        raise ConfigError("could not place non-overlapping objects; reduce n_objects or sizes")

    gt_masks = np.zeros((n_obj, t_frames, h, w), bool)
    frames = np.full((t_frames, 3, h, w), BACKGROUND, np.float32)
    for i, obj in enumerate(objects):
        rgb = COLORS[obj.color]
        for ft in range(t_frames):
            m = rasterize_shape(obj.shape, obj.centers[ft, 0], obj.centers[ft, 1], obj.size, h, w)
            gt_masks[i, ft] = m
            for ch in range(3):
                frames[ft, ch][m] = rgb[ch]

    target_id = 0
    expression = _expression_for(mode, objects[0], objects[1:], rng)
    tracks = _target_tracks(rng, objects[0], gt_masks[0], n_tracks, h, w)
    return SceneClip(frames, gt_masks, objects, expression, target_id, tracks, mode, int(seed))


def _target_tracks(rng, target: SceneObject, masks: np.ndarray, n_tracks: int, h: int, w: int) -> TrajectorySet:
    """Seed points inside the (eroded) first-frame mask, advanced rigidly with
    the object's center. Validity re-checks frame bounds and mask membership."""
    t_frames = masks.shape[0]
    region = _erode(_erode(masks[0]))
    if region.sum() < n_tracks:
        region = _erode(masks[0])
    if region.sum() == 0:
        region = masks[0]
    cand = np.argwhere(region)  # (y, x)
    pick = rng.choice(cand.shape[0], size=n_tracks, replace=cand.shape[0] < n_tracks)
    seeds = cand[pick][:, ::-1].astype(float)  # -> (x, y)
    disp = target.centers - target.centers[0]
    coords = seeds[:, None, :] + disp[None, :, :]
    valid = np.zeros((n_tracks, t_frames), bool)
    for e in range(n_tracks):
        for ft in range(t_frames):
            x, y = coords[e, ft]
            xi, yi = int(round(x)), int(round(y))
            valid[e, ft] = 0 <= xi < w and 0 <= yi < h and masks[ft, yi, xi]
    return TrajectorySet(coords, valid)


# -- dataset layout -----------------------------------------------------------------


def assign_modes(count: int, weights: dict) -> list:
    """Deterministic mode sequence with exact largest-remainder quotas."""
    modes = [m for m in SCENE_MODES if weights.get(m, 0) > 0]
    if not modes:
        raise ConfigError("no scene mode has positive weight")
    total = sum(weights[m] for m in modes)
    quota = {m: weights[m] * count / total for m in modes}
    counts = {m: int(np.floor(quota[m])) for m in modes}
    rem = count - sum(counts.values())
    order = sorted(modes, key=lambda m: (-(quota[m] - counts[m]), SCENE_MODES.index(m)))
    for m in order[:rem]:
        counts[m] += 1
    out = []
    left = dict(counts)
    while len(out) < count:
        for m in modes:
            if left[m] > 0:
                out.append(m)
                left[m] -= 1
                if len(out) == count:
                    break
    return out


def save_scene(scene_dir, scene: SceneClip) -> None:
    d = Path(scene_dir)
    d.mkdir(parents=True, exist_ok=True)
    doc = {
        "mode": scene.mode,
        "seed": scene.seed,
        "target_id": scene.target_id,
        "objects": [o.record() for o in scene.objects],
        "expression": {
            "tokens": list(scene.expression.tokens),
            "tags": list(scene.expression.tags),
            "target_id": scene.target_id,
        },
    }
    with open(d / "scene.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    write_ten(d / "frames.ten", scene.frames.astype(np.float32))
    write_ten(d / "gt_masks.ten", scene.gt_masks.astype(np.float32))
    write_ten(d / "tracks" / "coords.ten", scene.gt_tracks.coords.astype(np.float64))
    with open(d / "tracks" / "valid.json", "w") as fh:
        json.dump({"valid": scene.gt_tracks.valid.astype(int).tolist()}, fh)
        fh.write("\n")


def load_scene(scene_dir) -> SceneClip:
    d = Path(scene_dir)
    with open(d / "scene.json") as fh:
        doc = json.load(fh)
    frames = read_ten(d / "frames.ten").astype(np.float32)
    gt = read_ten(d / "gt_masks.ten") > 0.5
    coords = read_ten(d / "tracks" / "coords.ten")
    with open(d / "tracks" / "valid.json") as fh:
        valid = np.asarray(json.load(fh)["valid"], bool)
    expr = TokenizedExpression.make(doc["expression"]["tokens"], doc["expression"]["tags"])
    objects = [SceneObject.from_record(r) for r in doc["objects"]]
    return SceneClip(
        frames, gt, objects, expr, int(doc["target_id"]),
        TrajectorySet(coords, valid), doc["mode"], int(doc["seed"]),
    )
