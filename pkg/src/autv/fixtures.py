"""Synthetic clips with known ground truth, for tests, demos, and smoke runs.

Everything here is analytic: object masks are computed from the same
geometry that painted the pixels, so tracking and overlap scores have an
exact reference. Three design rules keep the fixtures honest:

* Backgrounds are low-gradient (|grad| stays under the watermark detector's
  floor), so only the deliberately painted static glyph can ever look like a
  watermark.
* Objects are bright (luma >= 0.75) on dim ground (<= 0.6) and carry an
  aperiodic internal ramp, so template matching has a unique exact peak at
  the true offset and intensity refinement reproduces the analytic mask.
* Motion is integer-valued and bounced away from frame borders, so masks
  never clip and their areas stay constant unless a clip is built to violate
  exactly that.

``curation_suite`` returns ten clips, four clean and six each engineered to
trip exactly one rejection reason.
"""

from __future__ import annotations

import numpy as np

from .annotation import (
    CAMERA_ANGLE_VALUES,
    CAMERA_POSITION_VALUES,
    VIDEO_CLARITY_VALUES,
    VideoAnnotation,
)
from .chain import VideoSample
from .conditioning import DEFAULT_EMBED_DIM, HashEmbedder, rasterize_masks
from .first_frame import Frame, MaskSet, quantize_unit
from .propagation import MaskVideo

__all__ = [
    "PALETTES",
    "palette_prompt",
    "gentle_texture",
    "rect_mask",
    "ellipse_mask",
    "draw_object",
    "moving_shapes_clip",
    "rigid_motion_dataset",
    "static_clip",
    "jitter_clip",
    "scene_change_clip",
    "watermark_clip",
    "special_motion_clip",
    "low_aesthetic_clip",
    "curation_suite",
    "default_training_batch",
    "ANNOTATION_POOLS",
    "random_annotation",
]

# (name, bright fill color) pairs; fills keep luma >= 0.75 after the ramp
PALETTES = [
    ("crimson", (0.95, 0.80, 0.78)),
    ("emerald", (0.78, 0.95, 0.80)),
    ("azure", (0.78, 0.82, 0.95)),
    ("amber", (0.95, 0.90, 0.75)),
]


def palette_prompt(index: int) -> str:
    name = PALETTES[index % len(PALETTES)][0]
    return f"a {name} block drifting over a dim field"


def gentle_texture(
    frame_shape: tuple,
    base: tuple = (0.31, 0.29, 0.27),
    phase: float = 0.0,
) -> np.ndarray:
    """Dim, colorful background canvas of shape [3, H, W].

    One sinusoid is shared by all channels so the luma profile never
    flattens along x: any horizontal drift then moves every pixel's luma,
    which keeps honest motion from reading as a frozen overlay.
    """
    h, w = frame_shape
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    # two incommensurate periods: joint period 126 px, so a phase-correlation
    # peak on the luma channel is unambiguous within any 32-px frame
    shared = 0.07 * np.sin(2 * np.pi * x / 9.0 + 0.7 * phase) + 0.06 * np.sin(
        2 * np.pi * x / 14.0 + 1.1 * phase
    )
    channels = []
    for c in range(3):
        off = phase + 2.1 * c
        tex = (
            base[c]
            + shared
            + 0.08 * np.sin(2 * np.pi * (x + y) / 18.0 + off)
            + 0.06 * np.sin(2 * np.pi * (x - 2 * y) / 24.0 + 1.7 * off)
            + 0.06 * x / max(w, 1)
            + 0.03 * y / max(h, 1)
        )
        channels.append(tex)
    return np.clip(np.stack(channels, axis=0), 0.05, 0.60).astype(np.float32)


def rect_mask(frame_shape: tuple, top: int, left: int, height: int, width: int) -> np.ndarray:
    mask = np.zeros(frame_shape, dtype=bool)
    mask[top : top + height, left : left + width] = True
    return mask


def ellipse_mask(frame_shape: tuple, cy: int, cx: int, ry: int, rx: int) -> np.ndarray:
    h, w = frame_shape
    y, x = np.mgrid[0:h, 0:w]
    return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


def draw_object(canvas: np.ndarray, mask: np.ndarray, color: tuple) -> None:
    """Paint a bright object with a raster-order ramp in object coordinates.

    The ramp makes the template non-constant and aperiodic, and riding it on
    the object's own coordinates keeps the appearance rigid under motion.
    """
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return
    ly = ys - ys.min()
    lx = xs - xs.min()
    ramp = (ly * (lx.max() + 1.0) + lx) / max(1.0, ly.max() * (lx.max() + 1.0) + lx.max())
    for c in range(3):
        canvas[c, ys, xs] = np.clip(color[c] - 0.08 + 0.16 * ramp, 0.0, 1.0)


def _bounce(start: int, vel: int, low: int, high: int, steps: int) -> list:
    """Integer positions reflecting off [low, high]; |vel| <= high - low."""
    pos, v, out = start, vel, [start]
    for _ in range(steps - 1):
        pos += v
        if pos > high:
            pos, v = 2 * high - pos, -v
        if pos < low:
            pos, v = 2 * low - pos, -v
        out.append(pos)
    return out


class _MovingRect:
    def __init__(self, rng: np.random.Generator, frame_shape: tuple, lane: tuple, color: tuple):
        h, w = frame_shape
        self.bh = int(rng.integers(4, 7))
        self.bw = int(rng.integers(5, 8))
        lo_y, hi_y = lane
        hi_y = hi_y - self.bh
        hi_x = w - 1 - self.bw
        top = int(rng.integers(lo_y, hi_y + 1))
        left = int(rng.integers(1, hi_x + 1))
        vy = int(rng.integers(-2, 3))
        vx = int(rng.choice([-2, -1, 1, 2]))
        steps = 32  # enough for any clip length used here
        self.tops = _bounce(top, vy, lo_y, hi_y, steps)
        self.lefts = _bounce(left, vx, 1, hi_x, steps)
        self.color = color
        self.frame_shape = frame_shape

    def mask(self, t: int) -> np.ndarray:
        return rect_mask(self.frame_shape, self.tops[t], self.lefts[t], self.bh, self.bw)


def _roll_background(bg: np.ndarray, t: int, roll: tuple) -> np.ndarray:
    return np.roll(bg, (t * roll[0], t * roll[1]), axis=(1, 2))


def moving_shapes_clip(
    num_frames: int = 8,
    frame_shape: tuple = (32, 32),
    num_objects: int = 2,
    seed: int = 0,
    bg_roll: tuple = (0, 1),
    palette: int = 0,
    fps: float = 8.0,
    prompt_id: str = "",
) -> tuple:
    """Textured drifting background plus rigidly moving bright objects."""
    if not 1 <= num_objects <= 2:
        raise ValueError("moving_shapes_clip supports 1 or 2 objects")
    rng = np.random.default_rng((seed, 17))
    h, w = frame_shape
    bg = gentle_texture(frame_shape, phase=float(rng.uniform(0, 2 * np.pi)))
    lanes = [(1, h // 2 - 1), (h // 2 + 1, h - 1)]
    objects = [
        _MovingRect(rng, frame_shape, lanes[k], PALETTES[(palette + k) % len(PALETTES)][1])
        for k in range(num_objects)
    ]
    frames, per_frame = [], []
    for t in range(num_frames):
        canvas = _roll_background(bg, t, bg_roll).copy()
        instances = []
        for k, obj in enumerate(objects):
            m = obj.mask(t)
            draw_object(canvas, m, obj.color)
            instances.append((f"object_{k}", m))
        frames.append(Frame(pixels=quantize_unit(canvas)))
        per_frame.append(MaskSet(instances=instances, frame_shape=frame_shape))
    video = VideoSample(frames=frames, fps=fps, prompt_id=prompt_id, seed=seed)
    return video, MaskVideo(per_frame=per_frame)


def rigid_motion_dataset(
    num_videos: int = 100,
    num_frames: int = 8,
    frame_shape: tuple = (32, 32),
    seed: int = 0,
) -> list:
    """(video, ground-truth masks) pairs with static ground and rigid motion."""
    out = []
    for v in range(num_videos):
        out.append(
            moving_shapes_clip(
                num_frames=num_frames,
                frame_shape=frame_shape,
                num_objects=1 + (v % 2),
                seed=seed * 100003 + v,
                bg_roll=(0, 0),
                palette=v % len(PALETTES),
                prompt_id=f"rigid_{v:03d}",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Curation suite: one clip per rejection reason, plus clean ones
# ---------------------------------------------------------------------------


def static_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 3) -> tuple:
    """Every frame identical: colorful, textured, and completely frozen."""
    rng = np.random.default_rng((seed, 29))
    canvas = gentle_texture(frame_shape, phase=float(rng.uniform(0, 2 * np.pi)))
    m = rect_mask(frame_shape, 8, 10, 6, 7)
    draw_object(canvas, m, PALETTES[1][1])
    frame = Frame(pixels=quantize_unit(canvas))
    frames = [Frame(pixels=frame.pixels.copy()) for _ in range(num_frames)]
    per_frame = [
        MaskSet(instances=[("object_0", m.copy())], frame_shape=frame_shape)
        for _ in range(num_frames)
    ]
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_static", seed=seed),
        MaskVideo(per_frame=per_frame),
    )


def jitter_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 4) -> tuple:
    """Whole scene slams back and forth: +(4, 5) then -(3, 4), every frame.

    The asymmetric swing keeps every pixel visiting several texture samples
    (a pure two-state wobble leaves accidental fixed points), while the
    per-frame shift still flips sign on both axes at every step.
    """
    rng = np.random.default_rng((seed, 31))
    base = gentle_texture(frame_shape, phase=float(rng.uniform(0, 2 * np.pi)))
    m0 = rect_mask(frame_shape, 12, 11, 6, 8)
    draw_object(base, m0, PALETTES[2][1])
    frames, per_frame = [], []
    pos = (0, 0)
    for t in range(num_frames):
        if t > 0:
            step = (4, 5) if t % 2 else (-3, -4)
            pos = (pos[0] + step[0], pos[1] + step[1])
        canvas = np.roll(base, pos, axis=(1, 2))
        mask = np.roll(m0, pos, axis=(0, 1))
        frames.append(Frame(pixels=quantize_unit(canvas)))
        per_frame.append(MaskSet(instances=[("object_0", mask)], frame_shape=frame_shape))
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_jitter", seed=seed),
        MaskVideo(per_frame=per_frame),
    )


def scene_change_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 5) -> tuple:
    """Hard cut at the midpoint: warm scene to cool scene, motion in both."""
    cut = num_frames // 2
    warm = gentle_texture(frame_shape, base=(0.48, 0.28, 0.20), phase=0.8)
    cool = gentle_texture(frame_shape, base=(0.18, 0.28, 0.52), phase=2.9)
    frames, per_frame = [], []
    for t in range(num_frames):
        bg = warm if t < cut else cool
        canvas = _roll_background(bg, t, (0, 1)).copy()
        m = rect_mask(frame_shape, 12, 13 + t, 6, 7)  # drifts with the scene
        draw_object(canvas, m, PALETTES[3][1])
        frames.append(Frame(pixels=quantize_unit(canvas)))
        per_frame.append(MaskSet(instances=[("object_0", m)], frame_shape=frame_shape))
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_scene_change", seed=seed),
        MaskVideo(per_frame=per_frame),
    )


def watermark_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 6) -> tuple:
    """Drifting scene with a frozen high-contrast glyph burned into a corner."""
    video, masks = moving_shapes_clip(
        num_frames=num_frames,
        frame_shape=frame_shape,
        num_objects=1,
        seed=seed,
        bg_roll=(0, 1),
        palette=0,
        prompt_id="fixture_watermark",
    )
    y, x = np.mgrid[0:8, 0:8]
    glyph = (0.1 + 0.8 * (((y // 2) + (x // 2)) % 2)).astype(np.float32)
    frames = []
    for f in video.frames:
        pixels = f.pixels.copy()
        pixels[:, 2:10, 22:30] = glyph  # gray glyph, all channels equal
        frames.append(Frame(pixels=quantize_unit(pixels)))
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_watermark", seed=seed),
        masks,
    )


def special_motion_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 7) -> tuple:
    """Object snaps from 12 px to 30 px at the midpoint: area ratio 1.5."""
    grow_at = num_frames // 2
    bg = gentle_texture(frame_shape, phase=1.3)
    frames, per_frame = [], []
    for t in range(num_frames):
        canvas = _roll_background(bg, t, (0, 1)).copy()
        if t < grow_at:
            m = rect_mask(frame_shape, 10, 6 + t, 3, 4)
        else:
            m = rect_mask(frame_shape, 9, 6 + t, 5, 6)
        draw_object(canvas, m, PALETTES[0][1])
        frames.append(Frame(pixels=quantize_unit(canvas)))
        per_frame.append(MaskSet(instances=[("object_0", m)], frame_shape=frame_shape))
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_special_motion", seed=seed),
        MaskVideo(per_frame=per_frame),
    )


def low_aesthetic_clip(num_frames: int = 8, frame_shape: tuple = (32, 32), seed: int = 8) -> tuple:
    """Flat gray scene with a gray dot: motion present, no color, no contrast."""
    h, w = frame_shape
    frames, per_frame = [], []
    for t in range(num_frames):
        canvas = np.full((3, h, w), 0.5, dtype=np.float32)
        m = rect_mask(frame_shape, 14, 4 + 2 * t, 4, 4)
        canvas[:, m] = 0.85
        frames.append(Frame(pixels=quantize_unit(canvas)))
        per_frame.append(MaskSet(instances=[("object_0", m)], frame_shape=frame_shape))
    return (
        VideoSample(frames=frames, fps=8.0, prompt_id="fixture_low_aesthetic", seed=seed),
        MaskVideo(per_frame=per_frame),
    )


def curation_suite(seed: int = 0) -> list:
    """Ten (video_id, video, masks, expected_reasons) tuples for filter tests."""
    suite = []
    for k in range(4):
        video, masks = moving_shapes_clip(
            num_objects=1 + k % 2,
            seed=seed * 7919 + k,
            palette=k,
            prompt_id=f"fixture_good_{k}",
        )
        suite.append((f"good_{k:02d}", video, masks, []))
    suite.append(("bad_static", *static_clip(seed=seed + 3), ["static"]))
    suite.append(("bad_jitter", *jitter_clip(seed=seed + 4), ["jitter"]))
    suite.append(("bad_scene_change", *scene_change_clip(seed=seed + 5), ["scene_change"]))
    suite.append(("bad_watermark", *watermark_clip(seed=seed + 6), ["watermark_suspect"]))
    suite.append(
        ("bad_special_motion", *special_motion_clip(seed=seed + 7), ["special_motion"])
    )
    suite.append(
        ("bad_low_aesthetic", *low_aesthetic_clip(seed=seed + 8), ["low_aesthetic"])
    )
    return suite


# ---------------------------------------------------------------------------
# Training data for the toy denoiser
# ---------------------------------------------------------------------------


def default_training_batch(
    frame_shape: tuple = (16, 16),
    max_instances: int = 4,
    embedder=None,
):
    """Batch sampler for the toy denoiser: bright block scenes plus controls.

    Returns ``batch_fn(rng, n) -> (z0, control, prompt_vecs)`` where z0 is
    the centered encoding of an image whose masked region carries the
    palette color named in the prompt. The denoiser can only reach the
    training optimum by actually reading the control channels, which is what
    the alignment checks later rely on.
    """
    embedder = embedder or HashEmbedder(dim=DEFAULT_EMBED_DIM)
    h, w = frame_shape
    prompt_vecs = np.stack(
        [embedder.embed(palette_prompt(k)) for k in range(len(PALETTES))]
    ).astype(np.float32)

    def batch_fn(rng: np.random.Generator, n: int):
        z0 = np.empty((n, 3, h, w), dtype=np.float32)
        control = np.zeros((n, 1 + max_instances, h, w), dtype=np.float32)
        pvecs = np.empty((n, prompt_vecs.shape[1]), dtype=np.float32)
        for i in range(n):
            k = int(rng.integers(0, len(PALETTES)))
            canvas = gentle_texture(frame_shape, phase=float(rng.uniform(0, 2 * np.pi)))
            bh = int(rng.integers(4, max(5, h // 2)))
            bw = int(rng.integers(4, max(5, w // 2)))
            top = int(rng.integers(1, h - bh))
            left = int(rng.integers(1, w - bw))
            m = rect_mask(frame_shape, top, left, bh, bw)
            draw_object(canvas, m, PALETTES[k][1])
            z0[i] = 2.0 * quantize_unit(canvas) - 1.0
            raster = rasterize_masks(
                MaskSet(instances=[("block", m)], frame_shape=frame_shape), frame_shape
            )
            control[i, : raster.shape[0]] = raster
            pvecs[i] = prompt_vecs[k]
        return z0, control, pvecs

    return batch_fn


# ---------------------------------------------------------------------------
# Annotation fixtures
# ---------------------------------------------------------------------------

# Value pools for each attribute; phrases are multi-word on purpose so that
# fully populated records caption to natural sentence lengths.
ANNOTATION_POOLS = {
    "central_object": ["block", "marble", "cone", "disk", "prism", "card"],
    "environment": [
        "dim textured field",
        "softly lit arena",
        "pale gridded plain",
        "shaded paper backdrop",
        "quiet matte stage",
    ],
    "texture": ["smooth", "finely grained", "matte", "lightly speckled", "softly brushed"],
    "color": ["red", "deep blue", "pale green", "amber", "violet"],
    "size_shape": ["small rectangular", "broad oval", "tall slender", "compact round"],
    "object2": ["companion block", "distant cone", "glass marble", "folded card"],
    "object3": ["second marble", "leaning prism", "shallow dish", "paper strip"],
    "object4": ["far disk", "thin rod", "small wedge", "pale token"],
    "lighting": ["soft", "warm", "cool", "even"],
    "video_clarity": list(VIDEO_CLARITY_VALUES),
    "movement_behavior": [
        "slow steady drift",
        "gentle diagonal glide",
        "measured side to side sway",
        "calm unhurried slide",
    ],
    "camera_position": list(CAMERA_POSITION_VALUES),
    "camera_angle": list(CAMERA_ANGLE_VALUES),
}


def random_annotation(rng: np.random.Generator) -> VideoAnnotation:
    """A fully populated attribute record drawn uniformly from the pools."""
    pick = lambda key: ANNOTATION_POOLS[key][int(rng.integers(0, len(ANNOTATION_POOLS[key])))]
    return VideoAnnotation(**{k: pick(k) for k in ANNOTATION_POOLS})
