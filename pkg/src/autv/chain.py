"""Image-to-video generation by chaining frames through DDIM inversion.

A video of ``M + 1`` frames starts from a pinned first frame ``x_0`` (kept
byte-identical in the output).  Each subsequent frame is produced from its
predecessor:

    z_start(i) = ddim_invert(encode(x_{i-1}))  to depth strength * T
    z_start(i) += scale * N(0, I)              (seeded motion perturbation)
    x_i        = decode(ddim_sample(z_start(i)))

Starting each frame from its predecessor's inverted latent is what holds
adjacent frames together; the small Gaussian perturbation is the only source
of motion beyond what the conditioning asks for.  With zero perturbation and
an input-independent denoiser, inversion followed by sampling is the exact
identity, so every frame reproduces ``x_0``.

Decoded frames are snapped onto the 8-bit pixel grid (they are destined for
PNG storage), which also makes that fixed point exactly assertable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from .conditioning import (
    ConditioningBundle,
    TextEmbedderBackend,
    embed_prompt,
    inject_condition,
    rasterize_masks,
)
from .diffusion import (
    CodecPair,
    DenoiserBackend,
    DiffusionSchedule,
    LatentGrid,
    ddim_invert,
    ddim_sample,
)
from .errors import ChainError, ConfigError, MetricError, ShapeError
from .first_frame import Frame, MaskSet, quantize_unit

if TYPE_CHECKING:
    from .annotation import TextPrompt

__all__ = [
    "ChainConfig",
    "VideoSample",
    "generate_video",
    "independent_video",
    "adjacent_frame_consistency",
    "export_video",
    "load_video",
    "export_video_npz",
]

logger = logging.getLogger(__name__)


@dataclass
class ChainConfig:
    """Knobs for the inversion chain.

    ``num_frames`` is the number of generated frames M (the clip length is
    M + 1); M = 0 degenerates to a single-frame video.  ``inversion_strength``
    sets the inversion depth as a fraction of T.  ``condition_all_frames``
    applies the text conditioning to every chained frame rather than only the
    first; ``reinject_masks`` additionally re-applies the frame-0 control
    channels to chained frames (off by default: objects move, a frozen layout
    fights the motion).
    """

    num_frames: int = 7
    inversion_steps: int = 50
    sample_steps: int = 50
    inversion_strength: float = 1.0
    motion_perturbation_scale: float = 0.05
    condition_all_frames: bool = True
    reinject_masks: bool = False

    def __post_init__(self):
        if self.num_frames < 0:
            raise ConfigError(f"num_frames must be >= 0, got {self.num_frames}")
        if self.inversion_steps < 1 or self.sample_steps < 1:
            raise ConfigError("step counts must be >= 1")
        if not 0.0 < self.inversion_strength <= 1.0:
            raise ConfigError(
                f"inversion_strength must lie in (0, 1], got {self.inversion_strength}"
            )
        if self.motion_perturbation_scale < 0.0:
            raise ConfigError("motion_perturbation_scale must be >= 0")


@dataclass
class VideoSample:
    """An ordered clip of frames with its provenance."""

    frames: list
    fps: float = 8.0
    prompt_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ShapeError("a video needs at least one frame")
        hw = self.frames[0].hw
        for i, frame in enumerate(self.frames):
            if frame.hw != hw:
                raise ShapeError(f"frame {i} has shape {frame.hw}, expected {hw}")
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")

    @property
    def num_generated(self) -> int:
        """M: how many frames follow the pinned first frame."""
        return len(self.frames) - 1

    def as_array(self) -> np.ndarray:
        return np.stack([f.pixels for f in self.frames], axis=0)


def _frame_bundle(
    prompt: Optional["TextPrompt"],
    masks0: Optional[MaskSet],
    cfg: ChainConfig,
    guidance_scale: float,
    embedder: Optional[TextEmbedderBackend],
    hw: tuple,
) -> Optional[ConditioningBundle]:
    if not cfg.condition_all_frames or prompt is None:
        return None
    control = None
    if cfg.reinject_masks and masks0 is not None:
        control = rasterize_masks(masks0, hw)
    return ConditioningBundle(
        prompt=embed_prompt(prompt.text, embedder),
        control_map=control,
        guidance_scale=guidance_scale,
    )


def generate_video(
    x0: Frame,
    masks0: Optional[MaskSet],
    prompt: Optional["TextPrompt"],
    cfg: ChainConfig,
    backend: DenoiserBackend,
    codec: CodecPair,
    schedule: DiffusionSchedule,
    seed: int = 0,
    fps: float = 8.0,
    guidance_scale: float = 1.0,
    embedder: Optional[TextEmbedderBackend] = None,
    condition_hook: Optional[Callable] = None,
) -> VideoSample:
    """Chain ``cfg.num_frames`` frames off a pinned first frame.

    ``condition_hook(i, bundle)`` may return a replacement bundle for frame
    ``i`` (a per-frame conditioning drift hook); return None to keep the
    default.  The per-frame perturbation stream is seeded by ``(seed, i)``,
    so frame i's noise does not depend on how many frames precede it.
    """
    prompt_id = prompt.prompt_id if prompt is not None else ""
    frames = [x0]
    bundle = _frame_bundle(prompt, masks0, cfg, guidance_scale, embedder, x0.hw)
    for i in range(1, cfg.num_frames + 1):
        frame_bundle = bundle
        if condition_hook is not None:
            override = condition_hook(i, bundle)
            if override is not None:
                frame_bundle = override
        denoiser = inject_condition(frame_bundle, backend) if frame_bundle else backend
        try:
            z0 = codec.encode(frames[-1].pixels)
            z_start = ddim_invert(
                z0,
                denoiser,
                None,
                schedule,
                num_inference_steps=cfg.inversion_steps,
                strength=cfg.inversion_strength,
            )
            if cfg.motion_perturbation_scale > 0.0:
                rng = np.random.default_rng((seed, i))
                jolt = rng.standard_normal(z_start.data.shape)
                z_start = LatentGrid(
                    data=z_start.data + cfg.motion_perturbation_scale * jolt,
                    timestep=z_start.timestep,
                )
            z_clean = ddim_sample(
                z_start, denoiser, None, schedule, num_inference_steps=cfg.sample_steps
            )
            frames.append(Frame(pixels=quantize_unit(codec.decode(z_clean))))
        except ChainError:
            raise
        except Exception as exc:
            raise ChainError(f"frame {i} failed: {exc}", frame_index=i) from exc
    return VideoSample(frames=frames, fps=fps, prompt_id=prompt_id, seed=seed)


def independent_video(
    num_frames: int,
    prompt: Optional["TextPrompt"],
    cfg: ChainConfig,
    backend: DenoiserBackend,
    codec: CodecPair,
    schedule: DiffusionSchedule,
    frame_shape: tuple = (32, 32),
    seed: int = 0,
    fps: float = 8.0,
    guidance_scale: float = 1.0,
    embedder: Optional[TextEmbedderBackend] = None,
) -> VideoSample:
    """Comparison baseline: every frame sampled from fresh noise, no chaining.

    Shares the conditioning and step count with :func:`generate_video` so the
    only difference is where each frame's start latent comes from.
    """
    bundle = _frame_bundle(prompt, None, cfg, guidance_scale, embedder, frame_shape)
    denoiser = inject_condition(bundle, backend) if bundle else backend
    channels = getattr(backend, "latent_channels", 3)
    frames = []
    for i in range(num_frames):
        rng = np.random.default_rng((seed, i, 1))
        z_t = LatentGrid(
            data=rng.standard_normal((channels,) + tuple(frame_shape)),
            timestep=schedule.num_steps,
        )
        z0 = ddim_sample(z_t, denoiser, None, schedule, num_inference_steps=cfg.sample_steps)
        frames.append(Frame(pixels=quantize_unit(codec.decode(z0))))
    prompt_id = prompt.prompt_id if prompt is not None else ""
    return VideoSample(frames=frames, fps=fps, prompt_id=prompt_id, seed=seed)


def adjacent_frame_consistency(video: VideoSample) -> float:
    """Mean L2 distance between adjacent frames, normalized into [0, 1].

    Distances are divided by ``sqrt(3 * H * W)`` so the maximum (all pixels
    flipping between 0 and 1) scores exactly 1; identical frames score 0.
    Undefined for single-frame videos.
    """
    if len(video.frames) < 2:
        raise MetricError("adjacent_frame_consistency needs at least 2 frames")
    norm = np.sqrt(video.frames[0].pixels.size)
    dists = [
        float(np.linalg.norm(b.pixels - a.pixels)) / norm
        for a, b in zip(video.frames[:-1], video.frames[1:])
    ]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# Frame-sequence export
# ---------------------------------------------------------------------------


def export_video(
    video: VideoSample, out_dir, cfg: Optional[ChainConfig] = None
) -> Path:
    """Write a PNG frame sequence plus its JSON sidecar into ``out_dir``."""
    from .dataset_io import write_frame_png  # io helpers live together

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        write_frame_png(frame.pixels, out_dir / f"frame_{i:04d}.png")
    sidecar = {
        "fps": video.fps,
        "M": video.num_generated,
        "seed": video.seed,
        "cfg": asdict(cfg) if cfg is not None else None,
        "prompt_id": video.prompt_id,
    }
    (out_dir / "video.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out_dir


def load_video(in_dir) -> VideoSample:
    from .dataset_io import read_frame_png

    in_dir = Path(in_dir)
    sidecar = json.loads((in_dir / "video.json").read_text())
    paths = sorted(in_dir.glob("frame_*.png"))
    frames = [Frame(pixels=read_frame_png(p)) for p in paths]
    return VideoSample(
        frames=frames,
        fps=sidecar["fps"],
        prompt_id=sidecar.get("prompt_id", ""),
        seed=sidecar.get("seed", 0),
    )


def export_video_npz(video: VideoSample, path) -> None:
    """Single-file convenience container: stacked frames plus metadata."""
    np.savez(
        path,
        frames=video.as_array(),
        fps=np.float64(video.fps),
        seed=np.int64(video.seed),
        prompt_id=np.frombuffer(video.prompt_id.encode("utf-8"), dtype=np.uint8),
    )
