"""Object-mask layout generation and mask-conditioned first-frame synthesis.

The text-to-masks stage runs before any pixels exist: it places one binary
mask per requested object (at most four objects; extras are dropped with a
warning).  The first frame is then sampled with those masks rasterized into
the conditioning bundle, scored by how well foreground and background pixel
statistics separate, and retried with fresh noise when the separation is too
weak.  A frame that never clears the bar is returned anyway, flagged
low-quality; dropping is the curation stage's call, not ours.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy import ndimage

from .conditioning import (
    ConditioningBundle,
    TextEmbedderBackend,
    embed_prompt,
    rasterize_masks,
)
from .diffusion import (
    CodecPair,
    DenoiserBackend,
    DiffusionSchedule,
    LatentGrid,
    ddim_sample,
)
from .errors import GenerationError, ShapeError, ValidationError

if TYPE_CHECKING:
    from .annotation import TextPrompt

__all__ = [
    "MAX_OBJECTS",
    "Frame",
    "MaskSet",
    "quantize_unit",
    "MaskGeneratorBackend",
    "ProceduralMaskBackend",
    "DiffusionMaskBackend",
    "generate_masks",
    "alignment_score",
    "FirstFrameResult",
    "generate_first_frame",
]

logger = logging.getLogger(__name__)

MAX_OBJECTS = 4


def quantize_unit(pixels: np.ndarray) -> np.ndarray:
    """Snap [0, 1] floats onto the 8-bit grid PNG storage uses.

    Every frame this package produces passes through here, so float pixels,
    PNG bytes, and re-read frames agree exactly.
    """
    return (np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


@dataclass
class Frame:
    """A ``[3, H, W]`` pixel frame with values clamped into [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ShapeError(f"frame must be [3, H, W], got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GenerationError("frame contains non-finite pixels")
        self.pixels = np.clip(arr, 0.0, 1.0)

    @property
    def hw(self) -> tuple:
        return self.pixels.shape[1:]


@dataclass
class MaskSet:
    """Ordered per-instance binary masks for one frame.

    ``instances`` is a list of ``(label, mask)`` pairs; masks share
    ``frame_shape``.  Generation-time mask sets must have non-empty instances;
    propagated sets may contain all-zero masks for vanished instances, so the
    check is a flag.
    """

    instances: list
    frame_shape: tuple

    def __post_init__(self):
        shape = tuple(self.frame_shape)
        coerced = []
        for label, mask in self.instances:
            if not isinstance(label, str) or not label:
                raise ValidationError(f"instance label must be a non-empty string: {label!r}")
            arr = np.asarray(mask)
            if arr.shape != shape:
                raise ShapeError(
                    f"mask for {label!r} has shape {arr.shape}, expected {shape}"
                )
            coerced.append((label, arr.astype(bool)))
        self.instances = coerced
        self.frame_shape = shape

    def validate_nonempty(self) -> None:
        for label, mask in self.instances:
            if not mask.any():
                raise ValidationError(f"instance {label!r} has an empty mask")

    def labels(self) -> list:
        return [label for label, _ in self.instances]

    def union(self) -> np.ndarray:
        out = np.zeros(self.frame_shape, dtype=bool)
        for _, mask in self.instances:
            out |= mask
        return out


class MaskGeneratorBackend(ABC):
    """Produces one candidate mask per object label; None means "failed"."""

    @abstractmethod
    def generate(self, labels: list, frame_shape: tuple, rng: np.random.Generator) -> list:
        """Return a list of 2-d boolean masks (or None) aligned with ``labels``."""


class ProceduralMaskBackend(MaskGeneratorBackend):
    """Parametric shape placement: ellipses, rectangles and lobed blobs.

    The shape family is keyed off the label text so the same label always
    gets the same silhouette family, while position and size follow the rng.
    """

    def __init__(self, min_radius_frac: float = 0.08, max_radius_frac: float = 0.22):
        self.min_radius_frac = min_radius_frac
        self.max_radius_frac = max_radius_frac

    def generate(self, labels, frame_shape, rng):
        h, w = frame_shape
        yy, xx = np.mgrid[0:h, 0:w]
        masks = []
        for label in labels:
            kind = sum(label.encode("utf-8")) % 3
            cy = rng.uniform(0.25, 0.75) * h
            cx = rng.uniform(0.25, 0.75) * w
            ry = max(2.0, rng.uniform(self.min_radius_frac, self.max_radius_frac) * h)
            rx = max(2.0, rng.uniform(self.min_radius_frac, self.max_radius_frac) * w)
            if kind == 0:
                mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            elif kind == 1:
                mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
            else:
                theta = np.arctan2(yy - cy, xx - cx)
                wobble = 1.0 + 0.35 * np.sin(3.0 * theta + rng.uniform(0, 2 * np.pi))
                mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= wobble
            masks.append(mask)
        return masks


class DiffusionMaskBackend(MaskGeneratorBackend):
    """Samples a one-channel field per object and binarizes it.

    Runs the regular DDIM sampler over a single-channel latent conditioned on
    the label text, thresholds at the field mean, and keeps the largest
    connected component.  Quality depends entirely on the wrapped denoiser;
    an empty component is reported as None so the orchestration layer can
    retry or fall back.
    """

    def __init__(
        self,
        denoiser: DenoiserBackend,
        schedule: DiffusionSchedule,
        num_inference_steps: int = 20,
        embedder: Optional[TextEmbedderBackend] = None,
    ):
        self.denoiser = denoiser
        self.schedule = schedule
        self.num_inference_steps = num_inference_steps
        self.embedder = embedder

    def generate(self, labels, frame_shape, rng):
        masks = []
        for label in labels:
            z_t = LatentGrid(
                data=rng.standard_normal((1,) + tuple(frame_shape)),
                timestep=self.schedule.num_steps,
            )
            cond = ConditioningBundle(prompt=embed_prompt(label, self.embedder))
            z0 = ddim_sample(z_t, self.denoiser, cond, self.schedule, self.num_inference_steps)
            fld = z0.data[0]
            binary = fld > fld.mean()
            labeled, count = ndimage.label(binary)
            if count == 0:
                masks.append(None)
                continue
            sizes = ndimage.sum_labels(np.ones_like(fld), labeled, index=range(1, count + 1))
            masks.append(labeled == (1 + int(np.argmax(sizes))))
        return masks


def generate_masks(
    prompt: "TextPrompt",
    backend: MaskGeneratorBackend,
    frame_shape: tuple = (32, 32),
    seed: int = 0,
) -> MaskSet:
    """Generate one mask per prompt object, capped at :data:`MAX_OBJECTS`.

    Empty candidates are retried once with a derived seed; instances still
    empty after the retry are dropped with a warning.  An empty result set is
    a generation error.
    """
    labels = list(prompt.objects)
    if not labels:
        raise ValidationError(f"prompt {prompt.prompt_id!r} names no objects")
    if len(labels) > MAX_OBJECTS:
        logger.warning(
            "prompt %r names %d objects; keeping the first %d",
            prompt.prompt_id,
            len(labels),
            MAX_OBJECTS,
        )
        labels = labels[:MAX_OBJECTS]
    rng = np.random.default_rng((seed, 0))
    candidates = backend.generate(labels, frame_shape, rng)
    if len(candidates) != len(labels):
        raise GenerationError(
            f"mask backend returned {len(candidates)} masks for {len(labels)} labels"
        )
    missing = [i for i, m in enumerate(candidates) if m is None or not np.any(m)]
    if missing:
        retry_rng = np.random.default_rng((seed, 1))
        retried = backend.generate([labels[i] for i in missing], frame_shape, retry_rng)
        for slot, mask in zip(missing, retried):
            candidates[slot] = mask
    instances = []
    for label, mask in zip(labels, candidates):
        if mask is None or not np.any(mask):
            logger.warning("dropping instance %r: empty mask after one retry", label)
            continue
        instances.append((label, np.asarray(mask, dtype=bool)))
    if not instances:
        raise GenerationError(f"no usable masks generated for prompt {prompt.prompt_id!r}")
    out = MaskSet(instances=instances, frame_shape=frame_shape)
    out.validate_nonempty()
    return out


def alignment_score(frame: Frame, masks: MaskSet) -> float:
    """Absolute luma separation between masked foreground and background."""
    if masks.frame_shape != frame.hw:
        raise ShapeError(
            f"mask shape {masks.frame_shape} != frame shape {frame.hw}"
        )
    luma = frame.pixels.mean(axis=0)
    fg = masks.union()
    if not fg.any() or fg.all():
        return 0.0
    return float(abs(luma[fg].mean() - luma[~fg].mean()))


@dataclass
class FirstFrameResult:
    """A generated first frame plus the quality bookkeeping around it."""

    frame: Frame
    alignment: float
    attempts: int
    low_quality: bool


def generate_first_frame(
    prompt: "TextPrompt",
    masks: MaskSet,
    backend: DenoiserBackend,
    codec: CodecPair,
    schedule: DiffusionSchedule,
    seed: int = 0,
    num_inference_steps: int = 50,
    guidance_scale: float = 1.0,
    alignment_threshold: float = 0.2,
    max_retries: int = 3,
    embedder: Optional[TextEmbedderBackend] = None,
) -> FirstFrameResult:
    """Sample a first frame conditioned on prompt text and rasterized masks.

    Retries with fresh start noise up to ``max_retries`` times while the
    alignment score stays below ``alignment_threshold``; the best attempt is
    returned, flagged low-quality if it never cleared the bar.
    """
    from .conditioning import inject_condition  # local to avoid import noise at top

    masks.validate_nonempty()
    control = rasterize_masks(masks, masks.frame_shape)
    bundle = ConditioningBundle(
        prompt=embed_prompt(prompt.text, embedder),
        control_map=control,
        guidance_scale=guidance_scale,
    )
    conditioned = inject_condition(bundle, backend)
    channels = getattr(backend, "latent_channels", 3)
    best = None
    for attempt in range(max_retries):
        rng = np.random.default_rng((seed, attempt))
        z_t = LatentGrid(
            data=rng.standard_normal((channels,) + masks.frame_shape),
            timestep=schedule.num_steps,
        )
        z0 = ddim_sample(z_t, conditioned, None, schedule, num_inference_steps)
        frame = Frame(pixels=quantize_unit(codec.decode(z0)))
        score = alignment_score(frame, masks)
        if best is None or score > best.alignment:
            best = FirstFrameResult(
                frame=frame, alignment=score, attempts=attempt + 1, low_quality=False
            )
        if score >= alignment_threshold:
            return best
    best.low_quality = True
    best.attempts = max_retries
    logger.warning(
        "first frame for prompt %r stayed below alignment %.2f after %d attempts "
        "(best %.3f); flagged low-quality",
        prompt.prompt_id,
        alignment_threshold,
        max_retries,
        best.alignment,
    )
    return best
