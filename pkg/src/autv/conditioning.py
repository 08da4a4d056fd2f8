"""Prompt embeddings, mask rasterization, and conditioning injection.

The guidance combination follows the usual two-branch form

    eps = eps_uncond + g * (eps_cond - eps_uncond)

which reduces to the conditional branch at g = 1 and the unconditional one at
g = 0; both endpoints are special-cased so the equalities hold exactly (and
the redundant second backend call is skipped).
"""

from __future__ import annotations

import hashlib
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .diffusion import DenoiserBackend, LatentGrid
from .errors import CapabilityError, ConfigError, ShapeError, ValidationError

if TYPE_CHECKING:
    from .first_frame import MaskSet

__all__ = [
    "PromptEmbedding",
    "ConditioningBundle",
    "TextEmbedderBackend",
    "HashEmbedder",
    "embed_prompt",
    "null_prompt",
    "rasterize_masks",
    "nearest_resample",
    "inject_condition",
    "ConditionedDenoiser",
]

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class PromptEmbedding:
    """A fixed-dimension text embedding plus the text it came from."""

    vector: np.ndarray
    source_text: str

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise ShapeError(f"embedding must be 1-d, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("embedding contains non-finite values")
        object.__setattr__(self, "vector", vec)


@dataclass
class ConditioningBundle:
    """Everything a conditioned denoiser call may depend on.

    ``control_map`` is a ``[K, H, W]`` spatial tensor (one channel per object
    instance plus background); ``guidance_scale`` weighs the conditional
    branch as described in the module docstring.
    """

    prompt: Optional[PromptEmbedding]
    control_map: Optional[np.ndarray] = None
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.guidance_scale < 0.0:
            raise ConfigError(f"guidance_scale must be >= 0, got {self.guidance_scale}")
        if self.control_map is not None:
            ctrl = np.asarray(self.control_map)
            if ctrl.ndim != 3:
                raise ShapeError(f"control map must be [K, H, W], got {ctrl.shape}")
            self.control_map = ctrl


class TextEmbedderBackend(ABC):
    """Deterministic text -> vector interface."""

    dim: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Return a 1-d embedding of fixed dimension for ``text``."""


class HashEmbedder(TextEmbedderBackend):
    """Signed hash-bucket token counts, L2-normalized.

    Token buckets come from a stable digest (not the per-process ``hash``), so
    two runs -- or two machines -- embed the same text identically.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise ValidationError(f"prompt produced no tokens: {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            digest = hashlib.sha256(tok.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # opposite-signed tokens can cancel; nudge deterministically
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


def embed_prompt(text: str, embedder: Optional[TextEmbedderBackend] = None) -> PromptEmbedding:
    """Embed non-empty prompt text with the given backend (hash by default)."""
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("prompt text must be a non-empty string")
    embedder = embedder or HashEmbedder()
    return PromptEmbedding(vector=embedder.embed(text), source_text=text)


def null_prompt(dim: int = DEFAULT_EMBED_DIM) -> PromptEmbedding:
    """The all-zeros embedding used for the unconditional guidance branch."""
    return PromptEmbedding(vector=np.zeros(dim, dtype=np.float64), source_text="")


def nearest_resample(mask: np.ndarray, target_shape: tuple) -> np.ndarray:
    """Nearest-neighbor resample of a 2-d mask onto ``target_shape``."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got shape {mask.shape}")
    h, w = mask.shape
    th, tw = target_shape
    if th < 1 or tw < 1:
        raise ShapeError(f"bad target shape {target_shape}")
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    return mask[np.ix_(rows, cols)]


def rasterize_masks(masks: "MaskSet", target_shape: tuple) -> np.ndarray:
    """Rasterize per-instance masks into a one-hot control tensor.

    Returns ``[n_instances + 1, H, W]`` float32 with the background in
    channel 0 and instance k in channel k + 1.  Overlaps are resolved in
    favour of later instances (a warning notes how many pixels were taken).
    """
    th, tw = target_shape
    label_grid = np.zeros((th, tw), dtype=np.int32)
    for idx, (label, mask) in enumerate(masks.instances):
        resampled = nearest_resample(mask, (th, tw)).astype(bool)
        stolen = int(np.count_nonzero(label_grid[resampled]))
        if stolen:
            logger.warning(
                "instance %r overlaps %d already-claimed pixels; later instance wins",
                label,
                stolen,
            )
        label_grid[resampled] = idx + 1
    n = len(masks.instances)
    control = np.zeros((n + 1, th, tw), dtype=np.float32)
    for ch in range(n + 1):
        control[ch] = label_grid == ch
    return control


class ConditionedDenoiser(DenoiserBackend):
    """A denoiser with a conditioning bundle bound in; see :func:`inject_condition`."""

    def __init__(self, backend: DenoiserBackend, bundle: ConditioningBundle):
        self._backend = backend
        self._bundle = bundle
        dim = bundle.prompt.vector.size if bundle.prompt is not None else DEFAULT_EMBED_DIM
        self._uncond = ConditioningBundle(
            prompt=null_prompt(dim), control_map=None, guidance_scale=bundle.guidance_scale
        )
        self.accepts_control = backend.accepts_control

    def predict_noise(self, latent: LatentGrid, t: int, cond=None) -> np.ndarray:
        # the bound bundle wins; a caller-supplied bundle here is a wiring bug
        if cond is not None:
            raise ConfigError("conditioned denoiser already carries its bundle")
        g = self._bundle.guidance_scale
        if g == 1.0:
            return self._backend.predict_noise(latent, t, self._bundle)
        if g == 0.0:
            return self._backend.predict_noise(latent, t, self._uncond)
        eps_cond = self._backend.predict_noise(latent, t, self._bundle)
        eps_uncond = self._backend.predict_noise(latent, t, self._uncond)
        return eps_uncond + g * (eps_cond - eps_uncond)


def inject_condition(bundle: ConditioningBundle, backend: DenoiserBackend) -> ConditionedDenoiser:
    """Bind a conditioning bundle to a backend, checking capabilities up front."""
    if bundle.control_map is not None and not backend.accepts_control:
        raise CapabilityError(
            f"{type(backend).__name__} does not accept control maps; "
            "drop the control channels or pick a control-capable backend"
        )
    return ConditionedDenoiser(backend, bundle)
