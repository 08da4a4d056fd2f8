"""Noise schedules, the forward process, and deterministic DDIM stepping.

Conventions used throughout:

* timestep ``0`` is clean data, timestep ``T`` is (near-)isotropic noise;
* ``betas[i]`` is the variance increment for timestep ``t = i + 1``, so the
  arrays have length ``T`` and ``alpha_bar(0) == 1`` by definition;
* the forward marginal is  ``z_t = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps``
  with ``eps ~ N(0, I)``;
* the deterministic (eta = 0) reverse update reads

      x0_hat  = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
      z_prev  = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps_hat

  and inversion applies the same two lines in the ascending direction with
  ``eps_hat`` evaluated at the current (less noisy) latent.

All operations are pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import (
    BackendError,
    ConfigError,
    DecodeError,
    GenerationError,
    ScheduleError,
    ShapeError,
    TimestepError,
)

if TYPE_CHECKING:
    from .conditioning import ConditioningBundle

__all__ = [
    "DiffusionSchedule",
    "LatentGrid",
    "DenoiserBackend",
    "CodecPair",
    "IdentityCodec",
    "CenteringCodec",
    "build_schedule",
    "q_sample",
    "ddim_step",
    "ddim_invert_step",
    "ddim_sample",
    "ddim_invert",
    "inference_timesteps",
    "save_schedule",
    "load_schedule",
    "save_latent",
    "load_latent",
]

logger = logging.getLogger(__name__)

# Terminal alpha_bar above this no longer looks like isotropic noise; tiny
# hand-arithmetic schedules legitimately violate it, so warn instead of raise.
_TERMINAL_ALPHA_BAR = 0.01


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed beta/alpha/alpha_bar arrays for a T-step forward process.

    ``alpha_bars[i]`` is the cumulative product ``prod_{k<=i} (1 - betas[k])``,
    i.e. the marginal signal fraction at timestep ``i + 1``.
    """

    num_steps: int
    betas: np.ndarray
    alphas: Optional[np.ndarray] = None
    alpha_bars: Optional[np.ndarray] = None
    kind: str = "custom"

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size != self.num_steps or self.num_steps < 1:
            raise ScheduleError(
                f"need a 1-d beta array of length num_steps={self.num_steps}, "
                f"got shape {betas.shape}"
            )
        if not np.all(np.isfinite(betas)):
            raise ScheduleError("betas contain non-finite values")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ScheduleError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if np.any(np.diff(alpha_bars) >= 0.0):
            raise ScheduleError("alpha_bars must be strictly decreasing")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        if alpha_bars[-1] > _TERMINAL_ALPHA_BAR:
            logger.warning(
                "terminal alpha_bar %.4g > %.2g: latents at t=T retain visible "
                "signal; fine for hand-checked toy schedules only",
                alpha_bars[-1],
                _TERMINAL_ALPHA_BAR,
            )

    def alpha_bar(self, t: int) -> float:
        """Marginal signal fraction at timestep ``t``, with alpha_bar(0) = 1."""
        if not 0 <= t <= self.num_steps:
            raise TimestepError(f"timestep {t} outside [0, {self.num_steps}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def build_schedule(
    num_steps: int,
    beta_start: float,
    beta_end: float,
    kind: str = "linear",
) -> DiffusionSchedule:
    """Construct a T-step noise schedule.

    ``linear`` spaces betas evenly between ``beta_start`` and ``beta_end``.
    ``cosine`` derives betas from the squared-cosine alpha_bar curve and clips
    them into ``[beta_start, beta_end]`` so both kinds honour the same bounds.
    """
    if num_steps < 1:
        raise ScheduleError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    elif kind == "cosine":
        # squared-cosine alpha_bar curve with the usual small offset
        s = 0.008
        steps = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        f = np.cos((steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bars = f / f[0]
        betas = 1.0 - alpha_bars[1:] / alpha_bars[:-1]
        betas = np.clip(betas, beta_start, beta_end)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(num_steps=num_steps, betas=betas, kind=kind)


@dataclass
class LatentGrid:
    """A latent tensor ``[channels, height, width]`` tagged with its timestep."""

    data: np.ndarray
    timestep: int

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"latent must be [C, H, W], got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GenerationError("latent contains non-finite values")
        if self.timestep < 0:
            raise TimestepError(f"timestep must be >= 0, got {self.timestep}")
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape


class DenoiserBackend(ABC):
    """Noise-prediction interface every sampler in this package drives.

    Implementations are pure functions of their inputs; ``accepts_control``
    advertises whether spatial control maps may appear in the conditioning
    bundle (conditioning injection checks it before wiring anything up).
    """

    accepts_control: bool = False

    @abstractmethod
    def predict_noise(
        self, latent: LatentGrid, t: int, cond: Optional["ConditioningBundle"]
    ) -> np.ndarray:
        """Return the predicted noise for ``latent`` at timestep ``t``."""


def _checked_noise(backend, latent: LatentGrid, t: int, cond) -> np.ndarray:
    eps = backend.predict_noise(latent, t, cond)
    eps = np.asarray(eps)
    if eps.shape != latent.data.shape:
        raise BackendError(
            f"backend returned noise of shape {eps.shape}, expected {latent.data.shape}"
        )
    if not np.all(np.isfinite(eps)):
        raise BackendError("backend returned non-finite noise")
    return eps


def q_sample(
    z0: np.ndarray, t: int, noise: np.ndarray, schedule: DiffusionSchedule
) -> np.ndarray:
    """Closed-form forward marginal  z_t = sqrt(abar_t) z_0 + sqrt(1-abar_t) eps."""
    z0 = np.asarray(z0)
    noise = np.asarray(noise)
    if z0.shape != noise.shape:
        raise ShapeError(f"z0 shape {z0.shape} != noise shape {noise.shape}")
    abar = schedule.alpha_bar(t)
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * noise


def ddim_step(
    z_t: LatentGrid,
    t: int,
    t_prev: int,
    backend: DenoiserBackend,
    cond: Optional["ConditioningBundle"],
    schedule: DiffusionSchedule,
) -> LatentGrid:
    """One deterministic reverse step from timestep ``t`` down to ``t_prev``.

        x0_hat = (z_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)
        z_prev = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps_hat
    """
    if not t_prev < t:
        raise TimestepError(f"reverse step needs t_prev < t, got {t_prev} >= {t}")
    abar_t = schedule.alpha_bar(t)
    abar_p = schedule.alpha_bar(t_prev)
    eps = _checked_noise(backend, z_t, t, cond)
    x0_hat = (z_t.data - math.sqrt(1.0 - abar_t) * eps) / math.sqrt(abar_t)
    data = math.sqrt(abar_p) * x0_hat + math.sqrt(1.0 - abar_p) * eps
    return LatentGrid(data=data, timestep=t_prev)


def ddim_invert_step(
    z_t: LatentGrid,
    t: int,
    t_next: int,
    backend: DenoiserBackend,
    cond: Optional["ConditioningBundle"],
    schedule: DiffusionSchedule,
) -> LatentGrid:
    """One deterministic forward (inversion) step from ``t`` up to ``t_next``.

    The algebraic reversal of :func:`ddim_step` with ``eps_hat`` evaluated at
    the current, less-noisy latent; exact only when ``eps_hat`` is locally
    constant between the two timesteps.
    """
    if not t_next > t:
        raise TimestepError(f"inversion step needs t_next > t, got {t_next} <= {t}")
    abar_t = schedule.alpha_bar(t)
    abar_n = schedule.alpha_bar(t_next)
    eps = _checked_noise(backend, z_t, t, cond)
    x0_hat = (z_t.data - math.sqrt(1.0 - abar_t) * eps) / math.sqrt(abar_t)
    data = math.sqrt(abar_n) * x0_hat + math.sqrt(1.0 - abar_n) * eps
    return LatentGrid(data=data, timestep=t_next)


def inference_timesteps(stop: int, num_inference_steps: int) -> np.ndarray:
    """Strictly increasing ladder ``[0, ..., stop]`` with ``num_inference_steps`` rungs.

    Sampling walks the ladder downward, inversion upward; building both from
    the same ladder makes the two trajectories visit identical (t, t_prev)
    pairs, which is what keeps round trips tight.
    """
    if num_inference_steps < 1:
        raise ConfigError(f"num_inference_steps must be >= 1, got {num_inference_steps}")
    if stop < 1:
        raise TimestepError(f"ladder endpoint must be >= 1, got {stop}")
    if num_inference_steps > stop:
        raise ConfigError(
            f"num_inference_steps={num_inference_steps} exceeds endpoint {stop}; "
            "the stride would collapse"
        )
    ladder = np.round(np.linspace(0.0, float(stop), num_inference_steps + 1)).astype(int)
    if np.any(np.diff(ladder) <= 0):
        raise ConfigError("timestep ladder has duplicate rungs; reduce num_inference_steps")
    return ladder


def ddim_sample(
    z_start: LatentGrid,
    backend: DenoiserBackend,
    cond: Optional["ConditioningBundle"],
    schedule: DiffusionSchedule,
    num_inference_steps: int = 50,
) -> LatentGrid:
    """Walk a latent from its current timestep down to a clean latent at t=0."""
    start_t = z_start.timestep
    if start_t < 1:
        raise TimestepError("z_start is already at timestep 0; nothing to sample")
    if start_t > schedule.num_steps:
        raise TimestepError(
            f"z_start timestep {start_t} exceeds schedule length {schedule.num_steps}"
        )
    ladder = inference_timesteps(start_t, num_inference_steps)
    z = z_start
    for k in range(len(ladder) - 1, 0, -1):
        z = ddim_step(z, int(ladder[k]), int(ladder[k - 1]), backend, cond, schedule)
    return z


def ddim_invert(
    z0: LatentGrid,
    backend: DenoiserBackend,
    cond: Optional["ConditioningBundle"],
    schedule: DiffusionSchedule,
    num_inference_steps: int = 50,
    strength: float = 1.0,
) -> LatentGrid:
    """Walk a clean latent up the ladder, to depth ``round(strength * T)``.

    ``strength`` in (0, 1] controls how deep the inversion goes; 1.0 ends at
    timestep T.  The partial endpoint is the nearest ladder rung, so a
    subsequent :func:`ddim_sample` with the same step count retraces the same
    (t, t_prev) pairs in reverse.
    """
    if z0.timestep != 0:
        raise TimestepError(f"inversion starts from a clean latent, got t={z0.timestep}")
    if not 0.0 < strength <= 1.0:
        raise ConfigError(f"strength must lie in (0, 1], got {strength}")
    ladder = inference_timesteps(schedule.num_steps, num_inference_steps)
    depth = max(1, round(strength * (len(ladder) - 1)))
    z = z0
    for k in range(depth):
        z = ddim_invert_step(z, int(ladder[k]), int(ladder[k + 1]), backend, cond, schedule)
    return z


# ---------------------------------------------------------------------------
# Pixel <-> latent codecs
# ---------------------------------------------------------------------------


class CodecPair(ABC):
    """Encoder/decoder pair between pixel frames and latent grids.

    ``reconstruction_tolerance`` is the max elementwise error a decode(encode)
    round trip may introduce on valid frames; implementations publish it and
    tests hold them to it.
    """

    reconstruction_tolerance: float = 0.0

    @abstractmethod
    def encode(self, pixels: np.ndarray) -> LatentGrid:
        """Map a ``[3, H, W]`` frame in [0, 1] to a clean latent (t = 0)."""

    @abstractmethod
    def decode(self, latent: LatentGrid) -> np.ndarray:
        """Map a latent back to a ``[3, H, W]`` frame clipped into [0, 1]."""


class IdentityCodec(CodecPair):
    """Latent space equals pixel space; decode clips back into [0, 1]."""

    reconstruction_tolerance = 0.0

    def encode(self, pixels: np.ndarray) -> LatentGrid:
        arr = np.asarray(pixels)
        if arr.ndim != 3:
            raise ShapeError(f"frame must be [3, H, W], got shape {arr.shape}")
        return LatentGrid(data=arr.copy(), timestep=0)

    def decode(self, latent: LatentGrid) -> np.ndarray:
        return np.clip(latent.data, 0.0, 1.0)


class CenteringCodec(CodecPair):
    """Affine codec mapping [0, 1] pixels onto [-1, 1] latents."""

    reconstruction_tolerance = 1e-6

    def encode(self, pixels: np.ndarray) -> LatentGrid:
        arr = np.asarray(pixels)
        if arr.ndim != 3:
            raise ShapeError(f"frame must be [3, H, W], got shape {arr.shape}")
        return LatentGrid(data=arr * 2.0 - 1.0, timestep=0)

    def decode(self, latent: LatentGrid) -> np.ndarray:
        return np.clip((latent.data + 1.0) / 2.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_schedule(schedule: DiffusionSchedule, path) -> None:
    """Write a schedule as a small JSON document (parameters, not arrays)."""
    doc = {
        "schema_version": 1,
        "kind": schedule.kind,
        "num_steps": schedule.num_steps,
        "beta_start": float(schedule.betas[0]),
        "beta_end": float(schedule.betas[-1]),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_schedule(path) -> DiffusionSchedule:
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind", "linear")
    if kind == "custom":
        raise DecodeError("custom schedules are not parameter-serializable")
    return build_schedule(doc["num_steps"], doc["beta_start"], doc["beta_end"], kind)


def save_latent(latent: LatentGrid, path) -> None:
    """Raw little-endian float32 payload preceded by a one-line JSON header."""
    header = json.dumps({"shape": list(latent.data.shape), "timestep": latent.timestep})
    payload = np.ascontiguousarray(latent.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(payload)


def load_latent(path) -> LatentGrid:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
        timestep = int(header["timestep"])
    except (ValueError, KeyError) as exc:
        raise DecodeError(f"malformed latent header in {path}: {exc}") from exc
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        raise DecodeError(
            f"latent payload in {path} has {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return LatentGrid(data=data, timestep=timestep)
