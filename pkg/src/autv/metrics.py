"""Distribution distances and mask-overlap scores for evaluating clips.

The core quantity is the Frechet distance between two Gaussians,

    d^2 = ||mu_a - mu_b||^2 + Tr(Sigma_a + Sigma_b - 2 (Sigma_a Sigma_b)^{1/2})

with the trace of the product square root computed from the product's
eigenvalues.  The product of two PSD matrices has real non-negative spectrum
in exact arithmetic; numerical residue shows up as small imaginary parts,
which are discarded below a relative magnitude of 1e-6 and are an error above
it.  Identical inputs short-circuit to exactly 0.0, so "distance of a thing
to itself" is not at the mercy of floating point.

The video distance follows the fixed-length random-clip protocol: clips of
``clip_len`` frames are drawn uniformly over (video, start offset) pairs with
a seeded generator, features are extracted per clip, and the Frechet distance
between the two feature clouds is reported per clip length.

Mask overlap (mIoU) averages per-instance intersection-over-union across
instances, then frames, then videos; a pair of masks that are both empty
counts as IoU 1 (agreeing that nothing is there is agreement).
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .chain import VideoSample
from .errors import AlignmentError, MetricError, ProtocolError, ShapeError
from .propagation import MaskVideo

__all__ = [
    "GaussianStats",
    "fit_gaussian",
    "psd_sqrt",
    "frechet_distance",
    "FeatureExtractor",
    "FrameFeatureExtractor",
    "ClipFeatureExtractor",
    "compute_fid",
    "fid_by_stratum",
    "ClipSample",
    "sample_clips",
    "compute_fvd",
    "compute_miou",
    "compute_miou_corpus",
    "MetricsReport",
]

logger = logging.getLogger(__name__)

_IMAG_RESIDUE_REL = 1e-6
_EIG_CLAMP = -1e-8


@dataclass
class GaussianStats:
    """Mean, covariance, and the sample count they were fitted from."""

    mean: np.ndarray
    cov: np.ndarray
    sample_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(
                f"mean shape {mean.shape} and cov shape {cov.shape} do not match"
            )
        cov = (cov + cov.T) / 2.0
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < _EIG_CLAMP:
            raise MetricError(
                f"covariance has eigenvalue {eigvals.min():.3e} below the clamp floor"
            )
        if eigvals.min() < 0.0:
            vals, vecs = np.linalg.eigh(cov)
            cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            cov = (cov + cov.T) / 2.0
        self.mean = mean
        self.cov = cov

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased sample covariance of row-stacked features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"features must be [n, d], got shape {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise MetricError(f"need at least 2 samples to fit a Gaussian, got {n}")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=mean, cov=cov, sample_count=n)


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (negatives clamped)."""
    mat = np.asarray(mat, dtype=np.float64)
    mat = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < _EIG_CLAMP:
        raise MetricError(f"matrix is not PSD: min eigenvalue {vals.min():.3e}")
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return (root + root.T) / 2.0


def _trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((Sigma_a Sigma_b)^{1/2}) from the product's eigenvalues."""
    try:
        eigvals = np.linalg.eigvals(cov_a @ cov_b)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigendecomposition failed: {exc}") from exc
    roots = np.sqrt(eigvals.astype(complex))
    total = roots.sum()
    scale = max(abs(total.real), 1e-12)
    if abs(total.imag) > _IMAG_RESIDUE_REL * scale:
        raise MetricError(
            f"matrix square root has imaginary residue {abs(total.imag):.3e} "
            f"(relative {abs(total.imag) / scale:.3e}); covariances are too ill-conditioned"
        )
    return float(total.real)


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians (see module docstring)."""
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov):
        return 0.0
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    tr_cross = _trace_sqrt_product(a.cov, b.cov)
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_cross
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# Desk-scale feature extractors
# ---------------------------------------------------------------------------


class FeatureExtractor(ABC):
    """Deterministic feature map with a descriptor naming what it computes."""

    descriptor: str

    @abstractmethod
    def extract(self, item) -> np.ndarray:
        """Map one frame / clip to a fixed-length feature vector."""

    def extract_batch(self, items) -> np.ndarray:
        return np.stack([self.extract(item) for item in items], axis=0)


def _block_mean(image: np.ndarray, grid: int) -> np.ndarray:
    # [C,H,W] -> [C,grid,grid] block means; trailing rows/cols are cropped
    c, h, w = image.shape
    bh, bw = max(1, h // grid), max(1, w // grid)
    cropped = image[:, : bh * grid, : bw * grid]
    return cropped.reshape(c, grid, bh, grid, bw).mean(axis=(2, 4))


class FrameFeatureExtractor(FeatureExtractor):
    """Downsampled pixels plus per-channel histograms of a single frame."""

    def __init__(self, grid: int = 4, hist_bins: int = 8):
        self.grid = grid
        self.hist_bins = hist_bins
        self.descriptor = f"desk-frame-v1(grid={grid},bins={hist_bins})"

    def extract(self, frame) -> np.ndarray:
        pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)
        blocks = _block_mean(pixels, self.grid).ravel()
        hists = [
            np.histogram(pixels[ch], bins=self.hist_bins, range=(0.0, 1.0))[0]
            / pixels[ch].size
            for ch in range(pixels.shape[0])
        ]
        return np.concatenate([blocks, *hists]).astype(np.float64)


class ClipFeatureExtractor(FeatureExtractor):
    """Motion-sensitive clip features: mean |frame difference| plus content.

    The first half of the vector is the blockwise mean absolute difference
    between adjacent frames -- temporal shuffling inflates it -- and the
    second half is the blockwise mean frame, so static content still counts.
    """

    def __init__(self, grid: int = 4):
        self.grid = grid
        self.descriptor = f"desk-clip-v1(grid={grid})"

    def extract(self, clip) -> np.ndarray:
        frames = clip if isinstance(clip, np.ndarray) else clip.as_array()
        if frames.ndim != 4:
            raise ShapeError(f"clip must be [T, C, H, W], got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise MetricError("clip features need at least 2 frames")
        diffs = np.abs(np.diff(frames, axis=0)).mean(axis=0)
        content = frames.mean(axis=0)
        return np.concatenate(
            [_block_mean(diffs, self.grid).ravel(), _block_mean(content, self.grid).ravel()]
        ).astype(np.float64)


# ---------------------------------------------------------------------------
# FID / FVD
# ---------------------------------------------------------------------------


def compute_fid(real_frames, gen_frames, extractor: FeatureExtractor, stratum: str = "") -> float:
    """Frechet distance between frame-feature clouds (one stratum at a time)."""
    real = extractor.extract_batch(list(real_frames))
    gen = extractor.extract_batch(list(gen_frames))
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise MetricError(
            f"FID{' for ' + stratum if stratum else ''} needs >= 2 frames per side"
        )
    return frechet_distance(fit_gaussian(real), fit_gaussian(gen))


def fid_by_stratum(real_by_stratum: dict, gen_by_stratum: dict, extractor) -> dict:
    """FID per difficulty stratum; strata evaluate independently."""
    out = {}
    for stratum in sorted(set(real_by_stratum) | set(gen_by_stratum)):
        real = real_by_stratum.get(stratum, [])
        gen = gen_by_stratum.get(stratum, [])
        if len(real) < 2 or len(gen) < 2:
            logger.warning("stratum %r has too few frames; skipping", stratum)
            out[stratum] = None
            continue
        out[stratum] = compute_fid(real, gen, extractor, stratum=stratum)
    return out


@dataclass
class ClipSample:
    """A fixed-length clip plus where it was cut from."""

    video_index: int
    start: int
    frames: np.ndarray


def sample_clips(videos: list, clip_len: int, count: int, seed: int = 0) -> list:
    """Draw ``count`` clips uniformly over (eligible video, start offset).

    Videos shorter than ``clip_len`` are skipped; if none remain the protocol
    cannot be satisfied and that is an error.  The video choice is uniform
    over eligible videos and the offset uniform over valid starts, both from
    one seeded generator, so a draw is reproducible from (videos, seed).
    """
    if clip_len < 1:
        raise ProtocolError(f"clip_len must be >= 1, got {clip_len}")
    if count < 1:
        raise ProtocolError(f"count must be >= 1, got {count}")
    arrays = [v.as_array() if isinstance(v, VideoSample) else np.asarray(v) for v in videos]
    eligible = [i for i, arr in enumerate(arrays) if arr.shape[0] >= clip_len]
    if not eligible:
        raise ProtocolError(
            f"no video has >= {clip_len} frames; the clip protocol cannot run"
        )
    if len(eligible) < len(arrays):
        logger.warning(
            "%d of %d videos are shorter than clip_len=%d and were skipped",
            len(arrays) - len(eligible), len(arrays), clip_len,
        )
    rng = np.random.default_rng((seed, clip_len))
    clips = []
    for _ in range(count):
        vid = eligible[int(rng.integers(0, len(eligible)))]
        max_start = arrays[vid].shape[0] - clip_len
        start = int(rng.integers(0, max_start + 1))
        clips.append(
            ClipSample(video_index=vid, start=start, frames=arrays[vid][start : start + clip_len])
        )
    return clips


def compute_fvd(
    real_videos: list,
    gen_videos: list,
    extractor: Optional[ClipFeatureExtractor] = None,
    clip_len: int = 8,
    count: int = 128,
    seed: int = 0,
) -> float:
    """Frechet distance between clip-feature clouds under the clip protocol.

    Both sides are sampled with the same seed, so identical video lists give
    identical clips and the distance is exactly 0.
    """
    extractor = extractor or ClipFeatureExtractor()
    real_clips = sample_clips(real_videos, clip_len, count, seed)
    gen_clips = sample_clips(gen_videos, clip_len, count, seed)
    real_feats = extractor.extract_batch([c.frames for c in real_clips])
    gen_feats = extractor.extract_batch([c.frames for c in gen_clips])
    return frechet_distance(fit_gaussian(real_feats), fit_gaussian(gen_feats))


# ---------------------------------------------------------------------------
# mIoU
# ---------------------------------------------------------------------------


def _instance_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = int(np.logical_and(pred, gt).sum())
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0  # both sides agree the instance is absent
    return inter / union


def compute_miou(pred: MaskVideo, gt: MaskVideo, frame_indices=(2, 6)) -> tuple:
    """Mean and std of per-instance IoU over the audited frames of one video.

    Instances are matched by position and must carry identical labels;
    ``frame_indices`` selects which frames are audited (defaults to the third
    and seventh).
    """
    if pred.frame_shape != gt.frame_shape:
        raise AlignmentError(
            f"mask shapes differ: {pred.frame_shape} vs {gt.frame_shape}"
        )
    if pred.labels() != gt.labels():
        raise AlignmentError(
            f"instance labels differ: {pred.labels()} vs {gt.labels()}"
        )
    if pred.num_frames != gt.num_frames:
        raise AlignmentError(
            f"frame counts differ: {pred.num_frames} vs {gt.num_frames}"
        )
    scores = []
    for f in frame_indices:
        if not 0 <= f < pred.num_frames:
            raise AlignmentError(
                f"audit frame {f} outside video of {pred.num_frames} frames"
            )
        for k in range(len(pred.labels())):
            scores.append(
                _instance_iou(pred.per_frame[f].instances[k][1], gt.per_frame[f].instances[k][1])
            )
    if not scores:
        raise MetricError("no instances to score")
    arr = np.asarray(scores, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def compute_miou_corpus(pairs: list, frame_indices=(2, 6)) -> tuple:
    """Aggregate (mean, std) of per-video mIoU means across many videos."""
    if not pairs:
        raise MetricError("empty corpus")
    means = [compute_miou(pred, gt, frame_indices)[0] for pred, gt in pairs]
    arr = np.asarray(means, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Evaluation results plus the provenance needed to reproduce them."""

    fid: dict = field(default_factory=dict)
    fvd: dict = field(default_factory=dict)
    miou_mean: Optional[float] = None
    miou_std: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fid": self.fid,
            "fvd": {str(k): v for k, v in self.fvd.items()},
            "miou_mean": self.miou_mean,
            "miou_std": self.miou_std,
            "metadata": self.metadata,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "key", "value"])
            for key, value in sorted(self.fid.items()):
                writer.writerow(["fid", key, value])
            for key, value in sorted(self.fvd.items()):
                writer.writerow(["fvd", key, value])
            if self.miou_mean is not None:
                writer.writerow(["miou", "mean", self.miou_mean])
                writer.writerow(["miou", "std", self.miou_std])
