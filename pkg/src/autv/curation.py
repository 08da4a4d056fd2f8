"""Motion and visual quality filters for generated clips.

Each filter inspects one video and returns a verdict whose ``reasons`` list
names every rule the clip broke; a clip is accepted exactly when no rule
fired.  The rules:

* ``static``        -- too many adjacent frame pairs are near-identical;
* ``jitter``        -- the global-shift estimate flips sign back and forth
                       (phase-correlation shifts, sign-alternation rate);
* ``special_motion``-- an instance's mask area jumps abruptly between frames
                       (a proxy for teleporting/scale-popping effects);
* ``scene_change``  -- an adjacent-frame color-histogram distance spikes far
                       above the clip's own median;
* ``watermark_suspect`` -- a temporally constant high-frequency region sits
                       on top of otherwise moving content;
* ``low_aesthetic`` -- contrast or saturation below hard floors.

Every knob lives in one :class:`CurationThresholds` block, and
``loosened(factor)`` moves *all* of them in their permissive direction, so
"loosening never rejects a previously accepted clip" is a testable property.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .chain import VideoSample
from .errors import AlignmentError, ConfigError
from .propagation import MaskVideo

__all__ = [
    "CurationThresholds",
    "MotionStats",
    "VisualStats",
    "FilterVerdict",
    "estimate_global_shift",
    "motion_filter",
    "visual_filter",
    "combine_verdicts",
    "curate_videos",
    "curate_dataset",
]

logger = logging.getLogger(__name__)

# the special-motion rule is a stand-in for real effect detection; reports say so
SPECIAL_MOTION_PROXY_NOTE = "special_motion is a mask-area-change proxy"


@dataclass(frozen=True)
class CurationThresholds:
    """All filter thresholds in one place. See ``loosened`` for directions."""

    static_eps: float = 0.01
    static_score_max: float = 0.5
    jitter_alternation_max: float = 0.5
    jitter_min_shift: float = 1.0
    special_motion_ratio_max: float = 0.5
    special_motion_min_area: int = 8
    scene_change_factor: float = 5.0
    scene_change_min_dist: float = 0.05
    watermark_var_eps: float = 0.02
    watermark_grad_floor: float = 0.10
    watermark_frac_max: float = 0.01
    contrast_min: float = 0.05
    saturation_min: float = 0.02

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"threshold {name} must be >= 0, got {value}")

    def loosened(self, factor: float) -> "CurationThresholds":
        """Every threshold moved in its permissive direction by ``factor`` >= 1."""
        if factor < 1.0:
            raise ConfigError(f"loosening factor must be >= 1, got {factor}")
        return replace(
            self,
            static_eps=self.static_eps / factor,
            static_score_max=min(1.0, self.static_score_max * factor),
            jitter_alternation_max=self.jitter_alternation_max * factor,
            jitter_min_shift=self.jitter_min_shift * factor,
            special_motion_ratio_max=self.special_motion_ratio_max * factor,
            special_motion_min_area=int(round(self.special_motion_min_area * factor)),
            scene_change_factor=self.scene_change_factor * factor,
            scene_change_min_dist=self.scene_change_min_dist * factor,
            watermark_var_eps=self.watermark_var_eps / factor,
            watermark_grad_floor=self.watermark_grad_floor * factor,
            watermark_frac_max=self.watermark_frac_max * factor,
            contrast_min=self.contrast_min / factor,
            saturation_min=self.saturation_min / factor,
        )


@dataclass
class MotionStats:
    """Per-video motion descriptors the motion filter decides on."""

    static_score: float
    jitter_score: float
    sign_alternation_rate: float
    mean_shift_magnitude: float
    max_area_change: float


@dataclass
class VisualStats:
    """Per-video appearance descriptors the visual filter decides on."""

    max_histogram_distance: float
    median_histogram_distance: float
    watermark_fraction: float
    contrast: float
    saturation: float


@dataclass
class FilterVerdict:
    """Outcome of filtering one clip; accepted iff no reasons."""

    video_id: str
    accepted: bool
    reasons: list
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.accepted != (len(self.reasons) == 0):
            raise ConfigError("verdict invariant broken: accepted != (reasons empty)")


def _luma_stack(video: VideoSample) -> np.ndarray:
    return np.stack([f.pixels.mean(axis=0) for f in video.frames], axis=0)


def estimate_global_shift(a: np.ndarray, b: np.ndarray) -> tuple:
    """Integer (dy, dx) such that rolling ``a`` by it best matches ``b``.

    Classic phase correlation: the normalized cross-power spectrum of two
    circularly shifted copies is a pure phase ramp whose inverse transform
    peaks at the shift.  Constant inputs carry no phase information and
    return (0, 0).
    """
    a = a - a.mean()
    b = b - b.mean()
    if not a.any() or not b.any():
        return (0, 0)
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    cross = fb * np.conj(fa)
    denom = np.abs(cross)
    cross = np.where(denom > 1e-12, cross / np.maximum(denom, 1e-12), 0.0)
    corr = np.fft.ifft2(cross).real
    peak = np.unravel_index(int(np.argmax(corr)), corr.shape)
    h, w = a.shape
    dy = peak[0] if peak[0] <= h // 2 else peak[0] - h
    dx = peak[1] if peak[1] <= w // 2 else peak[1] - w
    return (int(dy), int(dx))


def _pair_distances(video: VideoSample) -> np.ndarray:
    norm = np.sqrt(video.frames[0].pixels.size)
    return np.array(
        [
            float(np.linalg.norm(b.pixels - a.pixels)) / norm
            for a, b in zip(video.frames[:-1], video.frames[1:])
        ]
    )


def _motion_stats(video: VideoSample, masks: Optional[MaskVideo], thr: CurationThresholds):
    dists = _pair_distances(video)
    static_score = float(np.mean(dists < thr.static_eps)) if dists.size else 0.0

    lumas = _luma_stack(video)
    shifts = np.array(
        [estimate_global_shift(lumas[i], lumas[i + 1]) for i in range(len(lumas) - 1)],
        dtype=np.float64,
    ).reshape(-1, 2)
    if shifts.shape[0] >= 2:
        deltas = np.diff(shifts, axis=0)
        jitter_score = float(np.mean(np.linalg.norm(deltas, axis=1)))
    else:
        jitter_score = 0.0
    mean_shift = float(np.mean(np.linalg.norm(shifts, axis=1))) if shifts.size else 0.0

    # per-axis sign flips between consecutive shift estimates
    flips = comparable = 0
    for axis in range(2):
        s = shifts[:, axis] if shifts.size else np.zeros(0)
        for t in range(len(s) - 1):
            if abs(s[t]) >= thr.jitter_min_shift and abs(s[t + 1]) >= thr.jitter_min_shift:
                comparable += 1
                if s[t] * s[t + 1] < 0:
                    flips += 1
    alternation = flips / comparable if comparable else 0.0

    max_area_change = 0.0
    if masks is not None:
        for k in range(len(masks.labels())):
            areas = [int(m.sum()) for m in masks.instance_masks(k)]
            for a0, a1 in zip(areas[:-1], areas[1:]):
                if a0 >= thr.special_motion_min_area and a1 >= thr.special_motion_min_area:
                    max_area_change = max(max_area_change, abs(a1 / a0 - 1.0))
    return MotionStats(
        static_score=static_score,
        jitter_score=jitter_score,
        sign_alternation_rate=alternation,
        mean_shift_magnitude=mean_shift,
        max_area_change=max_area_change,
    )


def motion_filter(
    video: VideoSample,
    masks: Optional[MaskVideo],
    thresholds: Optional[CurationThresholds] = None,
    video_id: str = "",
) -> FilterVerdict:
    """Flag static clips, jittery camera work, and abrupt mask-area jumps."""
    thr = thresholds or CurationThresholds()
    if masks is not None and masks.num_frames != len(video.frames):
        raise AlignmentError(
            f"mask video has {masks.num_frames} frames, video has {len(video.frames)}"
        )
    stats = _motion_stats(video, masks, thr)
    reasons = []
    if stats.static_score > thr.static_score_max:
        reasons.append("static")
    if stats.sign_alternation_rate > thr.jitter_alternation_max:
        reasons.append("jitter")
    if stats.max_area_change > thr.special_motion_ratio_max:
        reasons.append("special_motion")
    return FilterVerdict(
        video_id=video_id,
        accepted=not reasons,
        reasons=reasons,
        stats={"motion": asdict(stats), "notes": [SPECIAL_MOTION_PROXY_NOTE]},
    )


def _histogram(frame_pixels: np.ndarray, bins: int = 16) -> np.ndarray:
    parts = []
    for ch in range(frame_pixels.shape[0]):
        h, _ = np.histogram(frame_pixels[ch], bins=bins, range=(0.0, 1.0))
        parts.append(h / max(1, frame_pixels[ch].size))
    return np.concatenate(parts)


def _chi2(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.sum((p - q) ** 2 / (p + q + 1e-12)))


def _visual_stats(video: VideoSample, thr: CurationThresholds):
    hists = [_histogram(f.pixels) for f in video.frames]
    dists = np.array([_chi2(a, b) for a, b in zip(hists[:-1], hists[1:])])
    max_d = float(dists.max()) if dists.size else 0.0
    med_d = float(np.median(dists)) if dists.size else 0.0

    lumas = _luma_stack(video)
    tstd = lumas.std(axis=0)
    gy, gx = np.gradient(lumas, axis=(1, 2))
    grad = np.sqrt(gy**2 + gx**2).mean(axis=0)
    suspect = (tstd < thr.watermark_var_eps) & (grad > thr.watermark_grad_floor)
    watermark_fraction = float(suspect.mean())

    contrast = float(np.mean([l.std() for l in lumas]))
    sats = [
        float(np.mean(f.pixels.max(axis=0) - f.pixels.min(axis=0))) for f in video.frames
    ]
    saturation = float(np.mean(sats))
    return VisualStats(
        max_histogram_distance=max_d,
        median_histogram_distance=med_d,
        watermark_fraction=watermark_fraction,
        contrast=contrast,
        saturation=saturation,
    ), dists


def visual_filter(
    video: VideoSample,
    thresholds: Optional[CurationThresholds] = None,
    video_id: str = "",
) -> FilterVerdict:
    """Flag scene cuts, watermark-like overlays, and flat-looking clips."""
    thr = thresholds or CurationThresholds()
    stats, dists = _visual_stats(video, thr)
    reasons = []
    spike = dists[
        (dists > thr.scene_change_factor * stats.median_histogram_distance)
        & (dists > thr.scene_change_min_dist)
    ]
    if spike.size:
        reasons.append("scene_change")
    # a watermark is only meaningful against moving content; fully static
    # clips are the static rule's business
    pair_d = _pair_distances(video)
    static_score = float(np.mean(pair_d < thr.static_eps)) if pair_d.size else 0.0
    if static_score <= thr.static_score_max and stats.watermark_fraction > thr.watermark_frac_max:
        reasons.append("watermark_suspect")
    if stats.contrast < thr.contrast_min or stats.saturation < thr.saturation_min:
        reasons.append("low_aesthetic")
    return FilterVerdict(
        video_id=video_id,
        accepted=not reasons,
        reasons=reasons,
        stats={"visual": asdict(stats)},
    )


def combine_verdicts(motion: FilterVerdict, visual: FilterVerdict) -> FilterVerdict:
    """Union of reasons; stats merged."""
    reasons = list(motion.reasons) + [r for r in visual.reasons if r not in motion.reasons]
    stats = dict(motion.stats)
    stats.update(visual.stats)
    return FilterVerdict(
        video_id=motion.video_id or visual.video_id,
        accepted=not reasons,
        reasons=reasons,
        stats=stats,
    )


def curate_videos(items: list, thresholds: Optional[CurationThresholds] = None) -> list:
    """Filter in-memory ``(video_id, video, masks_or_None)`` triples."""
    thr = thresholds or CurationThresholds()
    verdicts = []
    for video_id, video, masks in items:
        m = motion_filter(video, masks, thr, video_id=video_id)
        v = visual_filter(video, thr, video_id=video_id)
        verdicts.append(combine_verdicts(m, v))
    return verdicts


def curate_dataset(
    manifest_path,
    thresholds: Optional[CurationThresholds] = None,
    out_dir=None,
) -> dict:
    """Filter every bundle in a manifest; write report + accepted manifest.

    Returns a summary dict with per-video verdicts and the aggregate
    acceptance rate (None for an empty manifest).  Output files land next to
    the manifest unless ``out_dir`` says otherwise.
    """
    from . import dataset_io  # io layer; imported here to keep layering one-way

    thr = thresholds or CurationThresholds()
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir) if out_dir is not None else manifest_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = dataset_io.load_manifest(manifest_path)
    verdicts = []
    accepted_entries = []
    for entry in entries:
        if entry.get("broken"):
            verdicts.append(
                FilterVerdict(
                    video_id=entry["video_id"],
                    accepted=False,
                    reasons=["broken_bundle"],
                    stats={},
                )
            )
            continue
        video, masks, *_ = dataset_io.read_bundle(manifest_path.parent, entry)
        m = motion_filter(video, masks, thr, video_id=entry["video_id"])
        v = visual_filter(video, thr, video_id=entry["video_id"])
        verdict = combine_verdicts(m, v)
        verdicts.append(verdict)
        if verdict.accepted:
            accepted_entries.append(entry)
    report_path = out_dir / "curation_report.jsonl"
    with open(report_path, "w") as fh:
        for verdict in verdicts:
            fh.write(json.dumps(asdict(verdict), sort_keys=True) + "\n")
    accepted_path = out_dir / "manifest_accepted.jsonl"
    dataset_io.write_manifest(accepted_entries, accepted_path)
    rate = (len(accepted_entries) / len(verdicts)) if verdicts else None
    summary = {
        "num_videos": len(verdicts),
        "num_accepted": len(accepted_entries),
        "acceptance_rate": rate,
        "thresholds": asdict(thr),
        "notes": [SPECIAL_MOTION_PROXY_NOTE],
        "report": str(report_path),
        "accepted_manifest": str(accepted_path),
    }
    (out_dir / "curation_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary
