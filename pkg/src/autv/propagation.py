"""Propagating first-frame object masks through a generated clip.

The reference backend is deliberately simple: per-instance normalized
cross-correlation template matching inside a small search window, followed by
an intensity-threshold refinement of the matched region.  When the best
correlation falls below the confidence floor the instance vanishes -- its
mask goes empty from that frame onward; instances are never deleted from the
list and never appear out of nowhere.

Frame 0 of the output is always the input mask set, byte for byte, no matter
what a backend returns.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .chain import VideoSample
from .errors import AlignmentError, ContractViolationError, ShapeError
from .first_frame import MaskSet

__all__ = [
    "MaskVideo",
    "SegmenterBackend",
    "NccPropagator",
    "BoxPromptSegmenter",
    "propagate_masks",
]

logger = logging.getLogger(__name__)


@dataclass
class MaskVideo:
    """Per-frame mask sets with a stable instance list.

    Every frame carries the same instances in the same order with the same
    labels; a vanished instance keeps its slot with an all-zero mask.
    """

    per_frame: list

    def __post_init__(self):
        if not self.per_frame:
            raise ShapeError("a mask video needs at least one frame")
        first = self.per_frame[0]
        for i, ms in enumerate(self.per_frame):
            if ms.frame_shape != first.frame_shape:
                raise ShapeError(f"frame {i} mask shape {ms.frame_shape} != {first.frame_shape}")
            if ms.labels() != first.labels():
                raise ContractViolationError(
                    f"frame {i} instance labels {ms.labels()} != frame 0 {first.labels()}"
                )

    @property
    def num_frames(self) -> int:
        return len(self.per_frame)

    @property
    def frame_shape(self) -> tuple:
        return self.per_frame[0].frame_shape

    def labels(self) -> list:
        return self.per_frame[0].labels()

    def instance_masks(self, index: int) -> list:
        """Masks of instance ``index`` across all frames."""
        return [ms.instances[index][1] for ms in self.per_frame]


class SegmenterBackend(ABC):
    """Mask-propagation interface; implementations must be pure functions."""

    @abstractmethod
    def propagate(self, video: VideoSample, masks0: MaskSet) -> MaskVideo:
        """Carry ``masks0`` through every frame of ``video``."""


def _luma(pixels: np.ndarray) -> np.ndarray:
    return pixels.mean(axis=0)


def _shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    ys = ys + dy
    xs = xs + dx
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out[ys[keep], xs[keep]] = True
    return out


class NccPropagator(SegmenterBackend):
    """Template matching with normalized cross-correlation (see module docs).

    Defaults are tuned for 32x32 desk frames: +-8 px search, 0.5 confidence
    floor.  Matching uses only the pixels under the instance mask; a constant
    (zero-variance) template or window has undefined correlation and counts
    as confidence 0.
    """

    def __init__(
        self,
        search_window: int = 8,
        confidence_floor: float = 0.5,
        refine: bool = True,
        min_refine_iou: float = 0.5,
    ):
        self.search_window = search_window
        self.confidence_floor = confidence_floor
        self.refine = refine
        self.min_refine_iou = min_refine_iou

    def _match(self, prev_luma, cur_luma, mask):
        """Best integer offset and its correlation for one instance."""
        ys, xs = np.nonzero(mask)
        template = prev_luma[ys, xs]
        t_std = template.std()
        h, w = prev_luma.shape
        best = (0.0, -np.inf, 0, 0)  # (ncc, -|offset|, dy, dx) for tie-breaking
        found = False
        win = self.search_window
        min_pixels = max(4, int(0.6 * ys.size))
        for dy in range(-win, win + 1):
            for dx in range(-win, win + 1):
                ny = ys + dy
                nx = xs + dx
                valid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
                if int(valid.sum()) < min_pixels:
                    continue
                cand = cur_luma[ny[valid], nx[valid]]
                ref = template[valid]
                if t_std == 0.0 or ref.std() == 0.0 or cand.std() == 0.0:
                    continue
                ncc = float(np.corrcoef(ref, cand)[0, 1])
                key = (ncc, -(abs(dy) + abs(dx)), -dy, -dx)
                if not found or key > best:
                    best = key
                    found = True
                    best_off = (dy, dx)
        if not found:
            return 0.0, (0, 0)
        return best[0], best_off

    def _refine(self, cur_luma, shifted):
        """Re-threshold intensities inside the matched window, conservatively."""
        window = ndimage.binary_dilation(shifted, iterations=1)
        ring = window & ~shifted
        if not ring.any() or not shifted.any():
            return shifted
        fg_mean = cur_luma[shifted].mean()
        bg_mean = cur_luma[ring].mean()
        if abs(fg_mean - bg_mean) < 1e-6:
            return shifted
        candidate = window & (
            np.abs(cur_luma - fg_mean) < np.abs(cur_luma - bg_mean)
        )
        inter = int((candidate & shifted).sum())
        union = int((candidate | shifted).sum())
        if union == 0 or inter / union < self.min_refine_iou:
            return shifted
        return candidate

    def propagate(self, video: VideoSample, masks0: MaskSet) -> MaskVideo:
        labels = masks0.labels()
        current = [mask.copy() for _, mask in masks0.instances]
        per_frame = [MaskSet(instances=list(zip(labels, [m.copy() for m in current])),
                             frame_shape=masks0.frame_shape)]
        for i in range(1, len(video.frames)):
            prev_luma = _luma(video.frames[i - 1].pixels)
            cur_luma = _luma(video.frames[i].pixels)
            next_masks = []
            for k, mask in enumerate(current):
                if not mask.any():
                    next_masks.append(mask)  # vanished stays vanished
                    continue
                conf, (dy, dx) = self._match(prev_luma, cur_luma, mask)
                if conf < self.confidence_floor:
                    logger.info(
                        "instance %r vanished at frame %d (confidence %.3f)",
                        labels[k], i, conf,
                    )
                    next_masks.append(np.zeros_like(mask))
                    continue
                shifted = _shift_mask(mask, dy, dx)
                if self.refine and shifted.any():
                    shifted = self._refine(cur_luma, shifted)
                next_masks.append(shifted)
            current = next_masks
            per_frame.append(
                MaskSet(instances=list(zip(labels, [m.copy() for m in current])),
                        frame_shape=masks0.frame_shape)
            )
        return MaskVideo(per_frame=per_frame)


class BoxPromptSegmenter(SegmenterBackend):
    """Comparison adapter that tracks bounding boxes instead of silhouettes.

    Output masks are filled boxes, so anything inside an instance's bounding
    box gets claimed -- the blunt behaviour this adapter exists to expose.
    """

    def __init__(self, search_window: int = 8, confidence_floor: float = 0.5):
        self._ncc = NccPropagator(
            search_window=search_window, confidence_floor=confidence_floor, refine=False
        )

    @staticmethod
    def _boxify(mask: np.ndarray) -> np.ndarray:
        out = np.zeros_like(mask)
        if mask.any():
            ys, xs = np.nonzero(mask)
            out[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1] = True
        return out

    def propagate(self, video: VideoSample, masks0: MaskSet) -> MaskVideo:
        boxed0 = MaskSet(
            instances=[(lbl, self._boxify(m)) for lbl, m in masks0.instances],
            frame_shape=masks0.frame_shape,
        )
        tracked = self._ncc.propagate(video, boxed0)
        per_frame = [
            MaskSet(
                instances=[(lbl, self._boxify(m)) for lbl, m in ms.instances],
                frame_shape=ms.frame_shape,
            )
            for ms in tracked.per_frame
        ]
        return MaskVideo(per_frame=per_frame)


def propagate_masks(video: VideoSample, masks0: MaskSet, backend: SegmenterBackend) -> MaskVideo:
    """Run a propagation backend and hold it to the mask-video contract.

    Checks frame count, shapes, and label stability, rejects instances born
    after frame 0, and pins frame 0 to ``masks0`` regardless of backend drift.
    """
    if masks0.frame_shape != video.frames[0].hw:
        raise AlignmentError(
            f"mask shape {masks0.frame_shape} != frame shape {video.frames[0].hw}"
        )
    masks0.validate_nonempty()
    result = backend.propagate(video, masks0)
    if result.num_frames != len(video.frames):
        raise ContractViolationError(
            f"backend returned {result.num_frames} mask frames for "
            f"{len(video.frames)} video frames"
        )
    if result.frame_shape != masks0.frame_shape:
        raise ContractViolationError(
            f"backend changed mask shape to {result.frame_shape}"
        )
    if result.labels() != masks0.labels():
        raise ContractViolationError(
            f"backend changed instance labels to {result.labels()}"
        )
    # pin frame 0 exactly
    per_frame = list(result.per_frame)
    per_frame[0] = MaskSet(
        instances=[(lbl, m.copy()) for lbl, m in masks0.instances],
        frame_shape=masks0.frame_shape,
    )
    return MaskVideo(per_frame=per_frame)
