"""On-disk formats: RLE masks, PNG frames, dataset bundles, and manifests.

Run-length encoding is row-major over the flattened mask and alternates
background/foreground run lengths, always starting with background, so an
all-background mask of n pixels encodes as ``[n]`` and an all-foreground one
as ``[0, n]``.  Only the leading run may be zero.

A dataset entry is a bundle directory:

    <video_id>/
        frames/frame_0000.png ...   8-bit RGB, one per frame
        frames/video.json           fps, frame count, seed, chain settings
        masks.json                  per-frame per-instance RLE
        annotation.json             structured attribute record
        caption.json                text, word count, source
        verdict.json                curation outcome

Bundles are written to a temporary sibling directory and renamed into place,
so a crash mid-write never leaves a half-bundle at the final path.  The
manifest is JSONL, one entry per bundle with refs relative to the manifest's
directory; loading checks each ref and flags entries whose files are missing
instead of failing the whole read.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .annotation import Caption, validate_annotation
from .chain import VideoSample, export_video, load_video
from .errors import BundleError, DecodeError, ShapeError, ValidationError
from .first_frame import MaskSet
from .propagation import MaskVideo

__all__ = [
    "encode_rle",
    "decode_rle",
    "mask_video_to_json",
    "mask_video_from_json",
    "write_mask_video",
    "read_mask_video",
    "write_mask_video_png",
    "read_mask_video_png",
    "write_frame_png",
    "read_frame_png",
    "Bundle",
    "write_bundle",
    "read_bundle",
    "write_manifest",
    "load_manifest",
    "MANIFEST_SCHEMA_VERSION",
]

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

_MANIFEST_KEYS = (
    "video_id",
    "frame_dir",
    "mask_ref",
    "annotation_ref",
    "caption_ref",
    "verdict_ref",
    "difficulty",
)


# ---------------------------------------------------------------------------
# Run-length encoding
# ---------------------------------------------------------------------------


def encode_rle(mask: np.ndarray) -> list:
    """Row-major alternating run lengths, background first."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got shape {mask.shape}")
    flat = mask.astype(bool).ravel()
    if flat.size == 0:
        raise ShapeError("cannot encode an empty mask")
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate([[0], boundaries, [flat.size]])).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def decode_rle(runs: list, shape: tuple) -> np.ndarray:
    """Inverse of :func:`encode_rle`; validates totals and run positivity."""
    h, w = shape
    runs = [int(r) for r in runs]
    if not runs:
        raise DecodeError("empty run list")
    if any(r < 0 for r in runs):
        raise DecodeError(f"negative run length in {runs}")
    if any(r == 0 for r in runs[1:]):
        raise DecodeError("only the leading run may be zero")
    if sum(runs) != h * w:
        raise DecodeError(f"runs sum to {sum(runs)}, expected {h * w} for shape {shape}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    for i, run in enumerate(runs):
        if i % 2 == 1:
            flat[pos : pos + run] = True
        pos += run
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# Mask-video serialization
# ---------------------------------------------------------------------------


def mask_video_to_json(mv: MaskVideo) -> dict:
    h, w = mv.frame_shape
    return {
        "format": "rle_json",
        "shape": [int(h), int(w)],
        "labels": list(mv.labels()),
        "frames": [
            [encode_rle(mask) for _, mask in ms.instances] for ms in mv.per_frame
        ],
    }


def mask_video_from_json(doc: dict) -> MaskVideo:
    if doc.get("format") != "rle_json":
        raise DecodeError(f"unsupported mask format {doc.get('format')!r}")
    shape = tuple(doc["shape"])
    labels = doc["labels"]
    per_frame = []
    for frame_runs in doc["frames"]:
        if len(frame_runs) != len(labels):
            raise DecodeError(
                f"frame has {len(frame_runs)} instances, labels list has {len(labels)}"
            )
        instances = [
            (label, decode_rle(runs, shape)) for label, runs in zip(labels, frame_runs)
        ]
        per_frame.append(MaskSet(instances=instances, frame_shape=shape))
    return MaskVideo(per_frame=per_frame)


def write_mask_video(mv: MaskVideo, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(mask_video_to_json(mv), sort_keys=True) + "\n")
    return path


def read_mask_video(path) -> MaskVideo:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DecodeError(f"unreadable mask file {path}: {exc}") from exc
    return mask_video_from_json(doc)


def write_mask_video_png(mv: MaskVideo, out_dir) -> Path:
    """Indexed-PNG export: pixel value = instance index + 1, 0 = background.

    A pixel can hold one index, so overlapping instances cannot be
    represented and are refused rather than silently flattened.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for f, ms in enumerate(mv.per_frame):
        index = np.zeros(ms.frame_shape, dtype=np.uint8)
        claimed = np.zeros(ms.frame_shape, dtype=bool)
        for k, (label, mask) in enumerate(ms.instances):
            overlap = claimed & mask
            if overlap.any():
                raise BundleError(
                    f"frame {f}: instance {label!r} overlaps an earlier instance "
                    f"on {int(overlap.sum())} pixels; indexed PNG cannot store that"
                )
            index[mask] = k + 1
            claimed |= mask
        Image.fromarray(index, mode="L").save(out_dir / f"mask_{f:04d}.png")
    meta = {"format": "indexed_png", "labels": list(mv.labels())}
    (out_dir / "masks_meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return out_dir


def read_mask_video_png(in_dir) -> MaskVideo:
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / "masks_meta.json").read_text())
    if meta.get("format") != "indexed_png":
        raise DecodeError(f"unsupported mask format {meta.get('format')!r}")
    labels = meta["labels"]
    per_frame = []
    for path in sorted(in_dir.glob("mask_*.png")):
        index = np.asarray(Image.open(path))
        instances = [(label, index == k + 1) for k, label in enumerate(labels)]
        per_frame.append(MaskSet(instances=instances, frame_shape=index.shape))
    if not per_frame:
        raise DecodeError(f"no mask frames under {in_dir}")
    return MaskVideo(per_frame=per_frame)


# ---------------------------------------------------------------------------
# Frame PNGs
# ---------------------------------------------------------------------------


def write_frame_png(pixels: np.ndarray, path) -> Path:
    """Store a [3, H, W] float frame as 8-bit RGB; exact for quantized frames."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W] pixels, got shape {pixels.shape}")
    arr = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    return Path(path)


def read_frame_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DecodeError(f"unreadable frame {path}: {exc}") from exc
    return (arr / 255.0).transpose(2, 0, 1)


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


class Bundle(NamedTuple):
    video: VideoSample
    masks: MaskVideo
    annotation: dict
    caption: dict
    verdict: dict


def _caption_doc(caption) -> dict:
    if isinstance(caption, Caption):
        return {
            "text": caption.text,
            "word_count": caption.word_count,
            "source": caption.source,
        }
    return dict(caption)


def write_bundle(
    root,
    video_id: str,
    video: VideoSample,
    masks: MaskVideo,
    annotation: dict,
    caption,
    verdict: dict,
    difficulty: str,
    chain_cfg=None,
    overwrite: bool = False,
) -> dict:
    """Write one bundle atomically; returns its manifest entry.

    The bundle is assembled under a temporary directory next to the target
    and renamed into place in one step.  An existing bundle at the target is
    an error unless ``overwrite`` is set.
    """
    if not video_id or "/" in video_id or video_id.startswith("."):
        raise ValidationError(f"bad video_id {video_id!r}")
    validate_annotation(annotation)
    if video.num_generated + 1 != masks.num_frames:
        raise BundleError(
            f"{video.num_generated + 1} frames but {masks.num_frames} mask frames"
        )
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    final = root / video_id
    if final.exists():
        if not overwrite:
            raise BundleError(f"bundle already exists at {final}")
        shutil.rmtree(final)
    tmp = Path(tempfile.mkdtemp(prefix=f".{video_id}.tmp-", dir=root))
    try:
        export_video(video, tmp / "frames", cfg=chain_cfg)
        write_mask_video(masks, tmp / "masks.json")
        (tmp / "annotation.json").write_text(
            json.dumps(annotation, indent=2, sort_keys=True) + "\n"
        )
        (tmp / "caption.json").write_text(
            json.dumps(_caption_doc(caption), indent=2, sort_keys=True) + "\n"
        )
        (tmp / "verdict.json").write_text(
            json.dumps(verdict, indent=2, sort_keys=True) + "\n"
        )
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "video_id": video_id,
        "frame_dir": f"{video_id}/frames",
        "mask_ref": f"{video_id}/masks.json",
        "annotation_ref": f"{video_id}/annotation.json",
        "caption_ref": f"{video_id}/caption.json",
        "verdict_ref": f"{video_id}/verdict.json",
        "difficulty": difficulty,
    }


def read_bundle(base_dir, entry: dict) -> Bundle:
    base_dir = Path(base_dir)
    try:
        video = load_video(base_dir / entry["frame_dir"])
        masks = read_mask_video(base_dir / entry["mask_ref"])
        annotation = json.loads((base_dir / entry["annotation_ref"]).read_text())
        caption = json.loads((base_dir / entry["caption_ref"]).read_text())
        verdict = json.loads((base_dir / entry["verdict_ref"]).read_text())
    except (OSError, json.JSONDecodeError, KeyError, DecodeError) as exc:
        raise BundleError(f"broken bundle {entry.get('video_id', '?')}: {exc}") from exc
    return Bundle(video=video, masks=masks, annotation=annotation, caption=caption, verdict=verdict)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def write_manifest(entries: list, path) -> Path:
    """JSONL manifest, sorted by video_id so rebuilds are byte-stable."""
    path = Path(path)
    ordered = sorted(entries, key=lambda e: e["video_id"])
    with open(path, "w") as fh:
        for entry in ordered:
            record = {k: entry[k] for k in _MANIFEST_KEYS}
            record["schema_version"] = MANIFEST_SCHEMA_VERSION
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def load_manifest(path, check_refs: bool = True) -> list:
    """Parse a JSONL manifest; missing-file entries get ``broken=True``."""
    path = Path(path)
    base = path.parent
    entries = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise BundleError(f"unreadable manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}:{lineno}: bad JSON: {exc}") from exc
        version = entry.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise BundleError(
                f"{path}:{lineno}: schema_version {version!r}, "
                f"expected {MANIFEST_SCHEMA_VERSION}"
            )
        missing = [k for k in _MANIFEST_KEYS if k not in entry]
        if missing:
            raise BundleError(f"{path}:{lineno}: missing keys {missing}")
        if check_refs:
            refs = [entry["frame_dir"], entry["mask_ref"], entry["annotation_ref"],
                    entry["caption_ref"], entry["verdict_ref"]]
            absent = [r for r in refs if not (base / r).exists()]
            if absent:
                logger.warning("manifest entry %s has missing refs: %s",
                               entry["video_id"], absent)
                entry["broken"] = True
        entries.append(entry)
    return entries
