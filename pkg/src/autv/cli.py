"""Command-line front end.

Subcommands cover the whole pipeline: ``train-toy`` fits the bundled
denoiser, ``generate`` turns a JSONL prompt file into one bundle per prompt,
``dataset-build`` produces a manifest of synthetic-scene bundles, ``curate``
filters a manifest, ``annotate`` captions attribute records, and ``evaluate``
compares two manifests.

Conventions shared by every subcommand:

* configuration comes from ``--config`` (JSON), ``AUTV_*`` environment
  variables, then flags, in that order of increasing precedence;
* logs go to stderr, results go to files plus a short stdout summary;
* exit status is 0 when everything succeeded and 1 when nothing did.  Batch
  commands isolate entries: one bad prompt becomes an error record in
  ``errors.jsonl`` and exit status 2 (partial failure) while the remaining
  bundles are still written.  argparse itself also exits 2 on bad flags;
* outputs carry the resolved config hash and seed, never wall-clock times,
  so reruns of the same inputs are byte-identical.

Parallel builds derive one seed per entry by hashing the global seed with
the entry id, so ``--jobs 4`` and ``--jobs 1`` write the same dataset.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset_io, fixtures, metrics
from .annotation import (
    Caption,
    LlmCaptionClient,
    TextPrompt,
    VideoAnnotation,
    annotation_to_record,
    classify_difficulty,
    corpus_stats,
    synthesize_caption,
    validate_annotation,
)
from .backends import ToyDenoiser, load_toy_denoiser, save_toy_denoiser, train_toy_denoiser
from .chain import generate_video
from .conditioning import HashEmbedder
from .config import PipelineConfig, config_hash, load_config
from .curation import combine_verdicts, curate_dataset, motion_filter, visual_filter
from .diffusion import CenteringCodec, build_schedule
from .errors import AutvError, ValidationError
from .first_frame import ProceduralMaskBackend, generate_first_frame, generate_masks
from .propagation import NccPropagator, propagate_masks

logger = logging.getLogger(__name__)

_SCENE_ENVIRONMENT = "dim textured field"


def entry_seed(global_seed: int, entry_id: str) -> int:
    """Stable per-entry seed: hash of the global seed and the entry id."""
    digest = hashlib.sha256(f"{global_seed}:{entry_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _schedule_from(cfg: PipelineConfig):
    s = cfg.schedule
    return build_schedule(s.num_steps, s.beta_start, s.beta_end, kind=s.kind)


def _scene_annotation(index: int) -> VideoAnnotation:
    palette = fixtures.PALETTES[index % len(fixtures.PALETTES)][0]
    extra = index % 3 == 2
    return VideoAnnotation(
        central_object="block",
        environment=_SCENE_ENVIRONMENT,
        texture="smooth",
        color=palette,
        size_shape="small rectangular",
        object2="companion block" if extra else None,
        lighting="soft",
        video_clarity="sharp",
        movement_behavior="slow steady drift",
        camera_position="full_scene",
        camera_angle="centered",
    )


def _generate_one(cfg: PipelineConfig, model: ToyDenoiser, prompt: TextPrompt, seed: int):
    """Masks, first frame, chained video, propagated masks, in one pass."""
    schedule = _schedule_from(cfg)
    codec = CenteringCodec()
    embedder = HashEmbedder(dim=model.prompt_dim)
    gen = cfg.generation
    masks0 = generate_masks(
        prompt, ProceduralMaskBackend(), frame_shape=gen.frame_shape, seed=seed
    )
    first = generate_first_frame(
        prompt,
        masks0,
        model,
        codec,
        schedule,
        seed=seed,
        num_inference_steps=gen.num_inference_steps,
        guidance_scale=gen.guidance_scale,
        alignment_threshold=gen.alignment_threshold,
        max_retries=gen.max_retries,
        embedder=embedder,
    )
    video = generate_video(
        first.frame,
        masks0,
        prompt,
        cfg.chain,
        model,
        codec,
        schedule,
        seed=seed,
        fps=gen.fps,
        guidance_scale=gen.guidance_scale,
        embedder=embedder,
    )
    mask_video = propagate_masks(video, masks0, NccPropagator())
    return first, video, mask_video


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train_toy(args, cfg: PipelineConfig) -> int:
    be = cfg.backend
    schedule = _schedule_from(cfg)
    model = ToyDenoiser(
        latent_channels=3,
        hidden_channels=be.hidden_channels,
        max_instances=be.max_instances,
        prompt_dim=be.prompt_dim,
        num_train_steps=cfg.schedule.num_steps,
        seed=cfg.seed,
    )
    batch_fn = fixtures.default_training_batch(
        frame_shape=(be.train_frame_size, be.train_frame_size),
        max_instances=be.max_instances,
        embedder=HashEmbedder(dim=be.prompt_dim),
    )
    steps = args.steps if args.steps is not None else be.train_steps
    log = train_toy_denoiser(
        model,
        schedule,
        batch_fn,
        num_steps=steps,
        batch_size=be.batch_size,
        learning_rate=be.learning_rate,
        seed=cfg.seed,
        latent_gain_budget=be.latent_gain_budget,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_toy_denoiser(model, out)
    log_doc = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "num_steps": log.num_steps,
        "batch_size": log.batch_size,
        "learning_rate": log.learning_rate,
        "initial_loss": log.initial_loss,
        "final_loss": log.final_loss,
        "latent_gain_bound": model.latent_gain_bound(),
        "latent_gain_budget": be.latent_gain_budget,
        "losses": log.losses,
    }
    out.with_suffix(".train.json").write_text(json.dumps(log_doc, indent=2) + "\n")
    print(
        f"trained {steps} steps: loss {log.initial_loss:.4f} -> {log.final_loss:.4f}; "
        f"saved {out}"
    )
    return 0


def _prompt_annotation(prompt: TextPrompt) -> VideoAnnotation:
    """Attribute record for a free-text prompt: objects are known, most
    scene attributes are not and stay None."""
    extras = (list(prompt.objects[1:4]) + [None, None, None])[:3]
    return VideoAnnotation(
        central_object=prompt.objects[0],
        environment=_SCENE_ENVIRONMENT,
        object2=extras[0],
        object3=extras[1],
        object4=extras[2],
        movement_behavior="slow steady drift",
    )


def _generate_entry(task: tuple) -> tuple:
    """One prompt entry -> one bundle, runnable in a worker process.

    Returns ("ok", manifest_entry) or ("error", record) so a bad prompt
    never sinks the rest of the batch.
    """
    cfg, model_path, out_root, video_id, raw = task
    try:
        text = raw.get("text", "")
        objects = raw.get("objects") or ["object"]
        if not isinstance(objects, list):
            raise ValidationError(f"prompt {video_id!r}: objects must be a list")
        prompt = TextPrompt(prompt_id=video_id, text=text, objects=objects)
        model = _cached_model(model_path)
        ann = _prompt_annotation(prompt)
        caption = Caption(
            text=prompt.text,
            word_count=len(prompt.text.split()),
            source="human_reviewed",
        )
        seed = entry_seed(cfg.seed, video_id)
        first, video, mask_video = _generate_one(cfg, model, prompt, seed)
        verdict = combine_verdicts(
            motion_filter(video, mask_video, cfg.curation, video_id=video_id),
            visual_filter(video, cfg.curation, video_id=video_id),
        )
        if first.low_quality:
            verdict.reasons.append("low_alignment_first_frame")
            verdict.accepted = False
        verdict.stats["first_frame"] = {
            "alignment": first.alignment,
            "attempts": first.attempts,
        }
        entry = dataset_io.write_bundle(
            out_root,
            video_id,
            video,
            mask_video,
            annotation_to_record(ann),
            caption,
            asdict(verdict),
            difficulty=classify_difficulty(ann),
            chain_cfg=cfg.chain,
            overwrite=True,
        )
        return ("ok", entry)
    except (AutvError, OSError) as exc:
        return ("error", {"video_id": video_id, "category": type(exc).__name__, "error": str(exc)})


def _run_tasks(worker, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def cmd_generate(args, cfg: PipelineConfig) -> int:
    prompts_path = Path(args.prompts)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    tasks, errors = [], []
    seen = set()
    for lineno, line in enumerate(prompts_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        slot = f"line_{lineno:04d}"
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append({"video_id": slot, "category": "ValidationError", "error": f"invalid JSON: {exc}"})
            continue
        if not isinstance(raw, dict) or not isinstance(raw.get("id"), str) or not raw["id"].strip():
            errors.append(
                {"video_id": slot, "category": "ValidationError", "error": "entry must be an object with a string id"}
            )
            continue
        video_id = raw["id"].strip()
        if video_id in seen:
            errors.append({"video_id": video_id, "category": "ValidationError", "error": "duplicate id"})
            continue
        seen.add(video_id)
        tasks.append((cfg, args.model, str(out_root), video_id, raw))
    num_entries = len(tasks) + len(errors)
    if num_entries == 0:
        raise AutvError(f"no prompt entries in {prompts_path}")

    results = _run_tasks(_generate_entry, tasks, args.jobs)
    entries = [p for s, p in results if s == "ok"]
    errors.extend(p for s, p in results if s == "error")

    dataset_io.write_manifest(entries, out_root / "manifest.jsonl")
    errors_path = out_root / "errors.jsonl"
    if errors:
        with open(errors_path, "w") as fh:
            for record in errors:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    elif errors_path.exists():
        errors_path.unlink()
    summary = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "num_entries": num_entries,
        "num_ok": len(entries),
        "num_failed": len(errors),
    }
    (out_root / "generate_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    suffix = f" ({len(errors)} failed, see errors.jsonl)" if errors else ""
    print(f"generated {len(entries)}/{num_entries} bundles under {out_root}{suffix}")
    if not entries:
        return 1
    return 2 if errors else 0


_WORKER_MODELS: dict = {}


def _cached_model(path: str) -> ToyDenoiser:
    if path not in _WORKER_MODELS:
        _WORKER_MODELS[path] = load_toy_denoiser(path)
    return _WORKER_MODELS[path]


def _build_entry(task: tuple) -> dict:
    """One dataset entry, runnable in a worker process."""
    cfg, model_path, out_root, index, video_id = task
    model = _cached_model(model_path)
    ann = _scene_annotation(index)
    caption = synthesize_caption(ann)
    prompt = TextPrompt(
        prompt_id=video_id,
        text=caption.text,
        objects=[ann.central_object] + ann.extra_objects(),
    )
    seed = entry_seed(cfg.seed, video_id)
    first, video, mask_video = _generate_one(cfg, model, prompt, seed)
    verdict = combine_verdicts(
        motion_filter(video, mask_video, cfg.curation, video_id=video_id),
        visual_filter(video, cfg.curation, video_id=video_id),
    )
    if first.low_quality:
        verdict.reasons.append("low_alignment_first_frame")
        verdict.accepted = False
    return dataset_io.write_bundle(
        out_root,
        video_id,
        video,
        mask_video,
        annotation_to_record(ann),
        caption,
        asdict(verdict),
        difficulty=classify_difficulty(ann),
        chain_cfg=cfg.chain,
        overwrite=True,
    )


def cmd_dataset_build(args, cfg: PipelineConfig) -> int:
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    tasks = [
        (cfg, args.model, str(out_root), i, f"video_{i:04d}") for i in range(args.count)
    ]
    entries = _run_tasks(_build_entry, tasks, args.jobs)
    manifest = dataset_io.write_manifest(entries, out_root / "manifest.jsonl")
    summary = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "count": len(entries),
        "manifest": str(manifest),
    }
    (out_root / "build_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"built {len(entries)} bundles under {out_root}")
    return 0


def cmd_curate(args, cfg: PipelineConfig) -> int:
    thresholds = cfg.curation
    if args.loosen != 1.0:
        thresholds = thresholds.loosened(args.loosen)
    summary = curate_dataset(args.manifest, thresholds=thresholds, out_dir=args.out)
    rate = summary["acceptance_rate"]
    print(
        f"curated {summary['num_videos']} videos: {summary['num_accepted']} accepted"
        + (f" ({rate:.1%})" if rate is not None else "")
    )
    return 0


def cmd_annotate(args, cfg: PipelineConfig) -> int:
    records_path = Path(args.records)
    engine = "template"
    if args.llm_endpoint:
        engine = LlmCaptionClient(endpoint=args.llm_endpoint, model=args.llm_model)
    annotations, captions, rows = [], [], []
    for lineno, line in enumerate(records_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        ann = validate_annotation(json.loads(line))
        caption = synthesize_caption(ann, engine=engine)
        annotations.append(ann)
        captions.append(caption)
        rows.append(
            {
                "index": len(rows),
                "difficulty": classify_difficulty(ann),
                "text": caption.text,
                "word_count": caption.word_count,
                "source": caption.source,
            }
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "captions.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    stats = corpus_stats(annotations, captions)
    stats["config_hash"] = config_hash(cfg)
    (out / "annotation_stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"annotated {len(rows)} records "
        f"(mean caption length {stats['mean_caption_words']:.1f} words)"
    )
    return 0


def _manifest_videos(manifest_path: Path):
    entries = dataset_io.load_manifest(manifest_path)
    bundles = {}
    for entry in entries:
        if entry.get("broken"):
            logger.warning("skipping broken entry %s", entry["video_id"])
            continue
        bundles[entry["video_id"]] = dataset_io.read_bundle(manifest_path.parent, entry)
    return bundles


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    me = cfg.metrics
    real = _manifest_videos(Path(args.real))
    gen = _manifest_videos(Path(args.generated))
    if not real or not gen:
        raise AutvError("both manifests must contain at least one readable bundle")

    frame_extractor = metrics.FrameFeatureExtractor(grid=me.frame_grid, hist_bins=me.hist_bins)
    clip_extractor = metrics.ClipFeatureExtractor(grid=me.clip_grid)
    real_frames = [f for b in real.values() for f in b.video.frames]
    gen_frames = [f for b in gen.values() for f in b.video.frames]
    fid = {"all": metrics.compute_fid(real_frames, gen_frames, frame_extractor)}

    real_videos = [b.video for b in real.values()]
    gen_videos = [b.video for b in gen.values()]
    fvd = {
        me.clip_len: metrics.compute_fvd(
            real_videos,
            gen_videos,
            clip_extractor,
            clip_len=me.clip_len,
            count=me.clip_count,
            seed=cfg.seed,
        )
    }

    miou_mean = miou_std = None
    shared = sorted(set(real) & set(gen))
    pairs = []
    for vid in shared:
        try:
            pairs.append((gen[vid].masks, real[vid].masks))
        except AutvError:
            continue
    if pairs:
        miou_mean, miou_std = metrics.compute_miou_corpus(pairs, frame_indices=me.audit_frames)

    report = metrics.MetricsReport(
        fid=fid,
        fvd=fvd,
        miou_mean=miou_mean,
        miou_std=miou_std,
        metadata={
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "frame_extractor": frame_extractor.descriptor,
            "clip_extractor": clip_extractor.descriptor,
            "clip_len": me.clip_len,
            "clip_count": me.clip_count,
            "audit_frames": list(me.audit_frames),
            "num_real_videos": len(real),
            "num_generated_videos": len(gen),
            "num_miou_pairs": len(pairs),
        },
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    if args.csv:
        report.write_csv(args.csv)
    miou_text = f"{miou_mean:.3f}" if miou_mean is not None else "n/a"
    print(
        f"FID {fid['all']:.4f}  FVD[{me.clip_len}] {fvd[me.clip_len]:.4f}  "
        f"mIoU {miou_text}  -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autv",
        description="Desk-scale text-to-video generation with aligned masks.",
    )
    parser.add_argument("--config", help="JSON config file", default=None)
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the bundled toy denoiser")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--steps", type=int, default=None, help="override configured step count")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("generate", help="build one bundle per prompt in a JSONL file")
    p.add_argument("--model", required=True, help="toy denoiser checkpoint")
    p.add_argument("--prompts", required=True, help="JSONL of {id, text, objects} entries")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("dataset-build", help="generate a manifest of bundles")
    p.add_argument("--model", required=True, help="toy denoiser checkpoint")
    p.add_argument("--count", type=int, default=4, help="number of videos")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("curate", help="filter a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="report directory (default: beside manifest)")
    p.add_argument(
        "--loosen",
        type=float,
        default=1.0,
        help="relax every threshold by this factor (>= 1)",
    )
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("annotate", help="caption attribute records")
    p.add_argument("--records", required=True, help="JSONL of annotation records")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--llm-endpoint", default=None, help="optional caption service URL")
    p.add_argument("--llm-model", default="caption-small", help="caption service model name")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("evaluate", help="compare two manifests")
    p.add_argument("--real", required=True, help="reference manifest")
    p.add_argument("--generated", required=True, help="candidate manifest")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", default=None, help="also write a CSV of the scores")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {"seed": args.seed} if args.seed is not None else None
    try:
        cfg = load_config(path=args.config, overrides=overrides)
        return args.func(args, cfg)
    except AutvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
