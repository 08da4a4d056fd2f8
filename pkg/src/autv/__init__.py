"""Desk-scale text-to-video generation with aligned per-frame object masks.

The pipeline runs text -> first-frame masks -> conditioned first frame ->
inversion-chained video -> propagated masks, followed by curation filters,
attribute annotation with captions, and distribution metrics. Everything is
numpy-backed and deterministic given a seed.
"""

from .annotation import (
    ANNOTATION_FIELDS,
    Caption,
    LlmCaptionClient,
    TextPrompt,
    VideoAnnotation,
    annotation_to_record,
    classify_difficulty,
    corpus_stats,
    prompt_from_annotation,
    synthesize_caption,
    validate_annotation,
    validate_caption,
)
from .backends import (
    ConstantDenoiser,
    ScalarLinearDenoiser,
    ToyDenoiser,
    TrainingLog,
    ZeroDenoiser,
    load_toy_denoiser,
    save_toy_denoiser,
    train_toy_denoiser,
)
from .chain import (
    ChainConfig,
    VideoSample,
    adjacent_frame_consistency,
    export_video,
    generate_video,
    independent_video,
    load_video,
)
from .conditioning import (
    ConditioningBundle,
    HashEmbedder,
    PromptEmbedding,
    TextEmbedderBackend,
    embed_prompt,
    inject_condition,
    null_prompt,
    rasterize_masks,
)
from .config import PipelineConfig, config_hash, load_config
from .curation import (
    CurationThresholds,
    FilterVerdict,
    combine_verdicts,
    curate_dataset,
    curate_videos,
    estimate_global_shift,
    motion_filter,
    visual_filter,
)
from .diffusion import (
    CenteringCodec,
    CodecPair,
    DenoiserBackend,
    DiffusionSchedule,
    IdentityCodec,
    LatentGrid,
    build_schedule,
    ddim_invert,
    ddim_sample,
    inference_timesteps,
    load_schedule,
    q_sample,
    save_schedule,
)
from .errors import (
    AlignmentError,
    AutvError,
    BackendError,
    BundleError,
    CapabilityError,
    CaptionClientError,
    ChainError,
    ConfigError,
    ContractViolationError,
    DecodeError,
    GenerationError,
    MetricError,
    ProtocolError,
    ScheduleError,
    ShapeError,
    TimestepError,
    ValidationError,
)
from .first_frame import (
    DiffusionMaskBackend,
    FirstFrameResult,
    Frame,
    MaskSet,
    ProceduralMaskBackend,
    alignment_score,
    generate_first_frame,
    generate_masks,
    quantize_unit,
)
from .metrics import (
    ClipFeatureExtractor,
    FrameFeatureExtractor,
    GaussianStats,
    MetricsReport,
    compute_fid,
    compute_fvd,
    compute_miou,
    compute_miou_corpus,
    fit_gaussian,
    frechet_distance,
    sample_clips,
)
from .propagation import (
    BoxPromptSegmenter,
    MaskVideo,
    NccPropagator,
    SegmenterBackend,
    propagate_masks,
)

__version__ = "0.1.0"
