"""Structured video annotations, captions, and corpus statistics.

An annotation is a fixed 13-attribute record describing one clip: the central
object and its appearance (texture, color, size/shape), up to three more
objects, the environment, lighting, clarity, movement behaviour, and two
camera attributes.  Difficulty follows the object count: one object is
simple, two is medium, three or more is hard.

Captions come from a deterministic slot-filling template by default; a remote
caption service can be plugged in and is treated strictly as an external
boundary -- timeouts and malformed replies fall back to the template with a
warning, never an exception.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import CaptionClientError, ValidationError

__all__ = [
    "ANNOTATION_FIELDS",
    "OBJECT_FIELDS",
    "VIDEO_CLARITY_VALUES",
    "CAMERA_POSITION_VALUES",
    "CAMERA_ANGLE_VALUES",
    "TextPrompt",
    "VideoAnnotation",
    "Caption",
    "validate_annotation",
    "annotation_to_record",
    "classify_difficulty",
    "synthesize_caption",
    "validate_caption",
    "corpus_stats",
    "LlmCaptionClient",
    "prompt_from_annotation",
]

logger = logging.getLogger(__name__)

ANNOTATION_FIELDS = (
    "central_object",
    "texture",
    "color",
    "size_shape",
    "object2",
    "object3",
    "object4",
    "environment",
    "lighting",
    "video_clarity",
    "movement_behavior",
    "camera_position",
    "camera_angle",
)

OBJECT_FIELDS = ("object2", "object3", "object4")

VIDEO_CLARITY_VALUES = ("sharp", "blurry")
CAMERA_POSITION_VALUES = ("full_scene", "single_angle", "partial_view")
CAMERA_ANGLE_VALUES = ("horizontal", "vertical", "centered")

_CAMERA_POSITION_PHRASES = {
    "full_scene": "full scene view",
    "single_angle": "single fixed angle",
    "partial_view": "partial view",
}


@dataclass
class TextPrompt:
    """What the generation pipeline needs to start: text plus object labels."""

    prompt_id: str
    text: str
    objects: list

    def __post_init__(self):
        if not isinstance(self.prompt_id, str) or not self.prompt_id:
            raise ValidationError("prompt_id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError(f"prompt {self.prompt_id!r}: text must be non-empty")
        if not self.objects or not all(isinstance(o, str) and o for o in self.objects):
            raise ValidationError(
                f"prompt {self.prompt_id!r}: objects must be non-empty strings"
            )


@dataclass
class VideoAnnotation:
    """The 13-attribute record; optional attributes hold None when absent."""

    central_object: str
    environment: str
    texture: Optional[str] = None
    color: Optional[str] = None
    size_shape: Optional[str] = None
    object2: Optional[str] = None
    object3: Optional[str] = None
    object4: Optional[str] = None
    lighting: Optional[str] = None
    video_clarity: Optional[str] = None
    movement_behavior: Optional[str] = None
    camera_position: Optional[str] = None
    camera_angle: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.central_object, str) or not self.central_object.strip():
            raise ValidationError("central_object must be a non-empty string")
        if not isinstance(self.environment, str) or not self.environment.strip():
            raise ValidationError("environment must be a non-empty string")
        if self.video_clarity is not None and self.video_clarity not in VIDEO_CLARITY_VALUES:
            raise ValidationError(
                f"video_clarity must be one of {VIDEO_CLARITY_VALUES}, got {self.video_clarity!r}"
            )
        if self.camera_position is not None and self.camera_position not in CAMERA_POSITION_VALUES:
            raise ValidationError(
                f"camera_position must be one of {CAMERA_POSITION_VALUES}, "
                f"got {self.camera_position!r}"
            )
        if self.camera_angle is not None and self.camera_angle not in CAMERA_ANGLE_VALUES:
            raise ValidationError(
                f"camera_angle must be one of {CAMERA_ANGLE_VALUES}, got {self.camera_angle!r}"
            )
        # no gaps in the object list: object N requires object N-1
        previous = self.central_object
        for name in OBJECT_FIELDS:
            value = getattr(self, name)
            if value is not None and not previous:
                raise ValidationError(f"{name} set while an earlier object slot is empty")
            if value is not None and (not isinstance(value, str) or not value.strip()):
                raise ValidationError(f"{name} must be a non-empty string when present")
            previous = value

    def object_count(self) -> int:
        return 1 + sum(1 for name in OBJECT_FIELDS if getattr(self, name) is not None)

    def extra_objects(self) -> list:
        return [getattr(self, name) for name in OBJECT_FIELDS if getattr(self, name) is not None]


def validate_annotation(record: dict) -> VideoAnnotation:
    """Parse a raw mapping into a validated annotation.

    Unknown keys are rejected; optional attributes may be absent or null.
    """
    if not isinstance(record, dict):
        raise ValidationError(f"annotation record must be a mapping, got {type(record)}")
    unknown = set(record) - set(ANNOTATION_FIELDS)
    if unknown:
        raise ValidationError(f"unknown annotation keys: {sorted(unknown)}")
    if "central_object" not in record or "environment" not in record:
        raise ValidationError("annotation needs central_object and environment")
    kwargs = {k: record.get(k) for k in ANNOTATION_FIELDS}
    return VideoAnnotation(**kwargs)


def annotation_to_record(ann: VideoAnnotation) -> dict:
    """Serialize with exactly the 13 field names, nulls included."""
    blob = asdict(ann)
    return {k: blob[k] for k in ANNOTATION_FIELDS}


def classify_difficulty(ann: VideoAnnotation) -> str:
    """simple / medium / hard for 1 / 2 / 3-or-more objects in the scene."""
    count = ann.object_count()
    if count <= 1:
        return "simple"
    if count == 2:
        return "medium"
    return "hard"


def prompt_from_annotation(ann: VideoAnnotation, prompt_id: str, text: Optional[str] = None) -> TextPrompt:
    """Derive the generation prompt: caption text plus the object labels."""
    caption_text = text if text is not None else synthesize_caption(ann).text
    objects = [ann.central_object] + ann.extra_objects()
    return TextPrompt(prompt_id=prompt_id, text=caption_text, objects=objects)


# ---------------------------------------------------------------------------
# Captions
# ---------------------------------------------------------------------------


@dataclass
class Caption:
    """Natural-language description of a clip plus how it was produced."""

    text: str
    word_count: int
    source: str = "template"

    def __post_init__(self):
        if self.source not in ("template", "llm", "human_reviewed"):
            raise ValidationError(f"unknown caption source {self.source!r}")
        if not self.text.strip():
            raise ValidationError("caption text must be non-empty")
        actual = len(self.text.split())
        if self.word_count != actual:
            raise ValidationError(
                f"caption word_count {self.word_count} != actual {actual}"
            )


def _article(noun: str) -> str:
    return "an" if noun[:1].lower() in "aeiou" else "a"


def _template_caption(ann: VideoAnnotation) -> str:
    """Deterministic slot-filling template; clauses appear only when filled."""
    adjectives = " ".join(v for v in (ann.size_shape, ann.color) if v)
    subject = f"{adjectives} {ann.central_object}".strip()
    first = f"{_article(subject).capitalize()} {subject}"
    if ann.texture:
        first += f" with {_article(ann.texture)} {ann.texture} texture"
    first += f" moves through {_article(ann.environment)} {ann.environment}."
    sentences = [first]
    extras = ann.extra_objects()
    if extras:
        phrases = [f"{_article(o)} {o}" for o in extras]
        if len(phrases) == 1:
            listed = phrases[0]
        else:
            listed = ", ".join(phrases[:-1]) + f", and {phrases[-1]}"
        verb = "shares" if len(phrases) == 1 else "share"
        sentences.append(f"{listed[0].upper()}{listed[1:]} {verb} the scene nearby.")
    if ann.movement_behavior:
        sentences.append(f"It moves with {ann.movement_behavior}.")
    if ann.lighting:
        sentences.append(f"{ann.lighting.capitalize()} light fills the scene.")
    tail_bits = []
    if ann.video_clarity:
        tail_bits.append(f"The {ann.video_clarity} footage")
    else:
        tail_bits.append("The footage")
    if ann.camera_position:
        tail_bits.append(f"holds {_article(_CAMERA_POSITION_PHRASES[ann.camera_position])} "
                         f"{_CAMERA_POSITION_PHRASES[ann.camera_position]}")
    else:
        tail_bits.append("holds its framing")
    if ann.camera_angle:
        tail_bits.append(f"at {_article(ann.camera_angle)} {ann.camera_angle} angle")
    if ann.camera_position or ann.camera_angle or ann.video_clarity:
        sentences.append(" ".join(tail_bits) + ".")
    return " ".join(sentences)


def validate_caption(caption: Caption, ann: VideoAnnotation) -> None:
    """A caption must mention the central object and environment verbatim."""
    if ann.central_object not in caption.text:
        raise ValidationError(
            f"caption does not mention central object {ann.central_object!r}"
        )
    if ann.environment not in caption.text:
        raise ValidationError(f"caption does not mention environment {ann.environment!r}")
    if "{" in caption.text or "}" in caption.text:
        raise ValidationError("caption contains unfilled template slots")
    if "  " in caption.text or " ." in caption.text or " ," in caption.text:
        raise ValidationError("caption contains an empty clause")


def synthesize_caption(ann: VideoAnnotation, engine="template") -> Caption:
    """Produce a validated caption; remote engines fall back to the template.

    ``engine`` is either the string ``"template"`` or any object exposing
    ``generate(record: dict) -> str`` (see :class:`LlmCaptionClient`).
    """
    if engine != "template":
        try:
            text = engine.generate(annotation_to_record(ann))
            if not isinstance(text, str):
                raise CaptionClientError(f"caption service returned {type(text)}")
            caption = Caption(text=text.strip(), word_count=len(text.split()), source="llm")
            validate_caption(caption, ann)
            return caption
        except Exception as exc:
            logger.warning("caption service failed (%s); falling back to template", exc)
    text = _template_caption(ann)
    caption = Caption(text=text, word_count=len(text.split()), source="template")
    validate_caption(caption, ann)
    return caption


class LlmCaptionClient:
    """Minimal HTTP client for an external caption service.

    POSTs ``{"model": ..., "attributes": {...}}`` and expects a JSON body with
    a ``caption`` string.  Every exchange is recorded in ``transcripts`` for
    audit; after ``max_retries`` failed attempts a
    :class:`~autv.errors.CaptionClientError` is raised (which
    :func:`synthesize_caption` turns into a template fallback).
    """

    def __init__(self, endpoint: str, model: str, timeout_s: float = 10.0, max_retries: int = 2):
        self.endpoint = endpoint
        self.model = model
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.transcripts = []

    def generate(self, record: dict) -> str:
        import requests

        payload = {"model": self.model, "attributes": record}
        last_error = None
        for attempt in range(1, self.max_retries + 1):
            entry = {"attempt": attempt, "request": payload, "response": None, "error": None}
            self.transcripts.append(entry)
            try:
                resp = requests.post(self.endpoint, json=payload, timeout=self.timeout_s)
                entry["response"] = {"status": resp.status_code, "body": resp.text[:2000]}
                resp.raise_for_status()
                body = resp.json()
                caption = body.get("caption")
                if not isinstance(caption, str) or not caption.strip():
                    raise CaptionClientError(f"malformed caption payload: {body!r}")
                return caption
            except Exception as exc:  # noqa: BLE001 - boundary: record and retry
                entry["error"] = repr(exc)
                last_error = exc
        raise CaptionClientError(
            f"caption service failed after {self.max_retries} attempts: {last_error!r}"
        )


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


def corpus_stats(records: list, captions: Optional[list] = None) -> dict:
    """Attribute fill percentages, difficulty histogram, caption length.

    ``records`` holds :class:`VideoAnnotation` instances; ``captions``, when
    given, must align with ``records``.
    """
    anns = list(records)
    n = len(anns)
    if captions is not None and len(captions) != n:
        raise ValidationError(
            f"{len(captions)} captions for {n} records; they must align"
        )
    fill = {}
    for name in ANNOTATION_FIELDS:
        filled = sum(1 for a in anns if getattr(a, name) not in (None, ""))
        fill[name] = 100.0 * filled / n if n else 0.0
    histogram = {"simple": 0, "medium": 0, "hard": 0}
    for a in anns:
        histogram[classify_difficulty(a)] += 1
    mean_words = None
    if captions:
        mean_words = float(sum(c.word_count for c in captions)) / len(captions)
    return {
        "num_records": n,
        "attribute_fill_percent": fill,
        "difficulty_histogram": histogram,
        "mean_caption_words": mean_words,
    }
