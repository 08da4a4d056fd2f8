import json
from collections import Counter
from importlib import resources

import numpy as np
import pytest

from autv.annotation import (
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
from autv.errors import CaptionClientError, ValidationError
from autv.fixtures import random_annotation


def minimal():
    return VideoAnnotation(central_object="block", environment="wooden desk")


def shipped_records():
    path = resources.files("autv").joinpath("data/sample_annotations.jsonl")
    lines = path.read_text().splitlines()
    return [validate_annotation(json.loads(line)) for line in lines if line.strip()]


# ---------------------------------------------------------------------------
# Records and validation
# ---------------------------------------------------------------------------


def test_text_prompt_validation():
    TextPrompt(prompt_id="p", text="a block", objects=["block"])
    with pytest.raises(ValidationError):
        TextPrompt(prompt_id="", text="a block", objects=["block"])
    with pytest.raises(ValidationError):
        TextPrompt(prompt_id="p", text="   ", objects=["block"])
    with pytest.raises(ValidationError):
        TextPrompt(prompt_id="p", text="a block", objects=[])
    with pytest.raises(ValidationError):
        TextPrompt(prompt_id="p", text="a block", objects=["block", ""])


def test_annotation_field_validation():
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object=" ", environment="desk")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="desk", video_clarity="hazy")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="desk", camera_angle="dutch")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="desk",
                        camera_position="drone_shot")


def test_object_slots_forbid_gaps():
    VideoAnnotation(central_object="block", environment="desk", object2="marble",
                    object3="cone")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="desk", object3="cone")
    with pytest.raises(ValidationError):
        VideoAnnotation(central_object="block", environment="desk", object2="   ")


def test_validate_annotation_mapping_rules():
    ann = validate_annotation({"central_object": "block", "environment": "desk"})
    assert ann.object_count() == 1
    with pytest.raises(ValidationError, match="unknown"):
        validate_annotation({"central_object": "block", "environment": "desk",
                             "mood": "calm"})
    with pytest.raises(ValidationError):
        validate_annotation({"central_object": "block"})
    with pytest.raises(ValidationError):
        validate_annotation(["central_object"])


def test_annotation_record_round_trip():
    ann = minimal()
    record = annotation_to_record(ann)
    assert tuple(record) == ANNOTATION_FIELDS
    assert record["object4"] is None
    assert validate_annotation(record) == ann


# ---------------------------------------------------------------------------
# Difficulty
# ---------------------------------------------------------------------------


def test_difficulty_follows_object_count():
    assert classify_difficulty(minimal()) == "simple"
    two = VideoAnnotation(central_object="a", environment="e", object2="b")
    assert classify_difficulty(two) == "medium"
    three = VideoAnnotation(central_object="a", environment="e", object2="b", object3="c")
    assert classify_difficulty(three) == "hard"
    four = VideoAnnotation(central_object="a", environment="e", object2="b",
                           object3="c", object4="d")
    assert classify_difficulty(four) == "hard"


def test_shipped_records_difficulty_histogram():
    records = shipped_records()
    assert len(records) == 20
    counts = Counter(classify_difficulty(a) for a in records)
    assert counts == {"simple": 6, "medium": 8, "hard": 6}


def test_corpus_stats_aggregates():
    records = shipped_records()
    captions = [synthesize_caption(a) for a in records]
    stats = corpus_stats(records, captions)
    assert stats["num_records"] == 20
    assert stats["difficulty_histogram"] == {"simple": 6, "medium": 8, "hard": 6}
    assert stats["attribute_fill_percent"]["central_object"] == 100.0
    assert stats["attribute_fill_percent"]["object4"] == pytest.approx(15.0)
    assert stats["mean_caption_words"] == pytest.approx(
        np.mean([c.word_count for c in captions])
    )
    with pytest.raises(ValidationError):
        corpus_stats(records, captions[:-1])


# ---------------------------------------------------------------------------
# Captions
# ---------------------------------------------------------------------------


def test_caption_validation():
    Caption(text="two words", word_count=2)
    with pytest.raises(ValidationError):
        Caption(text="two words", word_count=3)
    with pytest.raises(ValidationError):
        Caption(text="  ", word_count=0)
    with pytest.raises(ValidationError):
        Caption(text="x", word_count=1, source="oracle")


def test_template_caption_minimal_record():
    caption = synthesize_caption(minimal())
    assert caption.source == "template"
    assert "block" in caption.text
    assert "wooden desk" in caption.text
    assert caption.word_count == len(caption.text.split())
    validate_caption(caption, minimal())


def test_template_caption_full_record():
    ann = VideoAnnotation(
        central_object="block",
        environment="cluttered workshop bench",
        texture="grainy",
        color="oxblood red",
        size_shape="palm sized cubic",
        object2="marble",
        object3="copper cone",
        lighting="slanting amber",
        video_clarity="sharp",
        movement_behavior="slow steady drift",
        camera_position="full_scene",
        camera_angle="horizontal",
    )
    caption = synthesize_caption(ann)
    for required in ("block", "cluttered workshop bench", "marble", "copper cone",
                     "slow steady drift", "sharp"):
        assert required in caption.text
    assert caption.word_count > synthesize_caption(minimal()).word_count


def test_validate_caption_failures():
    ann = minimal()
    stray = Caption(text="A sphere hovers over a wooden desk.", word_count=7)
    with pytest.raises(ValidationError, match="central object"):
        validate_caption(stray, ann)
    gapped = Caption(text="A block  sits on a wooden desk.", word_count=7)
    with pytest.raises(ValidationError, match="empty clause"):
        validate_caption(gapped, ann)


def test_random_annotations_caption_in_band():
    rng = np.random.default_rng(7)
    words = []
    for _ in range(30):
        ann = random_annotation(rng)
        caption = synthesize_caption(ann)
        validate_caption(caption, ann)
        words.append(caption.word_count)
    assert 30.0 <= float(np.mean(words)) <= 60.0


def test_prompt_from_annotation():
    ann = VideoAnnotation(central_object="block", environment="desk", object2="marble")
    prompt = prompt_from_annotation(ann, "vid_7")
    assert prompt.prompt_id == "vid_7"
    assert prompt.objects == ["block", "marble"]
    assert prompt.text == synthesize_caption(ann).text
    custom = prompt_from_annotation(ann, "vid_8", text="a block by a marble")
    assert custom.text == "a block by a marble"


# ---------------------------------------------------------------------------
# Caption service boundary
# ---------------------------------------------------------------------------


class _EngineStub:
    def __init__(self, result):
        self.result = result

    def generate(self, record):
        if isinstance(self.result, Exception):
            raise self.result
        return self.result


def test_engine_success_is_llm_sourced():
    text = "A block slides across a wooden desk under warm light."
    caption = synthesize_caption(minimal(), engine=_EngineStub(text))
    assert caption.source == "llm"
    assert caption.text == text


def test_engine_failure_falls_back_to_template(caplog):
    for broken in (_EngineStub(RuntimeError("boom")), _EngineStub(12),
                   _EngineStub("no required nouns at all")):
        with caplog.at_level("WARNING", logger="autv.annotation"):
            caption = synthesize_caption(minimal(), engine=broken)
        assert caption.source == "template"
    assert "falling back" in caplog.text


class _Response:
    def __init__(self, status, body):
        self.status_code = status
        self._body = body
        self.text = json.dumps(body)

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"http {self.status_code}")

    def json(self):
        return self._body


def test_llm_client_happy_path(monkeypatch):
    calls = []

    def fake_post(url, json=None, timeout=None):
        calls.append((url, json, timeout))
        return _Response(200, {"caption": "A block rests on a wooden desk."})

    monkeypatch.setattr("requests.post", fake_post)
    client = LlmCaptionClient("http://captions.invalid/v1", model="desc-1", timeout_s=3.0)
    caption = synthesize_caption(minimal(), engine=client)
    assert caption.source == "llm"
    assert calls[0][0] == "http://captions.invalid/v1"
    assert calls[0][1]["model"] == "desc-1"
    assert calls[0][2] == 3.0
    assert client.transcripts[0]["response"]["status"] == 200


def test_llm_client_retries_then_raises(monkeypatch):
    monkeypatch.setattr(
        "requests.post", lambda *a, **k: _Response(503, {"error": "overloaded"})
    )
    client = LlmCaptionClient("http://captions.invalid/v1", model="desc-1", max_retries=3)
    with pytest.raises(CaptionClientError, match="after 3 attempts"):
        client.generate(annotation_to_record(minimal()))
    assert len(client.transcripts) == 3
    assert all(t["error"] for t in client.transcripts)


def test_llm_client_malformed_payload(monkeypatch):
    monkeypatch.setattr(
        "requests.post", lambda *a, **k: _Response(200, {"caption": "   "})
    )
    client = LlmCaptionClient("http://captions.invalid/v1", model="desc-1", max_retries=1)
    with pytest.raises(CaptionClientError):
        client.generate(annotation_to_record(minimal()))
    # and through the synthesis boundary it degrades to the template
    caption = synthesize_caption(minimal(), engine=client)
    assert caption.source == "template"
