"""Walk the annotation layer: the shipped 20-record corpus, difficulty
classification, template captions, and what the validator rejects.
"""

import json
from importlib import resources

import numpy as np

from autv.annotation import (
    corpus_stats,
    synthesize_caption,
    validate_annotation,
    validate_caption,
)
from autv.errors import ValidationError
from autv import fixtures

path = resources.files("autv").joinpath("data/sample_annotations.jsonl")
records = [validate_annotation(json.loads(line))
           for line in path.read_text().splitlines() if line.strip()]
stats = corpus_stats(records)
print(f"{len(records)} shipped records")
print(f"difficulty histogram: {stats['difficulty_histogram']}")
print("attribute fill rates (%):")
for field, pct in sorted(stats["attribute_fill_percent"].items(), key=lambda kv: -kv[1]):
    print(f"  {field:<20} {pct:5.1f}")

ann = records[0]
caption = synthesize_caption(ann)
print(f"\ntemplate caption for {ann.central_object!r} ({caption.word_count} words):")
print(f"  {caption.text}")
validate_caption(caption, ann)
print("caption validates against its annotation")

# the validator is picky about captions that drop the central object
other = next(r for r in records[1:] if r.central_object != ann.central_object)
try:
    validate_caption(caption, other)
except ValidationError as exc:
    print(f"against the wrong record it fails: {exc}")

rng = np.random.default_rng(0)
lengths = []
for _ in range(100):
    a = fixtures.random_annotation(rng)
    lengths.append(synthesize_caption(a).word_count)
print(f"\n100 random full-attribute captions: mean {np.mean(lengths):.1f} words, "
      f"range {min(lengths)}-{max(lengths)}")
