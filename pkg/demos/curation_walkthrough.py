"""Run the motion and visual filters over a suite of designed clips, one per
rejection reason, then loosen the thresholds and watch the accepted set grow.
"""

from autv.curation import CurationThresholds, curate_videos
from autv import fixtures

suite = fixtures.curation_suite(seed=0)
items = [(vid, video, masks) for vid, video, masks, _ in suite]

print(f"{'video':<20} {'accepted':<9} reasons")
for verdict, (_, _, _, expected) in zip(curate_videos(items), suite):
    flag = "" if sorted(verdict.reasons) == sorted(expected) else "  <- UNEXPECTED"
    print(f"{verdict.video_id:<20} {str(verdict.accepted):<9} {verdict.reasons}{flag}")

# some interesting numbers the filters computed along the way
verdicts = curate_videos(items)
static = next(v for v in verdicts if v.video_id == "bad_static")
jitter = next(v for v in verdicts if v.video_id == "bad_jitter")
print(f"\nbad_static  motion stats: {static.stats['motion']}")
print(f"bad_jitter  motion stats: {jitter.stats['motion']}")

base = CurationThresholds()
print(f"\n{'loosen':<8} accepted")
for factor in (1.0, 1.5, 2.0, 3.0, 5.0):
    loose = curate_videos(items, thresholds=base.loosened(factor))
    accepted = sorted(v.video_id for v in loose if v.accepted)
    print(f"{factor:<8} {len(accepted)}/10  {accepted}")
