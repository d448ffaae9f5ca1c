"""Metric harness over the generated frames.

Scores the frames from demo 05 against the training subject image: text
alignment, subject similarity under two independent toy embedders, and
temporal consistency.

Run demos/04_train_subject.py and demos/05_generate.py first.
"""

import json
from pathlib import Path

from subjectcraft import compute_report, read_ppm, toy_embedder
from subjectcraft.images import frames_in_dir

run_dir = Path(__file__).parent / "_runs" / "subject"
frames_dir = run_dir / "frames"
if not frames_dir.exists():
    raise SystemExit("no generated frames; run demos/05_generate.py first")

frames = [read_ppm(p) for p in frames_in_dir(frames_dir)]
target = read_ppm(run_dir / "subject.ppm")
prompt = "a photo of v* ball"

report = compute_report(frames, [target], prompt, toy_embedder(7), toy_embedder(8))
print(f"{len(frames)} frames vs 1 target image, prompt {prompt!r}")
print(json.dumps(report.as_dict(), indent=2))
print("\n(toy embedders stand in for pretrained vision models; see README for")
print("plugging precomputed real-model vectors into the same interface)")
