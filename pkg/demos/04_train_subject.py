"""Subject learning end to end.

Renders one synthetic subject image, turns it into a still video, and runs
the optimization loop: adapters on all spatial attention projections plus the
subject token row, against the combined subject + class-regularization loss.
Artifacts land in demos/_runs/subject for the sampling and evaluation demos.
"""

from pathlib import Path

import numpy as np

from subjectcraft import (TrainConfig, build_bundle, make_regularization_set,
                          render_class_image, train, write_ppm)

SEED = 0
PROMPT = "a photo of v* ball"
REG_PROMPT = "a photo of a ball"
out_dir = Path(__file__).parent / "_runs" / "subject"

bundle = build_bundle(seed=SEED, vocab_words=["photo"])
bundle.encoder.register_token("v*", "ball")

subject_image = render_class_image(np.random.default_rng([SEED, 1000001]))
out_dir.mkdir(parents=True, exist_ok=True)
write_ppm(out_dir / "subject.ppm", subject_image)

config = TrainConfig(learning_rate=1e-2, iterations=150, seed=SEED)
reg_set = make_regularization_set(bundle.codec, config.reg_set_size, config.frames,
                                  REG_PROMPT, seed=[SEED, 1000002])

print(f"training for {config.iterations} steps (subject prompt: {PROMPT!r})")
result = train(bundle, [subject_image], [PROMPT], reg_set, config, out_dir=out_dir,
               log=lambda s: s.step % 25 == 0 and print(
                   f"  step {s.step:3d}  l_video={s.l_video:.4f}  l_pr={s.l_pr:.4f}  "
                   f"total={s.total:.4f}"))

lv = [s.l_video for s in result.history]
print(f"\nsmoothed subject loss: {np.mean(lv[:20]):.3f} (first 20) -> "
      f"{np.mean(lv[-20:]):.3f} (last 20)")
print(f"artifacts in {out_dir}: checkpoint.bin, adapters.bin, loss.csv, subject.ppm")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.figure(figsize=(5, 3))
    plt.plot([s.step for s in result.history], lv, label="subject term", lw=0.8)
    plt.plot([s.step for s in result.history], [s.l_pr for s in result.history],
             label="prior term", lw=0.8)
    plt.xlabel("step")
    plt.ylabel("loss")
    plt.legend()
    plt.tight_layout()
    plt.savefig(out_dir / "loss.png", dpi=120)
    print(f"wrote {out_dir / 'loss.png'}")
except ImportError:
    pass
