"""Two-phase sampling with the trained adapters.

Loads the artifacts from demo 04 and generates the same seed three ways:
adapter strength scheduled (weak for the first K steps, then strong), and
constant at each of the two strengths. The scheduled run shares its first K
latents with the weak-constant run, then breaks away to restore the subject.

Run demos/04_train_subject.py first.
"""

from pathlib import Path

import numpy as np

from subjectcraft import SamplerConfig, load_adapters, load_checkpoint, sample_video, write_ppm

run_dir = Path(__file__).parent / "_runs" / "subject"
if not (run_dir / "checkpoint.bin").exists():
    raise SystemExit("no trained artifacts found; run demos/04_train_subject.py first")

bundle = load_checkpoint(run_dir / "checkpoint.bin")
adapters = load_adapters(run_dir / "adapters.bin", bundle.model)
prompt = "a photo of v* ball"

config = SamplerConfig(steps=50, k=5, lambda_s=0.4, lambda_l=0.8, seed=42, frames=8)
print(f"sampling {config.frames} frames, T={config.steps}, switch after K={config.k} steps")

dynamic = sample_video(bundle, adapters, prompt, config, keep_trajectory=True)
weak = sample_video(bundle, adapters, prompt,
                    SamplerConfig(steps=50, k=50, lambda_s=0.4, lambda_l=0.4, seed=42, frames=8),
                    keep_trajectory=True)
strong = sample_video(bundle, adapters, prompt,
                      SamplerConfig(steps=50, k=0, lambda_s=0.8, lambda_l=0.8, seed=42, frames=8),
                      keep_trajectory=True)

print(f"per-step strengths: {dynamic.scales[:7]} ... (switch at index {config.k})")
print("\nlatent distance of the scheduled run to each constant run, along the way:")
for i in (0, 4, 5, 10, 30, 49):
    d_weak = np.sqrt(np.mean((dynamic.trajectory[i] - weak.trajectory[i]) ** 2))
    d_strong = np.sqrt(np.mean((dynamic.trajectory[i] - strong.trajectory[i]) ** 2))
    print(f"  after step {i + 1:2d}:  vs weak {d_weak:.2e}   vs strong {d_strong:.2e}")
print("(identical to the weak run through step K, then it leaves both)")

frames_dir = run_dir / "frames"
frames_dir.mkdir(exist_ok=True)
for i in range(dynamic.latent.shape[0]):
    write_ppm(frames_dir / f"frame_{i:04d}.ppm", bundle.codec.decode(dynamic.latent[i]))
print(f"\nwrote {dynamic.latent.shape[0]} frames to {frames_dir}")
