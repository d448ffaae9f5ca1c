"""Noise schedule and deterministic denoising, step by step.

Builds the linear signal-coefficient schedule, corrupts a latent to a few
timesteps, and shows that one deterministic update with the true noise walks
the corruption back exactly one step.
"""

import numpy as np

from subjectcraft import build_noise_schedule, ddim_step, forward_noise

sched = build_noise_schedule(50)
print("schedule over 50 steps")
print(f"  t=1  signal={sched.signal(1):.4f} noise={sched.noise(1):.6f}")
print(f"  t=25 signal={sched.signal(25):.4f} noise={sched.noise(25):.6f}")
print(f"  t=50 signal={sched.signal(50):.4f} noise={sched.noise(50):.6f}")
identity = np.max(np.abs(sched.signal_coef**2 + sched.noise_coef**2 - 1.0))
print(f"  max |signal^2 + noise^2 - 1| = {identity:.2e}")

rng = np.random.default_rng(0)
z0 = rng.standard_normal((4, 8, 8, 4))
eps = rng.standard_normal(z0.shape)

print("\ncorruption level grows with t (RMS of z_t - z0):")
for t in (1, 10, 25, 40, 50):
    z_t = forward_noise(z0, t, eps, sched)
    print(f"  t={t:2d}  rms={np.sqrt(np.mean((z_t - z0)**2)):.3f}")

print("\none deterministic update with the true noise inverts one noising step:")
for t in (50, 25, 2):
    z_t = forward_noise(z0, t, eps, sched)
    back = ddim_step(z_t, eps, t, sched)
    want = forward_noise(z0, t - 1, eps, sched)
    print(f"  t={t:2d} -> {t-1:2d}  max dev {np.max(np.abs(back - want)):.2e}")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out = Path(__file__).parent / "_out"
    out.mkdir(exist_ok=True)
    ts = np.arange(1, 51)
    plt.figure(figsize=(5, 3))
    plt.plot(ts, sched.signal_coef, label="signal coef")
    plt.plot(ts, sched.noise_coef, label="noise coef")
    plt.xlabel("t")
    plt.legend()
    plt.tight_layout()
    plt.savefig(out / "schedule.png", dpi=120)
    print(f"\nwrote {out / 'schedule.png'}")
except ImportError:
    pass
