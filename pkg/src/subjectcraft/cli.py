"""Command-line operator surface: train / sample / eval / inspect.

Exit codes: 0 ok, 2 usage or configuration error, 3 numeric divergence,
4 corrupt artifact. The SUBJECTCRAFT_SEED environment variable, when set,
overrides the seed a run would otherwise use; the manifest records the
effective value.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .bundle import build_bundle, load_checkpoint
from .errors import ContainerFormatError, IncompatibleModelError, NumericDivergenceError
from .images import frames_in_dir, load_image, read_ppm, render_class_image, write_ppm
from .lora import load_adapters
from .metrics import PrecomputedEmbedder, compute_report, toy_embedder
from .model import ModelConfig
from .runconfig import load_train_settings
from .sampler import SamplerConfig, sample_video
from .training import (ADAPTERS_NAME, CHECKPOINT_NAME, LOSS_CSV_NAME,
                       make_regularization_set, train)
from . import container

ENV_SEED = "SUBJECTCRAFT_SEED"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{ENV_SEED} must be an integer, got {raw!r}") from None


def _write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# -- train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    settings = load_train_settings(args.config)
    seed_override = _env_seed()
    if seed_override is not None:
        settings.train.seed = seed_override
    cfg = settings.train

    prompt_words = [w for w in (settings.prompt + " " + settings.reg_prompt).lower().split()
                    if w != settings.subject_token]
    bundle = build_bundle(
        ModelConfig(schedule_steps=settings.schedule_steps),
        seed=cfg.seed,
        vocab_words=prompt_words + [settings.token_init],
    )
    bundle.encoder.register_token(settings.subject_token, settings.token_init)

    if settings.subject_images:
        images = [load_image(p, bundle.config.latent_channels) for p in settings.subject_images]
    else:
        images = [render_class_image(np.random.default_rng([cfg.seed, 1000001]))]
    reg_set = []
    if cfg.alpha > 0:
        reg_set = make_regularization_set(
            bundle.codec, cfg.reg_set_size, cfg.frames, settings.reg_prompt,
            seed=[cfg.seed, 1000002],
        )

    every = max(1, cfg.iterations // 10)
    started = time.time()

    def log(stats):
        if not settings.quiet and (stats.step % every == 0 or stats.step == 1):
            print(f"step {stats.step}/{cfg.iterations}  l_video={stats.l_video:.4f}  "
                  f"l_pr={stats.l_pr:.4f}  total={stats.total:.4f}")

    out = settings.out_dir
    train(bundle, images, [settings.prompt], reg_set, cfg, out_dir=out, log=log)

    manifest = {
        "command": "train",
        "config": {
            "learning_rate": cfg.learning_rate, "weight_decay": cfg.weight_decay,
            "alpha": cfg.alpha, "iterations": cfg.iterations, "frames": cfg.frames,
            "reg_set_size": cfg.reg_set_size, "rank": cfg.rank, "mode": cfg.mode,
            "prompt": settings.prompt, "reg_prompt": settings.reg_prompt,
            "subject_token": settings.subject_token, "token_init": settings.token_init,
            "schedule_steps": settings.schedule_steps,
            "subject_images": [str(p) for p in settings.subject_images],
        },
        "seed": cfg.seed,
        "outputs": {name: sha256_file(out / name)
                    for name in (CHECKPOINT_NAME, ADAPTERS_NAME, LOSS_CSV_NAME)},
        "created_utc": _utc_now(),
        "duration_s": round(time.time() - started, 3),
        "format_version": 1,
    }
    _write_manifest(out / "manifest.json", manifest)
    if not settings.quiet:
        print(f"wrote {out / CHECKPOINT_NAME}, {out / ADAPTERS_NAME}, "
              f"{out / LOSS_CSV_NAME}, {out / 'manifest.json'}")
    return 0


# -- sample --------------------------------------------------------------------

def _run_sample(checkpoint, adapters_path, prompt, uncond_prompt, config: SamplerConfig,
                out_dir: Path, quiet: bool) -> int:
    bundle = load_checkpoint(checkpoint)
    adapters = load_adapters(adapters_path, bundle.model)
    started = time.time()
    result = sample_video(bundle, adapters, prompt, config, uncond_prompt=uncond_prompt or None)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_names = []
    for i in range(result.latent.shape[0]):
        pixels = bundle.codec.decode(result.latent[i])
        name = f"frame_{i:04d}.ppm"
        write_ppm(out_dir / name, pixels)
        frame_names.append(name)
    manifest = {
        "command": "sample",
        "config": {
            "T": config.steps, "K": config.k, "lambda_s": config.lambda_s,
            "lambda_l": config.lambda_l, "cfg": config.guidance_scale,
            "frames": config.frames, "prompt": prompt, "uncond_prompt": uncond_prompt or "",
        },
        "seed": config.seed,
        "per_step_lora_scale": result.scales,
        "inputs": {
            "checkpoint": {"path": str(Path(checkpoint).resolve()), "sha256": sha256_file(checkpoint)},
            "adapters": {"path": str(Path(adapters_path).resolve()), "sha256": sha256_file(adapters_path)},
        },
        "outputs": {name: sha256_file(out_dir / name) for name in frame_names},
        "created_utc": _utc_now(),
        "duration_s": round(time.time() - started, 3),
        "format_version": 1,
    }
    _write_manifest(out_dir / "manifest.json", manifest)
    if not quiet:
        print(f"wrote {len(frame_names)} frames and manifest.json to {out_dir}")
    return 0


def cmd_sample(args) -> int:
    if args.replay:
        with open(args.replay, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("command") != "sample":
            raise ValueError(f"{args.replay} is not a sample manifest")
        cfg = manifest["config"]
        inputs = manifest["inputs"]
        for role in ("checkpoint", "adapters"):
            recorded = inputs[role]
            actual = sha256_file(recorded["path"])
            if actual != recorded["sha256"]:
                raise ValueError(
                    f"{role} file {recorded['path']} hash mismatch: manifest says "
                    f"{recorded['sha256'][:12]}..., file is {actual[:12]}..."
                )
        config = SamplerConfig(
            steps=int(cfg["T"]), guidance_scale=float(cfg["cfg"]),
            lambda_s=float(cfg["lambda_s"]), lambda_l=float(cfg["lambda_l"]),
            k=int(cfg["K"]), seed=int(manifest["seed"]), frames=int(cfg["frames"]),
        )
        return _run_sample(inputs["checkpoint"]["path"], inputs["adapters"]["path"],
                           cfg["prompt"], cfg["uncond_prompt"], config,
                           Path(args.out), args.quiet)

    for name in ("checkpoint", "adapters", "prompt"):
        if getattr(args, name) is None:
            raise ValueError(f"--{name} is required (unless --replay is used)")
    seed = args.seed
    seed_override = _env_seed()
    if seed_override is not None:
        seed = seed_override
    config = SamplerConfig(
        steps=args.T, guidance_scale=args.cfg, lambda_s=args.lambda_s,
        lambda_l=args.lambda_l, k=args.K, seed=seed, frames=args.frames,
    )
    return _run_sample(args.checkpoint, args.adapters, args.prompt, args.uncond_prompt,
                       config, Path(args.out), args.quiet)


# -- eval ----------------------------------------------------------------------

def _make_embedder(spec: str, default_seed: int):
    if spec == "toy":
        return toy_embedder(default_seed)
    if spec.startswith("precomputed:"):
        return PrecomputedEmbedder(spec.split(":", 1)[1])
    raise ValueError(f"unknown embedder {spec!r}; expected 'toy' or 'precomputed:<path>'")


def cmd_eval(args) -> int:
    frame_files = frames_in_dir(args.frames_dir)
    if not frame_files:
        raise ValueError(f"no .ppm frames found in {args.frames_dir}")
    if len(frame_files) < 2:
        raise ValueError("temporal_consistency needs at least 2 frames")
    target_files = frames_in_dir(args.targets_dir)
    if not target_files:
        raise ValueError(f"no .ppm target images found in {args.targets_dir}")
    frames = [read_ppm(p) for p in frame_files]
    targets = [read_ppm(p) for p in target_files]
    embedder = _make_embedder(args.embedder, args.embedder_seed)
    second = _make_embedder(args.dino_embedder, args.embedder_seed + 1)
    report = compute_report(frames, targets, args.prompt, embedder, second)
    line = json.dumps(report.as_dict(), sort_keys=True)
    print(line)
    if args.json:
        Path(args.json).write_text(line + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.csv_row() + "\n", encoding="utf-8")
    return 0


# -- inspect -------------------------------------------------------------------

def cmd_inspect(args) -> int:
    header = container.read_header(args.artifact)
    kind = header["format"]
    print(f"format: {kind} (version {header['format_version']})")
    if kind == container.FORMAT_CHECKPOINT:
        model = header["model"]
        print(f"schedule: kind={header['schedule']['kind']} T={header['schedule']['steps']}")
        print(f"latent channels: {model['latent_channels']}  width: {model['width']}  "
              f"cond_dim: {model['cond_dim']}  spatial blocks: {model['spatial_blocks']}")
        print(f"codec scale/shift per channel: {header['codec']['scale']} / {header['codec']['shift']}")
        text = header["text"]
        print(f"vocabulary: {len(text['vocabulary'])} words, "
              f"learned token ids: {text['learned_token_ids']}")
        print(f"parameters: {len(header['params'])} arrays, payload {header['payload_bytes']} bytes")
    elif kind == container.FORMAT_ADAPTERS:
        print(f"mode: {header['mode']}  rank: {header['rank']}  lora_scale: {header['lora_scale']}")
        targets = header["targets"]
        print(f"targets: {len(targets)}")
        for entry in targets:
            print(f"  {entry['id']}  a={tuple(entry['a'])} b={tuple(entry['b'])}")
    else:
        raise ContainerFormatError(f"{args.artifact}: unknown container format {kind!r}")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subjectcraft",
        description="Desk-scale subject-customized video diffusion: train adapters, "
                    "sample with a two-phase adapter strength schedule, evaluate, inspect.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run subject learning from a config file")
    p_train.add_argument("config", help="flat key = value config file")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="generate video frames with trained adapters")
    p_sample.add_argument("--checkpoint", help="model checkpoint file")
    p_sample.add_argument("--adapters", help="adapter file")
    p_sample.add_argument("--prompt", help="text prompt (should mention the subject token)")
    p_sample.add_argument("--uncond-prompt", default="", help="guidance negative prompt (default: empty)")
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--T", type=int, default=50, help="denoising steps")
    p_sample.add_argument("--K", type=int, default=5, help="early steps sampled at --lambda-s")
    p_sample.add_argument("--lambda-s", type=float, default=0.4, dest="lambda_s",
                          help="adapter strength for the first K steps")
    p_sample.add_argument("--lambda-l", type=float, default=0.8, dest="lambda_l",
                          help="adapter strength after the switch")
    p_sample.add_argument("--cfg", type=float, default=12.0, help="guidance scale")
    p_sample.add_argument("--frames", type=int, default=8)
    p_sample.add_argument("--out", required=True, help="output directory for frames + manifest")
    p_sample.add_argument("--replay", help="re-run a recorded sample manifest bit-exactly")
    p_sample.add_argument("--quiet", action="store_true")
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="compute metrics over generated frames")
    p_eval.add_argument("--frames-dir", required=True)
    p_eval.add_argument("--targets-dir", required=True)
    p_eval.add_argument("--prompt", required=True)
    p_eval.add_argument("--embedder", default="toy", help="'toy' or 'precomputed:<path>'")
    p_eval.add_argument("--dino-embedder", default="toy", dest="dino_embedder",
                        help="second-role embedder, same syntax")
    p_eval.add_argument("--embedder-seed", type=int, default=7)
    p_eval.add_argument("--csv", help="write the metric values as one CSV line here")
    p_eval.add_argument("--json", help="also write the JSON report here")
    p_eval.set_defaults(func=cmd_eval)

    p_inspect = sub.add_parser("inspect", help="print a container header without loading payloads")
    p_inspect.add_argument("artifact")
    p_inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, IncompatibleModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericDivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return 3
    except ContainerFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
