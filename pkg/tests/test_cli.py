import json

import numpy as np
import pytest

from subjectcraft.cli import main
from subjectcraft import write_ppm, render_class_image

BASE_CONFIG = """\
# desk-scale smoke training run
prompt = a photo of v* ball
reg_prompt = a photo of a ball
subject_token = v*
token_init = ball
out_dir = {out_dir}
seed = 7
learning_rate = 0.01
iterations = {iterations}
frames = 2
reg_set_size = 2
rank = 2
quiet = true
"""


def write_config(tmp_path, name="train.cfg", out_dir="run", iterations=6, extra=""):
    cfg = tmp_path / name
    cfg.write_text(BASE_CONFIG.format(out_dir=out_dir, iterations=iterations) + extra)
    return cfg


@pytest.fixture(scope="session")
def cli_artifacts(tmp_path_factory):
    """One short CLI training run shared by the sample/eval/inspect tests."""
    root = tmp_path_factory.mktemp("cli_train")
    cfg = write_config(root, iterations=10)
    assert main(["train", str(cfg)]) == 0
    out = root / "run"
    return {
        "checkpoint": out / "checkpoint.bin",
        "adapters": out / "adapters.bin",
        "out": out,
    }


# -- train -----------------------------------------------------------------------

def test_train_writes_all_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["train", str(cfg)]) == 0
    out = tmp_path / "run"
    for name in ("checkpoint.bin", "adapters.bin", "loss.csv", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 7


def test_train_alpha_without_reg_set_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="alpha = 1.0\n")
    text = cfg.read_text().replace("reg_set_size = 2", "reg_set_size = 0")
    cfg.write_text(text)
    assert main(["train", str(cfg)]) == 2
    assert "reg_set" in capsys.readouterr().err


def test_train_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="turbo = yes\n")
    assert main(["train", str(cfg)]) == 2
    assert "turbo" in capsys.readouterr().err


def test_train_prompt_must_mention_subject_token(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("prompt = a photo of v* ball",
                                           "prompt = a photo of a ball"))
    assert main(["train", str(cfg)]) == 2
    assert "subject token" in capsys.readouterr().err


def test_train_divergence_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, iterations=4)
    cfg.write_text(cfg.read_text().replace("learning_rate = 0.01",
                                           "learning_rate = 1e30"))
    assert main(["train", str(cfg)]) == 3
    assert "diverged" in capsys.readouterr().err


def test_train_reruns_are_byte_identical(tmp_path):
    cfg_a = write_config(tmp_path, name="a.cfg", out_dir="run_a")
    cfg_b = write_config(tmp_path, name="b.cfg", out_dir="run_b")
    assert main(["train", str(cfg_a)]) == 0
    assert main(["train", str(cfg_b)]) == 0
    for name in ("checkpoint.bin", "adapters.bin", "loss.csv"):
        assert (tmp_path / "run_a" / name).read_bytes() == (tmp_path / "run_b" / name).read_bytes()


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    cfg_env = write_config(tmp_path, name="env.cfg", out_dir="run_env")
    monkeypatch.setenv("SUBJECTCRAFT_SEED", "21")
    assert main(["train", str(cfg_env)]) == 0
    manifest = json.loads((tmp_path / "run_env" / "manifest.json").read_text())
    assert manifest["seed"] == 21
    monkeypatch.delenv("SUBJECTCRAFT_SEED")
    explicit = write_config(tmp_path, name="explicit.cfg", out_dir="run_explicit")
    explicit.write_text(explicit.read_text().replace("seed = 7", "seed = 21"))
    assert main(["train", str(explicit)]) == 0
    assert ((tmp_path / "run_env" / "adapters.bin").read_bytes()
            == (tmp_path / "run_explicit" / "adapters.bin").read_bytes())


# -- sample ----------------------------------------------------------------------

def sample_args(art, out, **over):
    flags = {"--seed": 3, "--T": 8, "--K": 2, "--frames": 2}
    flags.update(over)
    argv = ["sample", "--checkpoint", str(art["checkpoint"]), "--adapters", str(art["adapters"]),
            "--prompt", "a photo of v* ball", "--out", str(out), "--quiet"]
    for k, v in flags.items():
        argv += [k, str(v)]
    return argv


def test_sample_defaults_recorded_in_manifest(cli_artifacts, tmp_path):
    out = tmp_path / "frames"
    argv = ["sample", "--checkpoint", str(cli_artifacts["checkpoint"]),
            "--adapters", str(cli_artifacts["adapters"]),
            "--prompt", "a photo of v* ball", "--out", str(out), "--quiet"]
    assert main(argv) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = manifest["config"]
    assert (cfg["T"], cfg["K"], cfg["lambda_s"], cfg["lambda_l"], cfg["cfg"]) == (
        50, 5, 0.4, 0.8, 12.0)
    assert len(manifest["per_step_lora_scale"]) == 50
    assert manifest["per_step_lora_scale"][:5] == [0.4] * 5
    assert set(manifest["per_step_lora_scale"][5:]) == {0.8}
    frames = sorted(p.name for p in out.glob("frame_*.ppm"))
    assert frames == [f"frame_{i:04d}.ppm" for i in range(8)]


def test_sample_k_beyond_t_exits_2(cli_artifacts, tmp_path, capsys):
    argv = sample_args(cli_artifacts, tmp_path / "f", **{"--K": 60, "--T": 50})
    assert main(argv) == 2
    assert "K must satisfy" in capsys.readouterr().err


def test_sample_deterministic_and_replayable(cli_artifacts, tmp_path):
    out1, out2, out3 = (tmp_path / n for n in ("s1", "s2", "replay"))
    assert main(sample_args(cli_artifacts, out1)) == 0
    assert main(sample_args(cli_artifacts, out2)) == 0
    frames = [p.name for p in sorted(out1.glob("frame_*.ppm"))]
    assert frames
    for name in frames:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    assert main(["sample", "--replay", str(out1 / "manifest.json"),
                 "--out", str(out3), "--quiet"]) == 0
    for name in frames:
        assert (out3 / name).read_bytes() == (out1 / name).read_bytes()
    m1 = json.loads((out1 / "manifest.json").read_text())
    m3 = json.loads((out3 / "manifest.json").read_text())
    assert m1["outputs"] == m3["outputs"]


def test_sample_replay_detects_input_drift(cli_artifacts, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(sample_args(cli_artifacts, out)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["inputs"]["adapters"]["sha256"] = "0" * 64
    drifted = tmp_path / "drifted.json"
    drifted.write_text(json.dumps(manifest))
    assert main(["sample", "--replay", str(drifted), "--out", str(tmp_path / "r"), "--quiet"]) == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_sample_env_seed_override(cli_artifacts, tmp_path, monkeypatch):
    out_env = tmp_path / "env"
    monkeypatch.setenv("SUBJECTCRAFT_SEED", "77")
    assert main(sample_args(cli_artifacts, out_env, **{"--seed": 3})) == 0
    monkeypatch.delenv("SUBJECTCRAFT_SEED")
    out_explicit = tmp_path / "explicit"
    assert main(sample_args(cli_artifacts, out_explicit, **{"--seed": 77})) == 0
    for p in sorted(out_env.glob("frame_*.ppm")):
        assert p.read_bytes() == (out_explicit / p.name).read_bytes()


# -- eval ------------------------------------------------------------------------

def test_eval_on_copies_of_target(tmp_path, capsys):
    frames_dir = tmp_path / "frames"
    targets_dir = tmp_path / "targets"
    frames_dir.mkdir()
    targets_dir.mkdir()
    img = render_class_image(5)
    write_ppm(targets_dir / "target.ppm", img)
    for i in range(3):
        write_ppm(frames_dir / f"frame_{i:04d}.ppm", img)
    assert main(["eval", "--frames-dir", str(frames_dir), "--targets-dir", str(targets_dir),
                 "--prompt", "a toy ball"]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["clip_i"] == pytest.approx(1.0, abs=1e-9)
    assert report["t_cons"] == pytest.approx(1.0, abs=1e-9)
    assert -1.0 <= report["clip_t"] <= 1.0
    assert -1.0 <= report["dino_i"] <= 1.0


def test_eval_csv_and_json_outputs(tmp_path, capsys):
    frames_dir = tmp_path / "frames"
    targets_dir = tmp_path / "targets"
    frames_dir.mkdir()
    targets_dir.mkdir()
    img = render_class_image(6)
    write_ppm(targets_dir / "t.ppm", img)
    for i in range(2):
        write_ppm(frames_dir / f"frame_{i:04d}.ppm", img)
    csv_path = tmp_path / "report.csv"
    json_path = tmp_path / "report.json"
    assert main(["eval", "--frames-dir", str(frames_dir), "--targets-dir", str(targets_dir),
                 "--prompt", "a toy", "--csv", str(csv_path), "--json", str(json_path)]) == 0
    stdout_report = json.loads(capsys.readouterr().out.strip())
    assert json.loads(json_path.read_text()) == stdout_report
    row = csv_path.read_text().strip().split(",")
    assert len(row) == 4
    assert float(row[1]) == pytest.approx(stdout_report["clip_i"])


def test_eval_fewer_than_two_frames_exits_2(tmp_path, capsys):
    frames_dir = tmp_path / "frames"
    targets_dir = tmp_path / "targets"
    frames_dir.mkdir()
    targets_dir.mkdir()
    img = render_class_image(7)
    write_ppm(frames_dir / "frame_0000.ppm", img)
    write_ppm(targets_dir / "t.ppm", img)
    assert main(["eval", "--frames-dir", str(frames_dir), "--targets-dir", str(targets_dir),
                 "--prompt", "a toy"]) == 2
    assert "temporal_consistency" in capsys.readouterr().err


def test_eval_deterministic(tmp_path, capsys):
    frames_dir = tmp_path / "frames"
    targets_dir = tmp_path / "targets"
    frames_dir.mkdir()
    targets_dir.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        write_ppm(frames_dir / f"frame_{i:04d}.ppm", rng.uniform(size=(16, 16, 3)))
    write_ppm(targets_dir / "t.ppm", rng.uniform(size=(16, 16, 3)))
    argv = ["eval", "--frames-dir", str(frames_dir), "--targets-dir", str(targets_dir),
            "--prompt", "a ball", "--embedder-seed", "11"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_eval_missing_dir_exits_2(tmp_path):
    assert main(["eval", "--frames-dir", str(tmp_path / "none"),
                 "--targets-dir", str(tmp_path / "none2"), "--prompt", "x"]) == 2


# -- inspect ----------------------------------------------------------------------

def test_inspect_adapter_file_lists_targets(cli_artifacts, capsys):
    assert main(["inspect", str(cli_artifacts["adapters"])]) == 0
    out = capsys.readouterr().out
    assert "mode: cross_and_self" in out
    assert "targets: 12" in out
    assert "spatial.1.cross_attn.w_v" in out


def test_inspect_checkpoint_shows_schedule_and_shape(cli_artifacts, capsys):
    assert main(["inspect", str(cli_artifacts["checkpoint"])]) == 0
    out = capsys.readouterr().out
    assert "T=50" in out
    assert "latent channels: 4" in out


def test_inspect_truncated_file_exits_4(cli_artifacts, tmp_path, capsys):
    data = cli_artifacts["adapters"].read_bytes()
    bad = tmp_path / "truncated.bin"
    bad.write_bytes(data[:-40])
    assert main(["inspect", str(bad)]) == 4
    assert "corrupt" in capsys.readouterr().err


def test_unknown_flags_are_hard_errors(cli_artifacts, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(sample_args(cli_artifacts, tmp_path / "x") + ["--warp", "9"])
    assert exc.value.code == 2
