import numpy as np
import pytest

from subjectcraft import (DenoiserModel, IncompatibleModelError, LoraAdapter, ModelConfig,
                          attach_adapters, load_adapters, lora_delta, merge_weights,
                          save_adapters, set_scale)

from conftest import TINY_CONFIG


def tiny_model(seed=0):
    return DenoiserModel.build(TINY_CONFIG, seed=seed)


def rand_inputs(seed=0):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, 2, 2, TINY_CONFIG.latent_channels))
    cond = rng.standard_normal((3, TINY_CONFIG.cond_dim)) * 0.5
    return z, cond


def nonzero_adapters(model, seed=5, rank=2):
    adapters = attach_adapters(model, rank=rank, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for ad in adapters.adapters.values():
        ad.b[...] = (rng.standard_normal(ad.b.shape) * 0.1).astype(np.float32)
    return adapters


# -- attach ---------------------------------------------------------------------

def test_attach_counts_per_mode():
    model = tiny_model()
    both = attach_adapters(model, rank=2, mode="cross_and_self")
    assert len(both) == 12  # 2 blocks x 2 sublayers x q/k/v
    cross = attach_adapters(model, rank=2, mode="cross_only")
    assert len(cross) == 6


def test_attach_target_discipline():
    model = tiny_model()
    both = attach_adapters(model, rank=2, mode="cross_and_self")
    expected = {
        f"spatial.{i}.{sub}.{proj}"
        for i in range(TINY_CONFIG.spatial_blocks)
        for sub in ("self_attn", "cross_attn")
        for proj in ("w_q", "w_k", "w_v")
    }
    assert set(both.adapters) == expected
    cross = attach_adapters(model, rank=2, mode="cross_only")
    cross_expected = {t for t in expected if ".cross_attn." in t}
    assert set(cross.adapters) == cross_expected
    assert cross_expected < expected
    assert not any(".temporal." in t or t.endswith(".w_o") for t in expected)


def test_attach_initialization_contract():
    model = tiny_model()
    adapters = attach_adapters(model, rank=3, seed=9)
    for ad in adapters.adapters.values():
        assert np.all(ad.b == 0.0)
        assert np.all(np.abs(ad.a) <= 0.01)
        assert ad.rank == 3
    again = attach_adapters(model, rank=3, seed=9)
    for tid in adapters.adapters:
        assert np.array_equal(adapters.adapters[tid].a, again.adapters[tid].a)


def test_attach_fresh_is_noop():
    model = tiny_model()
    z, cond = rand_inputs()
    base = model.forward(z, cond, 3)
    adapters = attach_adapters(model, rank=2)
    attached = model.forward(z, cond, 3, adapters=adapters, lora_scale=1.0)
    assert np.max(np.abs(attached - base)) < 1e-6


def test_attach_rank_too_large_names_target():
    model = tiny_model()  # all projections are 8-wide
    with pytest.raises(ValueError, match="spatial.0.self_attn.w_q"):
        attach_adapters(model, rank=8)
    with pytest.raises(ValueError):
        attach_adapters(model, rank=0)


# -- delta ----------------------------------------------------------------------

def test_lora_delta_hand_oracle():
    adapter = LoraAdapter("t", a=np.array([[0.0, 1.0]]), b=np.array([[1.0], [0.0]]))
    x = np.array([1.0, 2.0])
    delta = lora_delta(x, adapter, 0.5)
    assert np.allclose(delta, [1.0, 0.0], atol=1e-15)
    w0 = np.eye(2)
    assert np.allclose(x @ w0 + delta, [2.0, 2.0], atol=1e-15)


def test_lora_delta_zero_cases():
    adapter = LoraAdapter("t", a=np.array([[0.5, 0.25]]), b=np.array([[1.0], [2.0]]))
    x = np.array([1.0, 2.0])
    assert np.all(lora_delta(x, adapter, 0.0) == 0.0)
    zero_b = LoraAdapter("t", a=adapter.a, b=np.zeros_like(adapter.b))
    assert np.all(lora_delta(x, zero_b, 1.0) == 0.0)


def test_lora_delta_scale_linearity():
    rng = np.random.default_rng(3)
    adapter = LoraAdapter("t", a=rng.standard_normal((2, 6)), b=rng.standard_normal((5, 2)))
    x = rng.standard_normal((4, 6))
    for lam in (0.1, 0.25, 0.5):
        d1 = lora_delta(x, adapter, lam)
        d2 = lora_delta(x, adapter, 2 * lam)
        assert np.max(np.abs(d2 - 2 * d1)) < 1e-9


def test_lora_delta_dimension_mismatch():
    adapter = LoraAdapter("t", a=np.array([[0.0, 1.0]]), b=np.array([[1.0], [0.0]]))
    with pytest.raises(ValueError):
        lora_delta(np.zeros(3), adapter, 1.0)


def test_adapter_rank_invariant():
    with pytest.raises(ValueError):
        LoraAdapter("t", a=np.zeros((2, 2)), b=np.zeros((2, 2)))  # rank == min dim


# -- scale control ----------------------------------------------------------------

def test_set_scale_reads_back_and_is_idempotent():
    model = tiny_model()
    adapters = attach_adapters(model, rank=2)
    set_scale(adapters, 0.4)
    assert adapters.lora_scale == 0.4
    mats = {t: (ad.a.copy(), ad.b.copy()) for t, ad in adapters.adapters.items()}
    set_scale(adapters, 0.8)
    set_scale(adapters, 0.8)
    assert adapters.lora_scale == 0.8
    for t, ad in adapters.adapters.items():
        assert np.array_equal(ad.a, mats[t][0]) and np.array_equal(ad.b, mats[t][1])


def test_set_scale_zero_restores_base_outputs():
    model = tiny_model()
    adapters = nonzero_adapters(model)
    z, cond = rand_inputs(2)
    base = model.forward(z, cond, 4)
    set_scale(adapters, 0.0)
    out = model.forward(z, cond, 4, adapters=adapters)  # scale from the set
    assert np.max(np.abs(out - base)) < 1e-6


def test_set_scale_rejects_out_of_range():
    model = tiny_model()
    adapters = attach_adapters(model, rank=2)
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(ValueError):
            set_scale(adapters, bad)


# -- merge ------------------------------------------------------------------------

def test_merge_zero_scale_is_weight_identical():
    model = tiny_model()
    adapters = nonzero_adapters(model)
    adapters.set_scale(0.0)
    merged = merge_weights(model, adapters)
    for name in model.params.names():
        assert np.array_equal(merged.params[name], model.params[name])


def test_merge_single_projection_hand_oracle():
    cfg = ModelConfig(latent_channels=1, width=2, cond_dim=2, spatial_blocks=1,
                      schedule_steps=4)
    model = DenoiserModel.build(cfg, seed=0)
    target = "spatial.0.self_attn.w_q"
    model.params[target] = np.eye(2, dtype=np.float32)
    adapters = attach_adapters(model, rank=1, seed=0)
    adapters.adapters[target].a[...] = np.array([[0.0, 1.0]], dtype=np.float32)
    adapters.adapters[target].b[...] = np.array([[1.0], [0.0]], dtype=np.float32)
    adapters.set_scale(0.5)
    merged = merge_weights(model, adapters)
    # row-convention W0 + scale * a.T @ b.T
    assert np.array_equal(merged.params[target],
                          np.array([[1.0, 0.0], [0.5, 1.0]], dtype=np.float32))


def test_merge_matches_runtime_on_random_inputs():
    model = tiny_model(seed=11)
    adapters = nonzero_adapters(model, seed=21)
    rng = np.random.default_rng(0)
    for lam in (0.0, 0.4, 0.8, 1.0):
        adapters.set_scale(lam)
        merged = merge_weights(model, adapters)
        for _ in range(20):
            z = rng.standard_normal((2, 2, 2, TINY_CONFIG.latent_channels))
            cond = rng.standard_normal((3, TINY_CONFIG.cond_dim)) * 0.5
            runtime = model.forward(z, cond, 5, adapters=adapters)
            materialized = merged.forward(z, cond, 5)
            assert np.max(np.abs(runtime - materialized)) < 1e-5


def test_merge_rejects_detached_set():
    model = tiny_model()
    other = DenoiserModel.build(ModelConfig(), seed=0)  # different widths
    adapters = attach_adapters(other, rank=4)
    with pytest.raises(IncompatibleModelError):
        merge_weights(model, adapters)


# -- serialization -----------------------------------------------------------------

def test_save_load_round_trip_bitwise(tmp_path):
    model = tiny_model()
    adapters = nonzero_adapters(model)
    adapters.set_scale(0.4)
    path = tmp_path / "adapters.bin"
    save_adapters(adapters, path)
    loaded = load_adapters(path, model)
    assert loaded.mode == adapters.mode
    assert loaded.rank == adapters.rank
    assert loaded.lora_scale == adapters.lora_scale
    for tid, ad in adapters.adapters.items():
        assert np.array_equal(loaded.adapters[tid].a, ad.a)
        assert np.array_equal(loaded.adapters[tid].b, ad.b)


def test_two_saves_are_byte_identical(tmp_path):
    model = tiny_model()
    adapters = nonzero_adapters(model)
    p1, p2 = tmp_path / "a1.bin", tmp_path / "a2.bin"
    save_adapters(adapters, p1)
    save_adapters(adapters, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_against_model_missing_target_names_it(tmp_path):
    model = tiny_model()
    adapters = attach_adapters(model, rank=2)
    path = tmp_path / "adapters.bin"
    save_adapters(adapters, path)
    smaller = DenoiserModel.build(
        ModelConfig(latent_channels=1, width=8, cond_dim=8, spatial_blocks=1,
                    schedule_steps=10), seed=0)
    with pytest.raises(IncompatibleModelError, match="spatial.1"):
        load_adapters(path, smaller)
