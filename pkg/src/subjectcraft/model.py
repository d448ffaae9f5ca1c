"""Tiny latent video denoiser: spatial transformer blocks (self- plus
cross-attention over the text condition) interleaved with temporal attention
over the frame axis, with a matching hand-written backward pass.

Array conventions
-----------------
* latent videos: ``(F, H, W, C)`` float arrays (frames, height, width, channels)
* condition embeddings: ``(L, D)`` float arrays (token count, embedding dim)
* projection weights: row-major ``(in_dim, out_dim)``, applied as ``x @ W``

Parameters live in float32 (the checkpoint payload dtype); activations follow
the dtype promotion of the latent input, which the rest of the package keeps
in float64. Forward passes are pure: adapters and their runtime strength are
per-call arguments, never mutations of model state, so disjoint calls can run
concurrently.

The backward pass returns gradients for every base parameter, every attached
adapter matrix, and the condition embedding; finite-difference tests exercise
all three groups.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .lora import AdapterSet

LN_EPS = 1e-5

# Initialization scale of the final projection; kept small so the untrained
# denoiser predicts near-zero noise.
OUT_PROJ_STD = 0.05


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 4
    width: int = 16
    cond_dim: int = 16
    spatial_blocks: int = 2
    schedule_steps: int = 50

    def __post_init__(self):
        for name in ("latent_channels", "width", "cond_dim", "spatial_blocks", "schedule_steps"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.width % 2 != 0:
            raise ValueError("width must be even (sinusoidal time embedding pairs sin/cos)")

    def as_dict(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "width": self.width,
            "cond_dim": self.cond_dim,
            "spatial_blocks": self.spatial_blocks,
            "schedule_steps": self.schedule_steps,
        }


class ParamStore:
    """Ordered name -> array mapping with stable identifiers."""

    def __init__(self):
        self._data: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._data:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._data[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._data:
            raise KeyError(f"unknown parameter {name!r}")
        self._data[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> list[str]:
        return list(self._data)

    def items(self):
        return self._data.items()

    @property
    def dtype(self):
        return next(iter(self._data.values())).dtype

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore()
        for name, value in self._data.items():
            out.add(name, value.astype(dtype) if dtype is not None else value.copy())
        return out

    def checksums(self) -> dict[str, str]:
        return {
            name: hashlib.sha256(np.ascontiguousarray(value).tobytes()).hexdigest()
            for name, value in self._data.items()
        }


def param_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...], float]]:
    """(name, shape, init scale) for every parameter, in build/serialization
    order. Attention norms use scale -1.0 as a marker for gamma=1/beta=0."""
    c, w, d = config.latent_channels, config.width, config.cond_dim
    spec: list[tuple[str, tuple[int, ...], float]] = [
        ("in_proj.weight", (c, w), 1.0 / np.sqrt(c)),
        ("in_proj.bias", (w,), 0.0),
        ("time_proj.weight", (w, w), 1.0 / np.sqrt(w)),
        ("time_proj.bias", (w,), 0.0),
    ]
    for i in range(config.spatial_blocks):
        for sub, kv_dim in ((f"spatial.{i}.self_attn", w), (f"spatial.{i}.cross_attn", d)):
            spec += [
                (f"{sub}.norm.gamma", (w,), -1.0),
                (f"{sub}.norm.beta", (w,), 0.0),
                (f"{sub}.w_q", (w, w), 1.0 / np.sqrt(w)),
                (f"{sub}.w_k", (kv_dim, w), 1.0 / np.sqrt(kv_dim)),
                (f"{sub}.w_v", (kv_dim, w), 1.0 / np.sqrt(kv_dim)),
                (f"{sub}.w_o", (w, w), 1.0 / np.sqrt(w)),
                (f"{sub}.b_o", (w,), 0.0),
            ]
        sub = f"temporal.{i}.attn"
        spec += [
            (f"{sub}.norm.gamma", (w,), -1.0),
            (f"{sub}.norm.beta", (w,), 0.0),
            (f"{sub}.w_q", (w, w), 1.0 / np.sqrt(w)),
            (f"{sub}.w_k", (w, w), 1.0 / np.sqrt(w)),
            (f"{sub}.w_v", (w, w), 1.0 / np.sqrt(w)),
            (f"{sub}.w_o", (w, w), 1.0 / np.sqrt(w)),
            (f"{sub}.b_o", (w,), 0.0),
        ]
    spec += [
        ("out_proj.weight", (w, c), OUT_PROJ_STD),
        ("out_proj.bias", (c,), 0.0),
    ]
    return spec


def sinusoid_embedding(t: int, dim: int) -> np.ndarray:
    """Fixed sin/cos embedding of an integer timestep, float64, shape (dim,)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


@dataclass
class Gradients:
    """Gradient buffers matching a model's parameters plus attached adapters
    and the condition embedding."""

    params: dict[str, np.ndarray]
    adapters: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    cond: np.ndarray | None = None

    def accumulate(self, other: "Gradients", weight: float = 1.0) -> "Gradients":
        for name, g in other.params.items():
            self.params[name] = self.params.get(name, 0.0) + weight * g
        for target, pair in other.adapters.items():
            mine = self.adapters.setdefault(target, {})
            for key, g in pair.items():
                mine[key] = mine.get(key, 0.0) + weight * g
        return self


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _ln_backward(dy, gamma, cache):
    xhat, inv = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _project(x, w, adapter, scale):
    """x @ w plus the adapter's low-rank residual; caches the rank-space
    activation for backward."""
    y = x @ w
    u = None
    if adapter is not None:
        u = x @ adapter.a.T
        y = y + scale * (u @ adapter.b.T)
    return y, u


def _mT(m):
    return m.T if m.ndim == 2 else m.transpose(0, 2, 1)


def _contract(x, dy):
    # Sum over all leading (batch/token) axes: (..., a), (..., b) -> (a, b).
    return np.tensordot(x, dy, axes=(tuple(range(x.ndim - 1)), tuple(range(dy.ndim - 1))))


def _sum_to(shape_ref, grad):
    # Reduce a broadcasted (B, S, d) gradient back to a (S, d) operand.
    if shape_ref.ndim == 2 and grad.ndim == 3:
        return grad.sum(axis=0)
    return grad


def _attn_forward(q_in, kv_in, weights, adapters_qkv, scale):
    wq, wk, wv, wo, bo = weights
    q, uq = _project(q_in, wq, adapters_qkv[0], scale)
    k, uk = _project(kv_in, wk, adapters_qkv[1], scale)
    v, uv = _project(kv_in, wv, adapters_qkv[2], scale)
    tau = 1.0 / np.sqrt(wq.shape[1])
    scores = (q @ _mT(k)) * tau
    scores -= scores.max(axis=-1, keepdims=True)
    expd = np.exp(scores)
    probs = expd / expd.sum(axis=-1, keepdims=True)
    ctx = probs @ v
    out = ctx @ wo + bo
    cache = {
        "q_in": q_in, "kv_in": kv_in, "q": q, "k": k, "v": v,
        "probs": probs, "ctx": ctx, "u": (uq, uk, uv), "tau": tau,
    }
    return out, cache


def _proj_backward(dy, x, w, adapter, scale, u, grads, name, adapter_grads):
    grads[name] = grads.get(name, 0.0) + _contract(x, dy)
    dx = dy @ w.T
    if adapter is not None:
        ga = adapter_grads.setdefault(adapter.target_id, {})
        ga["b"] = ga.get("b", 0.0) + scale * _contract(dy, u)
        du = scale * (dy @ adapter.b)
        ga["a"] = ga.get("a", 0.0) + _contract(du, x)
        dx = dx + du @ adapter.a
    return dx


def _attn_backward(dout, weights, adapters_qkv, scale, cache, grads, prefix, adapter_grads):
    wq, wk, wv, wo, bo = weights
    q_in, kv_in = cache["q_in"], cache["kv_in"]
    q, k, v = cache["q"], cache["k"], cache["v"]
    probs, ctx, tau = cache["probs"], cache["ctx"], cache["tau"]
    uq, uk, uv = cache["u"]

    grads[f"{prefix}.w_o"] = grads.get(f"{prefix}.w_o", 0.0) + _contract(ctx, dout)
    grads[f"{prefix}.b_o"] = grads.get(f"{prefix}.b_o", 0.0) + dout.sum(axis=tuple(range(dout.ndim - 1)))
    dctx = dout @ wo.T

    dprobs = dctx @ _mT(v)
    if v.ndim == 3:
        dv = _mT(probs) @ dctx
    else:
        dv = np.einsum("bqs,bqw->sw", probs, dctx)
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores = dscores * tau
    dq = dscores @ k
    if k.ndim == 3:
        dk = _mT(dscores) @ q
    else:
        dk = np.einsum("bqs,bqw->sw", dscores, q)

    dq_in = _proj_backward(dq, q_in, wq, adapters_qkv[0], scale, uq, grads, f"{prefix}.w_q", adapter_grads)
    dkv_k = _proj_backward(dk, kv_in, wk, adapters_qkv[1], scale, uk, grads, f"{prefix}.w_k", adapter_grads)
    dkv_v = _proj_backward(dv, kv_in, wv, adapters_qkv[2], scale, uv, grads, f"{prefix}.w_v", adapter_grads)
    return dq_in, dkv_k + dkv_v


class DenoiserModel:
    """Noise predictor over latent videos.

    Weights are immutable during a forward pass; training is the single
    writer. Every parameter has a stable identifier (see `param_spec`)
    usable for trainability masks, adapter targets, and checksums.
    """

    def __init__(self, config: ModelConfig, params: ParamStore):
        expected = param_spec(config)
        if params.names() != [name for name, _, _ in expected]:
            raise ValueError("parameter store does not match the model configuration")
        for name, shape, _ in expected:
            if tuple(params[name].shape) != shape:
                raise ValueError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: ModelConfig | None = None, seed=0) -> "DenoiserModel":
        config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        params = ParamStore()
        for name, shape, scale in param_spec(config):
            if scale == -1.0:
                value = np.ones(shape, dtype=np.float32)
            elif scale == 0.0:
                value = np.zeros(shape, dtype=np.float32)
            else:
                value = (rng.standard_normal(shape) * scale).astype(np.float32)
            params.add(name, value)
        return cls(config, params)

    @property
    def dtype(self):
        return self.params.dtype

    def copy(self, dtype=None) -> "DenoiserModel":
        return DenoiserModel(self.config, self.params.copy(dtype))

    def adapter_targets(self, mode: str) -> list[str]:
        """Ordered projection ids that adapters cover in the given mode."""
        subs = ("self_attn", "cross_attn") if mode == "cross_and_self" else ("cross_attn",)
        if mode not in ("cross_and_self", "cross_only"):
            raise ValueError(f"unknown adapter mode {mode!r}")
        targets = []
        for i in range(self.config.spatial_blocks):
            for sub in subs:
                for proj in ("w_q", "w_k", "w_v"):
                    targets.append(f"spatial.{i}.{sub}.{proj}")
        return targets

    def _attention_weights(self, prefix: str):
        p = self.params
        return (p[f"{prefix}.w_q"], p[f"{prefix}.w_k"], p[f"{prefix}.w_v"],
                p[f"{prefix}.w_o"], p[f"{prefix}.b_o"])

    def _adapters_for(self, prefix: str, adapters: AdapterSet | None):
        if adapters is None:
            return (None, None, None)
        return tuple(adapters.get(f"{prefix}.{proj}") for proj in ("w_q", "w_k", "w_v"))

    def _check_inputs(self, z, cond, t):
        z = np.asarray(z)
        cond = np.asarray(cond)
        if z.ndim != 4 or 0 in z.shape:
            raise ValueError(f"latent video must have shape (F, H, W, C), got {z.shape}")
        if not np.isfinite(z).all():
            raise ValueError("latent video contains non-finite entries")
        if z.shape[3] != self.config.latent_channels:
            raise ValueError(
                f"latent has {z.shape[3]} channels, model expects {self.config.latent_channels}"
            )
        if cond.ndim != 2 or cond.shape[0] < 1:
            raise ValueError(f"condition embedding must have shape (L, D), got {cond.shape}")
        if cond.shape[1] != self.config.cond_dim:
            raise ValueError(
                f"condition dim {cond.shape[1]} does not match model conditioning dim {self.config.cond_dim}"
            )
        if not np.isfinite(cond).all():
            raise ValueError("condition embedding contains non-finite entries")
        if not isinstance(t, (int, np.integer)) or not 1 <= int(t) <= self.config.schedule_steps:
            raise ValueError(f"timestep {t!r} out of range 1..{self.config.schedule_steps}")
        return z, cond

    def forward(self, z, cond, t, adapters: AdapterSet | None = None,
                lora_scale: float | None = None, want_cache: bool = False):
        z, cond = self._check_inputs(z, cond, t)
        if lora_scale is None:
            lora_scale = adapters.lora_scale if adapters is not None else 0.0
        if not 0.0 <= float(lora_scale) <= 1.0:
            raise ValueError(f"lora_scale must lie in [0, 1], got {lora_scale!r}")
        scale = float(lora_scale)
        p = self.params
        f, h, w_sp, c = z.shape
        s = h * w_sp

        tokens = z.reshape(f, s, c)
        x = tokens @ p["in_proj.weight"] + p["in_proj.bias"]
        temb = sinusoid_embedding(int(t), self.config.width)
        x = x + (temb @ p["time_proj.weight"] + p["time_proj.bias"])

        layers = []
        for i in range(self.config.spatial_blocks):
            for kind in ("self", "cross"):
                prefix = f"spatial.{i}.{'self_attn' if kind == 'self' else 'cross_attn'}"
                gamma, beta = p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"]
                hn, ln_cache = _ln_forward(x, gamma, beta)
                ads = self._adapters_for(prefix, adapters)
                kv = hn if kind == "self" else cond
                out, attn_cache = _attn_forward(hn, kv, self._attention_weights(prefix), ads, scale)
                x = x + out
                layers.append((kind, prefix, ln_cache, attn_cache))
            prefix = f"temporal.{i}.attn"
            gamma, beta = p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"]
            xt = x.transpose(1, 0, 2)
            hn, ln_cache = _ln_forward(xt, gamma, beta)
            out, attn_cache = _attn_forward(hn, hn, self._attention_weights(prefix),
                                            (None, None, None), 0.0)
            x = x + out.transpose(1, 0, 2)
            layers.append(("temporal", prefix, ln_cache, attn_cache))

        x_final = x
        eps_tokens = x_final @ p["out_proj.weight"] + p["out_proj.bias"]
        eps = eps_tokens.reshape(z.shape)
        if not want_cache:
            return eps
        cache = {
            "tokens": tokens, "temb": temb, "x_final": x_final, "layers": layers,
            "adapters": adapters, "scale": scale, "cond": cond, "shape": z.shape,
        }
        return eps, cache

    def backward(self, cache, d_eps: np.ndarray) -> Gradients:
        """Gradients of a scalar loss given d(loss)/d(eps_pred)."""
        p = self.params
        adapters, scale = cache["adapters"], cache["scale"]
        f, h, w_sp, c = cache["shape"]
        s = h * w_sp
        grads: dict[str, np.ndarray] = {}
        adapter_grads: dict[str, dict[str, np.ndarray]] = {}
        dcond = np.zeros_like(cache["cond"])

        d_tokens = np.asarray(d_eps).reshape(f, s, c)
        x_final = cache["x_final"]
        grads["out_proj.weight"] = np.einsum("fsw,fsc->wc", x_final, d_tokens)
        grads["out_proj.bias"] = d_tokens.sum(axis=(0, 1))
        dx = d_tokens @ p["out_proj.weight"].T

        for kind, prefix, ln_cache, attn_cache in reversed(cache["layers"]):
            gamma = p[f"{prefix}.norm.gamma"]
            if kind == "temporal":
                dout = dx.transpose(1, 0, 2)
                dq_in, dkv_in = _attn_backward(
                    dout, self._attention_weights(prefix), (None, None, None),
                    0.0, attn_cache, grads, prefix, adapter_grads)
                dh = dq_in + dkv_in
                dxt, dgamma, dbeta = _ln_backward(dh, gamma, ln_cache)
                dx = dx + dxt.transpose(1, 0, 2)
            else:
                ads = self._adapters_for(prefix, adapters)
                dq_in, dkv_in = _attn_backward(
                    dx, self._attention_weights(prefix), ads,
                    scale, attn_cache, grads, prefix, adapter_grads)
                if kind == "self":
                    dh = dq_in + dkv_in
                else:
                    dh = dq_in
                    dcond += _sum_to(cache["cond"], dkv_in)
                dxn, dgamma, dbeta = _ln_backward(dh, gamma, ln_cache)
                dx = dx + dxn
            grads[f"{prefix}.norm.gamma"] = grads.get(f"{prefix}.norm.gamma", 0.0) + dgamma
            grads[f"{prefix}.norm.beta"] = grads.get(f"{prefix}.norm.beta", 0.0) + dbeta

        d_tproj = dx.sum(axis=(0, 1))
        grads["time_proj.weight"] = np.outer(cache["temb"], d_tproj)
        grads["time_proj.bias"] = d_tproj
        grads["in_proj.weight"] = np.einsum("fsc,fsw->cw", cache["tokens"], dx)
        grads["in_proj.bias"] = dx.sum(axis=(0, 1))

        full = {}
        for name, _, _ in param_spec(self.config):
            full[name] = np.asarray(grads.get(name, np.zeros_like(p[name], dtype=np.float64)))
        return Gradients(params=full, adapters=adapter_grads, cond=dcond)


def predict_noise(model: DenoiserModel, z_t, cond, t, adapters: AdapterSet | None = None,
                  lora_scale: float | None = None) -> np.ndarray:
    """Evaluate the denoiser's noise prediction; pure and deterministic."""
    return model.forward(z_t, cond, t, adapters=adapters, lora_scale=lora_scale)


def spatial_attention_forward(model: DenoiserModel, block: int, kind: str, x,
                              context=None, adapters: AdapterSet | None = None,
                              lora_scale: float = 0.0) -> np.ndarray:
    """Run one spatial attention sublayer standalone (no norm, no residual).

    ``kind`` is "self" or "cross"; cross-attention requires ``context`` with
    the block's conditioning dim.
    """
    if kind not in ("self", "cross"):
        raise ValueError(f"kind must be 'self' or 'cross', got {kind!r}")
    if not 0.0 <= float(lora_scale) <= 1.0:
        raise ValueError(f"lora_scale must lie in [0, 1], got {lora_scale!r}")
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != model.config.width:
        raise ValueError(f"x must have trailing dim {model.config.width}, got shape {x.shape}")
    prefix = f"spatial.{block}.{'self_attn' if kind == 'self' else 'cross_attn'}"
    if f"{prefix}.w_q" not in model.params:
        raise ValueError(f"no spatial block {block} in this model")
    if kind == "cross":
        if context is None:
            raise ValueError("cross-attention requires a condition embedding")
        context = np.asarray(context)
        if context.ndim != 2 or context.shape[1] != model.config.cond_dim:
            raise ValueError(
                f"condition dim {context.shape} does not match conditioning dim {model.config.cond_dim}"
            )
        kv = context
    else:
        if context is not None:
            raise ValueError("self-attention takes no condition embedding")
        kv = x
    ads = model._adapters_for(prefix, adapters)
    out, _ = _attn_forward(x, kv, model._attention_weights(prefix), ads, float(lora_scale))
    return out[0] if squeeze else out


def video_loss(eps, eps_pred) -> float:
    """Mean squared elementwise difference between true and predicted noise."""
    eps = np.asarray(eps)
    eps_pred = np.asarray(eps_pred)
    if eps.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch: {eps.shape} vs {eps_pred.shape}")
    diff = eps.astype(np.float64) - eps_pred.astype(np.float64)
    return float(np.mean(diff * diff))
