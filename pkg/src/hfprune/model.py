"""LLaMA-style decoder backbone: RMSNorm pre-norm, RoPE, causal MHA, SwiGLU MLP.

No biases anywhere. Weights are stored [out_features x in_features], so a
linear layer computes x @ W^T and pruning a hidden neuron deletes one row
of W_gate/W_up and one column of W_down.

The forward pass is full-sequence prefill only (no KV cache) and can record
every intermediate needed for the hand-rolled backward sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import ShapeError


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_hidden: tuple[int, ...]  # per layer; pruned models are first-class
    vocab_size: int
    max_seq: int
    rope_theta: float = 10000.0
    rms_eps: float = 1e-5

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_head % 2 != 0:
            raise ShapeError(f"head dim {self.d_head} must be even for RoPE")
        if len(self.d_hidden) != self.n_layers:
            raise ShapeError(f"d_hidden has {len(self.d_hidden)} entries for {self.n_layers} layers")
        if any(d < 1 for d in self.d_hidden):
            raise ShapeError("every d_hidden must be >= 1")
        if self.vocab_size < 2:
            raise ShapeError("vocab_size must be >= 2")
        if self.max_seq < 1:
            raise ShapeError("max_seq must be >= 1")
        if not (self.rope_theta > 0 and self.rms_eps > 0):
            raise ShapeError("rope_theta and rms_eps must be positive")


@dataclass
class LayerWeights:
    W_q: np.ndarray  # [d_model x d_model]
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    W_gate: np.ndarray  # [d_hidden x d_model]
    W_up: np.ndarray    # [d_hidden x d_model]
    W_down: np.ndarray  # [d_model x d_hidden]
    attn_norm: np.ndarray  # [d_model]
    mlp_norm: np.ndarray   # [d_model]


@dataclass
class Model:
    config: ModelConfig
    embedding: np.ndarray  # [V x d_model]
    layers: list[LayerWeights]
    final_norm: np.ndarray  # [d_model]
    lm_head: np.ndarray | None  # None when tied to the embedding
    tied: bool

    @property
    def head_weight(self) -> np.ndarray:
        return self.embedding if self.tied else self.lm_head

    def validate(self) -> None:
        cfg = self.config
        cfg.validate()
        d = cfg.d_model
        if self.embedding.shape != (cfg.vocab_size, d):
            raise ShapeError(f"embedding shape {self.embedding.shape}, expected {(cfg.vocab_size, d)}")
        if len(self.layers) != cfg.n_layers:
            raise ShapeError(f"{len(self.layers)} layers for n_layers={cfg.n_layers}")
        if self.tied != (self.lm_head is None):
            raise ShapeError("tied flag inconsistent with lm_head presence")
        if not self.tied and self.lm_head.shape != (cfg.vocab_size, d):
            raise ShapeError(f"lm_head shape {self.lm_head.shape}, expected {(cfg.vocab_size, d)}")
        if self.final_norm.shape != (d,):
            raise ShapeError("final_norm shape mismatch")
        for i, (lw, dh) in enumerate(zip(self.layers, cfg.d_hidden)):
            for name in ("W_q", "W_k", "W_v", "W_o"):
                if getattr(lw, name).shape != (d, d):
                    raise ShapeError(f"layers.{i}.{name} shape {getattr(lw, name).shape}, expected {(d, d)}")
            if lw.W_gate.shape != (dh, d) or lw.W_up.shape != (dh, d):
                raise ShapeError(f"layers.{i} gate/up shape mismatch for d_hidden={dh}")
            if lw.W_down.shape != (d, dh):
                raise ShapeError(f"layers.{i}.W_down shape {lw.W_down.shape}, expected {(d, dh)}")
            if lw.attn_norm.shape != (d,) or lw.mlp_norm.shape != (d,):
                raise ShapeError(f"layers.{i} norm weight shape mismatch")
        for arr in self.all_tensors().values():
            if not np.all(np.isfinite(arr)):
                raise nm.NumericError("model contains non-finite weights")

    def all_tensors(self) -> dict[str, np.ndarray]:
        """Named tensors in canonical (file) order."""
        out = {"embedding": self.embedding}
        for i, lw in enumerate(self.layers):
            p = f"layers.{i}."
            out[p + "attn_norm"] = lw.attn_norm
            out[p + "W_q"] = lw.W_q
            out[p + "W_k"] = lw.W_k
            out[p + "W_v"] = lw.W_v
            out[p + "W_o"] = lw.W_o
            out[p + "mlp_norm"] = lw.mlp_norm
            out[p + "W_gate"] = lw.W_gate
            out[p + "W_up"] = lw.W_up
            out[p + "W_down"] = lw.W_down
        out["final_norm"] = self.final_norm
        if not self.tied:
            out["lm_head"] = self.lm_head
        return out


@dataclass
class LayerCache:
    attn_in: np.ndarray      # residual entering the block [T x d_model]
    attn_normed: np.ndarray  # rmsnorm * attn_norm
    q: np.ndarray            # [H x T x dh], post-RoPE
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray        # [H x T x T] causal attention probabilities
    mlp_in: np.ndarray       # residual after attention [T x d_model]
    mlp_normed: np.ndarray
    gate_pre: np.ndarray     # x W_gate^T [T x d_hidden]
    up_pre: np.ndarray       # x W_up^T
    hidden: np.ndarray       # silu(gate_pre) * up_pre


@dataclass
class ActivationCache:
    layers: list[LayerCache]
    final_in: np.ndarray  # residual entering the final norm
    logits: np.ndarray    # [T x V]
    masked: bool = False  # True when any hidden column was forced to zero

    @property
    def seq_len(self) -> int:
        return self.logits.shape[0]

    def total_bytes(self) -> int:
        n = self.final_in.nbytes + self.logits.nbytes
        for lc in self.layers:
            for f in ("attn_in", "attn_normed", "q", "k", "v", "probs",
                      "mlp_in", "mlp_normed", "gate_pre", "up_pre", "hidden"):
                n += getattr(lc, f).nbytes
        return n


def check_tokens(model: Model, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 1 or tokens.shape[0] < 1:
        raise ShapeError("tokens must be a non-empty 1-D sequence")
    if tokens.shape[0] > model.config.max_seq:
        raise ShapeError(f"sequence length {tokens.shape[0]} exceeds max_seq={model.config.max_seq}")
    if np.any(tokens < 0) or np.any(tokens >= model.config.vocab_size):
        raise ShapeError("token id out of vocabulary range")
    return tokens.astype(np.int64)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    dh = d // n_heads
    return np.ascontiguousarray(x.reshape(t, n_heads, dh).transpose(1, 0, 2))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(t, h * dh))


def _block_forward(model: Model, layer: int, x: np.ndarray,
                   zero_neurons: np.ndarray | None = None,
                   want_cache: bool = False):
    """One transformer block. Returns (x_out, LayerCache | None).

    zero_neurons, when given, forces those hidden columns to zero after the
    gating product (the ablation semantics used by scoring and pruning
    equivalence checks).
    """
    cfg = model.config
    lw = model.layers[layer]

    normed_a = nm.rmsnorm(x, lw.attn_norm, cfg.rms_eps)
    q = _split_heads(nm.matmul_bt(normed_a, lw.W_q), cfg.n_heads)
    k = _split_heads(nm.matmul_bt(normed_a, lw.W_k), cfg.n_heads)
    v = _split_heads(nm.matmul_bt(normed_a, lw.W_v), cfg.n_heads)
    t = x.shape[0]
    probs = np.empty((cfg.n_heads, t, t), dtype=np.float32)
    ctx = np.empty_like(q)
    for h in range(cfg.n_heads):
        q[h] = nm.rope_apply(q[h], cfg.rope_theta)
        k[h] = nm.rope_apply(k[h], cfg.rope_theta)
        ctx[h], probs[h] = nm.causal_attention_forward(q[h], k[h], v[h])
    attn_out = nm.matmul_bt(_merge_heads(ctx), lw.W_o)
    x1 = x + attn_out

    normed_m = nm.rmsnorm(x1, lw.mlp_norm, cfg.rms_eps)
    gate_pre = nm.matmul_bt(normed_m, lw.W_gate)
    up_pre = nm.matmul_bt(normed_m, lw.W_up)
    hidden = nm.silu(gate_pre) * up_pre
    if zero_neurons is not None and len(zero_neurons) > 0:
        hidden[:, zero_neurons] = 0.0
    x2 = x1 + nm.matmul_bt(hidden, lw.W_down)

    cache = None
    if want_cache:
        cache = LayerCache(attn_in=x, attn_normed=normed_a, q=q, k=k, v=v,
                           probs=probs, mlp_in=x1, mlp_normed=normed_m,
                           gate_pre=gate_pre, up_pre=up_pre, hidden=hidden)
    return x2, cache


def _final_logits(model: Model, x: np.ndarray) -> np.ndarray:
    normed = nm.rmsnorm(x, model.final_norm, model.config.rms_eps)
    return nm.matmul_bt(normed, model.head_weight)


def _run(model: Model, tokens: np.ndarray, want_cache: bool,
         zero_neurons: dict[int, np.ndarray] | None = None):
    tokens = check_tokens(model, tokens)
    x = model.embedding[tokens].astype(np.float32)
    layer_caches = []
    for layer in range(model.config.n_layers):
        zn = None if zero_neurons is None else zero_neurons.get(layer)
        x, lc = _block_forward(model, layer, x, zero_neurons=zn, want_cache=want_cache)
        if want_cache:
            layer_caches.append(lc)
    logits = _final_logits(model, x)
    if not want_cache:
        return logits, None
    cache = ActivationCache(layers=layer_caches, final_in=x, logits=logits,
                            masked=bool(zero_neurons))
    return logits, cache


def forward(model: Model, tokens: np.ndarray):
    """Full forward pass; returns (logits [T x V], ActivationCache)."""
    logits, cache = _run(model, tokens, want_cache=True)
    return logits, cache


def logits_only(model: Model, tokens: np.ndarray) -> np.ndarray:
    """Same arithmetic as forward, no cache retained."""
    logits, _ = _run(model, tokens, want_cache=False)
    return logits


def masked_logits(model: Model, tokens: np.ndarray,
                  zero_neurons: dict[int, np.ndarray]) -> np.ndarray:
    """Forward with the given per-layer hidden neurons forced to zero."""
    zn = {int(l): np.asarray(idx, dtype=np.int64) for l, idx in zero_neurons.items()}
    for l in zn:
        if not 0 <= l < model.config.n_layers:
            raise ShapeError(f"layer {l} out of range")
        if len(zn[l]) and (zn[l].min() < 0 or zn[l].max() >= model.config.d_hidden[l]):
            raise ShapeError(f"neuron index out of range in layer {l}")
    logits, _ = _run(model, tokens, want_cache=False, zero_neurons=zn)
    return logits


def resume_after_hidden(model: Model, cache: ActivationCache, layer: int,
                        hidden: np.ndarray) -> np.ndarray:
    """Recompute logits downstream of layer `layer`'s hidden activations.

    Runs the identical float32 kernels as `forward`, starting from the cached
    MLP-sublayer input, so passing the cached hidden back in reproduces the
    cached logits bit-for-bit.
    """
    if not 0 <= layer < model.config.n_layers:
        raise ShapeError(f"layer {layer} out of range")
    lc = cache.layers[layer]
    if hidden.shape != lc.hidden.shape:
        raise ShapeError(f"hidden shape {hidden.shape}, expected {lc.hidden.shape}")
    x = lc.mlp_in + nm.matmul_bt(hidden, model.layers[layer].W_down)
    for l in range(layer + 1, model.config.n_layers):
        x, _ = _block_forward(model, l, x)
    return _final_logits(model, x)


def param_counts(model: Model) -> dict:
    """Parameter totals; `mlp` covers W_gate/W_up/W_down only."""
    cfg = model.config
    d = cfg.d_model
    per_layer_mlp = [3 * dh * d for dh in cfg.d_hidden]
    mlp = sum(per_layer_mlp)
    total = cfg.vocab_size * d + d  # embedding + final_norm
    total += sum(4 * d * d + 2 * d for _ in range(cfg.n_layers)) + mlp
    if not model.tied:
        total += cfg.vocab_size * d
    return {"total": total, "mlp": mlp, "per_layer_mlp": per_layer_mlp}


def random_model(config: ModelConfig, rng: np.random.Generator,
                 tied: bool = False, scale: float = 0.3) -> Model:
    """Random Gaussian weights scaled by 1/sqrt(fan_in); norms start at one."""
    config.validate()
    d = config.d_model

    def w(rows, cols):
        return (rng.standard_normal((rows, cols)) * scale / np.sqrt(cols)).astype(np.float32)

    layers = []
    for dh in config.d_hidden:
        layers.append(LayerWeights(
            W_q=w(d, d), W_k=w(d, d), W_v=w(d, d), W_o=w(d, d),
            W_gate=w(dh, d), W_up=w(dh, d), W_down=w(d, dh),
            attn_norm=np.ones(d, dtype=np.float32),
            mlp_norm=np.ones(d, dtype=np.float32),
        ))
    embedding = rng.standard_normal((config.vocab_size, d)).astype(np.float32)
    model = Model(config=config, embedding=embedding, layers=layers,
                  final_norm=np.ones(d, dtype=np.float32),
                  lm_head=None if tied else w(config.vocab_size, d) * np.float32(np.sqrt(d)),
                  tied=tied)
    model.validate()
    return model
