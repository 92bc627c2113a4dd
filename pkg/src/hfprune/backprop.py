"""Reverse-mode sweep from a logits gradient down to every MLP hidden unit.

The backbone is fixed and closed-form, so the backward pass is hand-rolled
rather than taped: one sweep yields dC/dh for all layers. Only activation
gradients are produced; weight gradients are never needed here.

`finite_diff_hidden` is the independent test oracle: it reruns the forward
computation in float64 numpy (see _oracle) with a single hidden activation
perturbed, and never touches the kernels it is checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _oracle
from . import numerics as nm
from .criteria import CriterionKind
from .model import ActivationCache, Model, _merge_heads, _split_heads
from .numerics import ShapeError


@dataclass
class HiddenGradients:
    """Per layer: g[t][i] = dC/dh_i at position t, shaped like the cached h."""
    layers: list[np.ndarray]


def backward_to_hidden(model: Model, cache: ActivationCache,
                       grad_logits: np.ndarray) -> HiddenGradients:
    cfg = model.config
    grad_logits = nm.as_matrix(grad_logits, "grad_logits")
    t = cache.seq_len
    if grad_logits.shape != (t, cfg.vocab_size):
        raise ShapeError(f"grad_logits shape {grad_logits.shape}, expected {(t, cfg.vocab_size)}")
    if len(cache.layers) != cfg.n_layers:
        raise ShapeError("cache does not match model layer count")
    for l, lc in enumerate(cache.layers):
        if lc.hidden.shape != (t, cfg.d_hidden[l]):
            raise ShapeError(f"cache layer {l} hidden shape {lc.hidden.shape}")

    # head and final norm
    d_normed = nm.matmul(grad_logits, model.head_weight)
    d_res = nm.rmsnorm_backward(cache.final_in, model.final_norm, cfg.rms_eps, d_normed)

    hidden_grads: list[np.ndarray | None] = [None] * cfg.n_layers
    for l in range(cfg.n_layers - 1, -1, -1):
        lw = model.layers[l]
        lc = cache.layers[l]

        # MLP sublayer: x2 = x1 + (silu(a) * b) @ W_down^T
        dh = nm.matmul(d_res, lw.W_down)
        hidden_grads[l] = dh
        s = nm.silu(lc.gate_pre)
        da = nm.silu_backward(lc.gate_pre, dh * lc.up_pre)
        db = dh * s
        d_normed_m = nm.matmul(da, lw.W_gate) + nm.matmul(db, lw.W_up)
        d_x1 = d_res + nm.rmsnorm_backward(lc.mlp_in, lw.mlp_norm, cfg.rms_eps, d_normed_m)

        # attention sublayer: x1 = x0 + merge(ctx) @ W_o^T
        d_ctx = _split_heads(nm.matmul(d_x1, lw.W_o), cfg.n_heads)
        dq = np.empty_like(d_ctx)
        dk = np.empty_like(d_ctx)
        dv = np.empty_like(d_ctx)
        for h in range(cfg.n_heads):
            dq_h, dk_h, dv_h = nm.causal_attention_backward(
                lc.q[h], lc.k[h], lc.v[h], lc.probs[h], d_ctx[h])
            dq[h] = nm.rope_apply(dq_h, cfg.rope_theta, inverse=True)
            dk[h] = nm.rope_apply(dk_h, cfg.rope_theta, inverse=True)
            dv[h] = dv_h
        d_normed_a = (nm.matmul(_merge_heads(dq), lw.W_q)
                      + nm.matmul(_merge_heads(dk), lw.W_k)
                      + nm.matmul(_merge_heads(dv), lw.W_v))
        d_res = d_x1 + nm.rmsnorm_backward(lc.attn_in, lw.attn_norm, cfg.rms_eps, d_normed_a)

    return HiddenGradients(layers=hidden_grads)


def finite_diff_hidden(model: Model, tokens: np.ndarray, kind: CriterionKind,
                       layer: int, neuron: int, position: int,
                       epsilon: float = 1e-3) -> float:
    """Central difference (C(h + eps*e) - C(h - eps*e)) / 2eps.

    The perturbation is injected into one hidden activation and the
    downstream computation is rerun by the independent float64 oracle.
    """
    if not 0 <= layer < model.config.n_layers:
        raise ShapeError(f"layer {layer} out of range")
    if not 0 <= neuron < model.config.d_hidden[layer]:
        raise ShapeError(f"neuron {neuron} out of range for layer {layer}")
    if not 0 <= position < len(tokens):
        raise ShapeError(f"position {position} out of range")
    c_plus = _oracle.criterion_with_bump(model, tokens, kind, layer, neuron,
                                         position, +epsilon)
    c_minus = _oracle.criterion_with_bump(model, tokens, kind, layer, neuron,
                                          position, -epsilon)
    return (c_plus - c_minus) / (2.0 * epsilon)
