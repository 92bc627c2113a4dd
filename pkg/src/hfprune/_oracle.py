"""Independent float64 reference path for gradient and Taylor checks.

Everything here is deliberately written against plain numpy (and
scipy.special.expit) instead of the production kernels, so that a bug in
numerics/model/backprop cannot cancel out of the comparison. Accuracy over
speed: all arithmetic is float64.

The sequence criterion convention matches scoring:
  IE  mean entropy (bits) over all T positions
  CE  mean -ln p(next token) over positions 0..T-2
  SD  mean KL(baseline model || evaluated model) in nats over all positions
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .criteria import CriterionKind
from .model import Model


def _rmsnorm64(x: np.ndarray, w: np.ndarray, eps: float) -> np.ndarray:
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * w / r


def _rope64(x: np.ndarray, theta: float) -> np.ndarray:
    # x: [T, dh]; pair dimension i with i + dh/2
    t, dh = x.shape
    inv_freq = theta ** (-np.arange(0, dh, 2, dtype=np.float64) / dh)
    ang = np.arange(t, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos, sin = np.cos(ang), np.sin(ang)
    lo, hi = x[:, : dh // 2], x[:, dh // 2:]
    return np.concatenate([lo * cos - hi * sin, lo * sin + hi * cos], axis=1)


def _softmax64(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward64(model: Model, tokens: np.ndarray,
              bump: tuple[int, int, int, float] | None = None,
              col_scale: tuple[int, int, float] | None = None) -> np.ndarray:
    """Float64 forward pass; returns logits [T x V].

    bump = (layer, neuron, position, delta) adds delta to one hidden value;
    col_scale = (layer, neuron, factor) scales one hidden column everywhere.
    """
    cfg = model.config
    t = len(tokens)
    dh_head = cfg.d_head
    x = model.embedding[np.asarray(tokens, dtype=np.int64)].astype(np.float64)
    mask = np.triu(np.full((t, t), -np.inf), k=1)

    for l, lw in enumerate(model.layers):
        normed = _rmsnorm64(x, lw.attn_norm.astype(np.float64), cfg.rms_eps)
        q = normed @ lw.W_q.T.astype(np.float64)
        k = normed @ lw.W_k.T.astype(np.float64)
        v = normed @ lw.W_v.T.astype(np.float64)
        ctx = np.empty_like(q)
        for h in range(cfg.n_heads):
            sl = slice(h * dh_head, (h + 1) * dh_head)
            qh = _rope64(q[:, sl], cfg.rope_theta)
            kh = _rope64(k[:, sl], cfg.rope_theta)
            scores = qh @ kh.T / np.sqrt(dh_head) + mask
            ctx[:, sl] = _softmax64(scores) @ v[:, sl]
        x = x + ctx @ lw.W_o.T.astype(np.float64)

        normed = _rmsnorm64(x, lw.mlp_norm.astype(np.float64), cfg.rms_eps)
        a = normed @ lw.W_gate.T.astype(np.float64)
        b = normed @ lw.W_up.T.astype(np.float64)
        hid = a * expit(a) * b
        if bump is not None and bump[0] == l:
            _, neuron, position, delta = bump
            hid[position, neuron] += delta
        if col_scale is not None and col_scale[0] == l:
            _, neuron, factor = col_scale
            hid[:, neuron] *= factor
        x = x + hid @ lw.W_down.T.astype(np.float64)

    normed = _rmsnorm64(x, model.final_norm.astype(np.float64), cfg.rms_eps)
    return normed @ model.head_weight.T.astype(np.float64)


def criterion_value64(kind: CriterionKind, logits: np.ndarray,
                      tokens: np.ndarray,
                      teacher_logits: np.ndarray | None = None) -> float:
    probs = _softmax64(logits)
    floor = 1e-12
    if kind is CriterionKind.IE:
        vals = -np.sum(probs * np.log2(np.maximum(probs, floor)), axis=1)
    elif kind is CriterionKind.CE:
        nxt = np.asarray(tokens, dtype=np.int64)[1:]
        picked = probs[np.arange(len(nxt)), nxt]
        vals = -np.log(np.maximum(picked, floor))
    else:
        teacher = _softmax64(teacher_logits)
        vals = np.sum(teacher * (np.log(np.maximum(teacher, floor))
                                 - np.log(np.maximum(probs, floor))), axis=1)
    return float(np.mean(vals))


def sequence_criterion64(model: Model, tokens: np.ndarray, kind: CriterionKind,
                         bump=None, col_scale=None) -> float:
    logits = forward64(model, tokens, bump=bump, col_scale=col_scale)
    teacher = None
    if kind is CriterionKind.SD:
        teacher = logits if (bump is None and col_scale is None) \
            else forward64(model, tokens)
    if kind is CriterionKind.CE:
        logits = logits[:-1]
    return criterion_value64(kind, logits, tokens, teacher_logits=teacher)


def criterion_with_bump(model: Model, tokens, kind: CriterionKind,
                        layer: int, neuron: int, position: int,
                        delta: float) -> float:
    return sequence_criterion64(model, tokens, kind,
                                bump=(layer, neuron, position, delta))


def criterion_with_scale(model: Model, tokens, kind: CriterionKind,
                         layer: int, neuron: int, factor: float) -> float:
    return sequence_criterion64(model, tokens, kind,
                                col_scale=(layer, neuron, factor))
