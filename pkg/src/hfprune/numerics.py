"""Dense kernels shared by the whole toolkit.

Matrices are 2-D float32 numpy arrays in row-major order; probability
vectors are 1-D float32 arrays. Storage stays 32-bit, but every reduction
(matmul inner products, norms, entropy sums) accumulates in 64-bit so that
results are reproducible and gradient checks are stable.

The matmul kernels run a fixed-order summation (plain k-loop), so the
output is bit-identical across runs, thread counts, and to a naive
triple-loop reference. BLAS is deliberately not used here.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LOG2E = 1.4426950408889634  # 1/ln(2)
PROB_FLOOR = 1e-12  # clamp inside logs only, never in the mass itself


class ShapeError(ValueError):
    """Operand shapes are inconsistent."""


class NumericError(ValueError):
    """Non-finite or otherwise invalid numeric input."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got ndim={a.ndim}")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim != 1:
        raise ShapeError(f"{name}: expected a 1-D vector, got ndim={a.ndim}")
    return a


def check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")


def validate_prob_vector(p: np.ndarray) -> None:
    """Assert the probability-vector invariants (non-negative, sums to 1)."""
    p = as_vector(p, "prob vector")
    if np.any(p < 0):
        raise NumericError("prob vector has negative entries")
    s = float(np.sum(p, dtype=np.float64))
    if not (1.0 - 1e-5 <= s <= 1.0 + 1e-5):
        raise NumericError(f"prob vector sums to {s}, not 1")


# ---------------------------------------------------------------------------
# matmul: fixed-order float64 accumulation, float32 storage


@njit(cache=True, nogil=True)
def _mm(a, b, out):
    m, kk = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(kk):
                acc += np.float64(a[i, p]) * np.float64(b[p, j])
            out[i, j] = acc


@njit(cache=True, nogil=True)
def _mm_bt(a, b, out):
    # a[m,k] @ b[n,k]^T, same k-order summation as _mm
    m, kk = a.shape
    n = b.shape[0]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(kk):
                acc += np.float64(a[i, p]) * np.float64(b[j, p])
            out[i, j] = acc


@njit(cache=True, nogil=True)
def _mm_at(a, b, out):
    # a[k,m]^T @ b[k,n]
    kk, m = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(kk):
                acc += np.float64(a[p, i]) * np.float64(b[p, j])
            out[i, j] = acc


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float32)
    _mm(a, b, out)
    return out


def matmul_bt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b.T without materializing the transpose."""
    a = as_matrix(a, "matmul_bt lhs")
    b = as_matrix(b, "matmul_bt rhs")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_bt: inner dims differ, {a.shape} x {b.shape}^T")
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float32)
    _mm_bt(a, b, out)
    return out


def matmul_at(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b without materializing the transpose."""
    a = as_matrix(a, "matmul_at lhs")
    b = as_matrix(b, "matmul_at rhs")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul_at: inner dims differ, {a.shape}^T x {b.shape}")
    out = np.empty((a.shape[1], b.shape[1]), dtype=np.float32)
    _mm_at(a, b, out)
    return out


# ---------------------------------------------------------------------------
# SiLU gate


def _sigmoid64(x: np.ndarray) -> np.ndarray:
    # two-branch form: no overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    x64 = np.asarray(x, dtype=np.float64)
    return (x64 * _sigmoid64(x64)).astype(np.float32)


def silu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """upstream * d/dx[x*sigmoid(x)] = upstream * sig(x)*(1 + x*(1-sig(x)))."""
    x = np.asarray(x, dtype=np.float32)
    upstream = np.asarray(upstream, dtype=np.float32)
    if x.shape != upstream.shape:
        raise ShapeError(f"silu_backward: {x.shape} vs upstream {upstream.shape}")
    x64 = x.astype(np.float64)
    sig = _sigmoid64(x64)
    return (upstream.astype(np.float64) * sig * (1.0 + x64 * (1.0 - sig))).astype(np.float32)


# ---------------------------------------------------------------------------
# Softmax and the per-position criterion kernels


def softmax_stable(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax of one logits vector; safe for |z| up to 1e4."""
    z = as_vector(logits, "logits")
    check_finite(z, "logits")
    z64 = z.astype(np.float64)
    e = np.exp(z64 - z64.max())
    return (e / np.sum(e, dtype=np.float64)).astype(np.float32)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a [T x V] matrix."""
    z = as_matrix(logits, "logits")
    check_finite(z, "logits")
    z64 = z.astype(np.float64)
    e = np.exp(z64 - z64.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def entropy_bits(p: np.ndarray) -> float:
    """Shannon entropy in bits, with the 0*log0 = 0 convention."""
    p64 = as_vector(p, "p").astype(np.float64)
    terms = p64 * np.log2(np.maximum(p64, PROB_FLOOR))
    return float(-np.sum(terms, dtype=np.float64))


def entropy_grad_logits(p: np.ndarray) -> np.ndarray:
    """Gradient of entropy_bits(softmax(z)) at the logits z that produced p.

    Closed form: g_j = -p_j * (log2 p_j + H(p)).
    """
    p64 = as_vector(p, "p").astype(np.float64)
    h = -np.sum(p64 * np.log2(np.maximum(p64, PROB_FLOOR)), dtype=np.float64)
    g = -p64 * (np.log2(np.maximum(p64, PROB_FLOOR)) + h)
    return g.astype(np.float32)


def ce_grad_logits(p: np.ndarray, target: int) -> np.ndarray:
    """Gradient of -ln p_target w.r.t. logits: softmax minus one-hot."""
    p = as_vector(p, "p")
    if not 0 <= target < p.shape[0]:
        raise ShapeError(f"target {target} out of range for V={p.shape[0]}")
    g = p.astype(np.float64)
    g[target] -= 1.0
    return g.astype(np.float32)


def kl_grad_logits(teacher: np.ndarray, student: np.ndarray) -> np.ndarray:
    """Gradient of KL(teacher || student) w.r.t. student logits (teacher fixed)."""
    t = as_vector(teacher, "teacher")
    s = as_vector(student, "student")
    if t.shape != s.shape:
        raise ShapeError(f"kl_grad_logits: {t.shape} vs {s.shape}")
    return s - t


def js_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon distance in base 2: sqrt(JS divergence), bounded by 1."""
    p64 = as_vector(p, "p").astype(np.float64)
    q64 = as_vector(q, "q").astype(np.float64)
    if p64.shape != q64.shape:
        raise ShapeError(f"js_distance: {p64.shape} vs {q64.shape}")
    m = 0.5 * (p64 + q64)
    logm = np.log2(np.maximum(m, PROB_FLOOR))
    kl_pm = np.sum(p64 * (np.log2(np.maximum(p64, PROB_FLOOR)) - logm), dtype=np.float64)
    kl_qm = np.sum(q64 * (np.log2(np.maximum(q64, PROB_FLOOR)) - logm), dtype=np.float64)
    return float(np.sqrt(max(0.5 * kl_pm + 0.5 * kl_qm, 0.0)))


def topk_indices(p: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken toward the lower index."""
    p = as_vector(p, "p")
    if not 1 <= k <= p.shape[0]:
        raise ShapeError(f"k={k} out of range for V={p.shape[0]}")
    order = np.argsort(-p, kind="stable")
    return order[:k]


def topk_jaccard(p: np.ndarray, q: np.ndarray, k: int) -> float:
    a = set(topk_indices(p, k).tolist())
    b = set(topk_indices(q, k).tolist())
    return len(a & b) / len(a | b)


# ---------------------------------------------------------------------------
# RMSNorm (with fused elementwise weight)


def rmsnorm(x: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    """Row-wise x * weight / sqrt(mean(x^2) + eps)."""
    x = as_matrix(x, "rmsnorm input")
    w = as_vector(weight, "rmsnorm weight")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"rmsnorm: {x.shape} vs weight {w.shape}")
    x64 = x.astype(np.float64)
    r = np.sqrt(np.mean(x64 * x64, axis=1, keepdims=True) + eps)
    return (x64 * w.astype(np.float64) / r).astype(np.float32)


def rmsnorm_backward(x: np.ndarray, weight: np.ndarray, eps: float,
                     upstream: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. x of rmsnorm(x, weight, eps) given the upstream grad.

    With r = sqrt(mean(x^2) + eps) and u = upstream * weight:
      dx = u/r - x * sum(u*x) / (d * r^3)
    """
    x = as_matrix(x, "rmsnorm input")
    w = as_vector(weight, "rmsnorm weight")
    g = as_matrix(upstream, "rmsnorm upstream")
    if x.shape != g.shape or x.shape[1] != w.shape[0]:
        raise ShapeError(f"rmsnorm_backward: x {x.shape}, upstream {g.shape}, w {w.shape}")
    x64 = x.astype(np.float64)
    d = x64.shape[1]
    r = np.sqrt(np.mean(x64 * x64, axis=1, keepdims=True) + eps)
    u = g.astype(np.float64) * w.astype(np.float64)
    dot = np.sum(u * x64, axis=1, keepdims=True, dtype=np.float64)
    dx = u / r - x64 * dot / (d * r ** 3)
    return dx.astype(np.float32)


# ---------------------------------------------------------------------------
# Rotary position embedding (half-split pairing: dim i rotates with i + dh/2)


def rope_angles(n_pos: int, dim: int, theta: float) -> np.ndarray:
    """[n_pos x dim/2] float64 angle table: pos * theta^(-2i/dim)."""
    if dim % 2 != 0:
        raise ShapeError(f"rope: head dim must be even, got {dim}")
    inv_freq = theta ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    return np.arange(n_pos, dtype=np.float64)[:, None] * inv_freq[None, :]


def rope_apply(x: np.ndarray, theta: float, inverse: bool = False) -> np.ndarray:
    """Rotate a per-head [T x dh] block; row t gets position-t angles.

    inverse=True applies the transposed rotation (the backward pass).
    """
    x = as_matrix(x, "rope input")
    t, dh = x.shape
    ang = rope_angles(t, dh, theta)
    if inverse:
        ang = -ang
    cos, sin = np.cos(ang), np.sin(ang)
    x64 = x.astype(np.float64)
    lo, hi = x64[:, : dh // 2], x64[:, dh // 2:]
    out = np.empty_like(x64)
    out[:, : dh // 2] = lo * cos - hi * sin
    out[:, dh // 2:] = lo * sin + hi * cos
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Single-head causal attention


def causal_attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Causal softmax(q k^T / sqrt(dh)) v for one head.

    Returns (ctx [T x dh], probs [T x T]); probs rows are zero above the
    diagonal.
    """
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if q.shape != k.shape or q.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    t, dh = q.shape
    scale = np.float32(1.0 / np.sqrt(dh))
    scores = matmul_bt(q, k) * scale
    probs = np.zeros((t, t), dtype=np.float32)
    s64 = scores.astype(np.float64)
    for i in range(t):
        row = s64[i, : i + 1]
        e = np.exp(row - row.max())
        probs[i, : i + 1] = (e / np.sum(e, dtype=np.float64)).astype(np.float32)
    ctx = matmul(probs, v)
    return ctx, probs


def causal_attention_backward(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                              probs: np.ndarray, d_ctx: np.ndarray):
    """Gradients (dq, dk, dv) of causal attention given cached probs."""
    t, dh = q.shape
    scale = np.float32(1.0 / np.sqrt(dh))
    dv = matmul_at(probs, d_ctx)
    dp = matmul_bt(d_ctx, v)
    # softmax backward per row; masked entries have probs == 0, hence d == 0
    p64 = probs.astype(np.float64)
    dp64 = dp.astype(np.float64)
    inner = np.sum(dp64 * p64, axis=1, keepdims=True, dtype=np.float64)
    ds = (p64 * (dp64 - inner)).astype(np.float32) * scale
    dq = matmul(ds, k)
    dk = matmul_at(ds, q)
    return dq, dk, dv
