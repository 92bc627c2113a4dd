"""Per-neuron importance accumulation and the ablation oracles.

A neuron's score is the calibration average of |dC/dh_i * h_i|, taken per
position and summed (so opposite-signed positions cannot cancel), then
divided by the total number of scored positions. The alternative
per-sequence aggregation |sum_t dC/dh_i * h_i| is kept behind the
`aggregation` knob for comparison runs.

Criterion convention for a token sequence of length T:
  IE  all T positions
  CE  positions 0..T-2, target = the next token
  SD  all T positions, teacher = this model's own (unablated) output

`exact_ablation_delta` is the brute-force ground truth: it reruns the
forward pass with one hidden column forced to zero, using the production
float32 kernels, so it is bit-identical to a fully masked forward.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import json
import numpy as np

from . import _oracle
from .backprop import backward_to_hidden
from .criteria import CriterionKind, SequenceCriterion, criterion_value, evaluate
from .fileio import token_digest
from .model import Model, forward, resume_after_hidden
from .numerics import ShapeError
from .version import TOOLKIT_VERSION

AGGREGATIONS = ("abs-pos", "abs-seq")


def worker_count(explicit: int | None = None) -> int:
    """Thread-pool width; HFPRUNE_THREADS caps it."""
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("HFPRUNE_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class CalibrationSet:
    sequences: np.ndarray  # [N x T] uint32
    digest: str

    @classmethod
    def from_tokens(cls, sequences: np.ndarray) -> "CalibrationSet":
        seqs = np.asarray(sequences, dtype=np.uint32)
        if seqs.ndim != 2 or seqs.shape[0] < 1:
            raise ShapeError("calibration set must be a non-empty [N x T] array")
        return cls(sequences=seqs, digest=token_digest(seqs))

    @property
    def count(self) -> int:
        return self.sequences.shape[0]

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[1]


@dataclass
class ImportanceReport:
    criterion: CriterionKind
    layer_scores: list[np.ndarray]  # float64, one vector per layer
    token_count: int
    sequence_count: int
    calib_digest: str
    version: str
    normalizer: str = "total-positions"
    aggregation: str = "abs-pos"

    def to_json(self) -> str:
        payload = {
            "criterion": self.criterion.value,
            "normalizer": self.normalizer,
            "aggregation": self.aggregation,
            "token_count": self.token_count,
            "sequence_count": self.sequence_count,
            "calib_digest": self.calib_digest,
            "version": self.version,
            "layers": [[float(x) for x in layer] for layer in self.layer_scores],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ImportanceReport":
        obj = json.loads(text)
        return cls(criterion=CriterionKind.parse(obj["criterion"]),
                   layer_scores=[np.asarray(l, dtype=np.float64) for l in obj["layers"]],
                   token_count=int(obj["token_count"]),
                   sequence_count=int(obj["sequence_count"]),
                   calib_digest=obj["calib_digest"],
                   version=obj.get("version", "unknown"),
                   normalizer=obj.get("normalizer", "total-positions"),
                   aggregation=obj.get("aggregation", "abs-pos"))


def evaluate_for_tokens(kind: CriterionKind, logits: np.ndarray,
                        tokens: np.ndarray,
                        teacher_logits: np.ndarray | None = None):
    """Apply the sequence-criterion convention; returns (crit, grad [T x V]).

    The returned gradient is padded back to all T positions (zero rows where
    a position contributes no criterion term, i.e. the last CE position).
    """
    t = logits.shape[0]
    if kind is CriterionKind.CE:
        if t < 2:
            raise ShapeError("CE criterion needs sequences of length >= 2")
        crit = evaluate(kind, logits[:-1], targets=np.asarray(tokens)[1:])
        grad = np.vstack([crit.grad_logits,
                          np.zeros((1, logits.shape[1]), dtype=np.float32)])
        return crit, grad
    if kind is CriterionKind.SD:
        teacher = logits if teacher_logits is None else teacher_logits
        crit = evaluate(kind, logits, teacher_logits=teacher)
        return crit, crit.grad_logits
    crit = evaluate(kind, logits)
    return crit, crit.grad_logits


def criterion_value_for_tokens(kind: CriterionKind, logits: np.ndarray,
                               tokens: np.ndarray,
                               teacher_logits: np.ndarray | None = None) -> float:
    """Value-only counterpart of evaluate_for_tokens (same convention)."""
    if kind is CriterionKind.CE:
        if logits.shape[0] < 2:
            raise ShapeError("CE criterion needs sequences of length >= 2")
        return criterion_value(kind, logits[:-1], targets=np.asarray(tokens)[1:])
    if kind is CriterionKind.SD:
        teacher = logits if teacher_logits is None else teacher_logits
        return criterion_value(kind, logits, teacher_logits=teacher)
    return criterion_value(kind, logits)


def _positions(kind: CriterionKind, t: int) -> int:
    return t - 1 if kind is CriterionKind.CE else t


def accumulate_scores(model: Model, calib: CalibrationSet, kind: CriterionKind,
                      aggregation: str = "abs-pos",
                      threads: int | None = None,
                      version: str = TOOLKIT_VERSION) -> ImportanceReport:
    if calib.count < 1:
        raise ValueError("empty calibration set")
    if int(calib.sequences.max()) >= model.config.vocab_size:
        raise ShapeError("calibration token id exceeds model vocabulary")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")

    def contribution(i: int):
        tokens = calib.sequences[i].astype(np.int64)
        logits, cache = forward(model, tokens)
        _, grad = evaluate_for_tokens(kind, logits, tokens)
        grads = backward_to_hidden(model, cache, grad)
        per_layer = []
        for g, lc in zip(grads.layers, cache.layers):
            prod = g.astype(np.float64) * lc.hidden.astype(np.float64)
            if aggregation == "abs-pos":
                per_layer.append(np.abs(prod).sum(axis=0))
            else:
                per_layer.append(np.abs(prod.sum(axis=0)))
        return per_layer

    n = calib.count
    with ThreadPoolExecutor(max_workers=worker_count(threads)) as ex:
        results = list(ex.map(contribution, range(n)))

    # reduce in sequence order so the result is independent of pool width
    totals = [np.zeros(dh, dtype=np.float64) for dh in model.config.d_hidden]
    for per_layer in results:
        for acc, c in zip(totals, per_layer):
            acc += c
    total_positions = n * _positions(kind, calib.seq_len)
    scores = [acc / total_positions for acc in totals]
    return ImportanceReport(criterion=kind, layer_scores=scores,
                            token_count=int(n * calib.seq_len),
                            sequence_count=int(n),
                            calib_digest=calib.digest, version=version,
                            aggregation=aggregation)


def _check_indices(model: Model, layer: int, neuron: int) -> None:
    if not 0 <= layer < model.config.n_layers:
        raise ShapeError(f"layer {layer} out of range")
    if not 0 <= neuron < model.config.d_hidden[layer]:
        raise ShapeError(f"neuron {neuron} out of range for layer {layer}")


def taylor_estimate_delta(model: Model, tokens: np.ndarray, kind: CriterionKind,
                          layer: int, neuron: int) -> float:
    """First-order estimate of the criterion change from zeroing one neuron:
    -sum_t dC/dh_i[t] * h_i[t]."""
    _check_indices(model, layer, neuron)
    tokens = np.asarray(tokens, dtype=np.int64)
    logits, cache = forward(model, tokens)
    _, grad = evaluate_for_tokens(kind, logits, tokens)
    grads = backward_to_hidden(model, cache, grad)
    g = grads.layers[layer][:, neuron].astype(np.float64)
    h = cache.layers[layer].hidden[:, neuron].astype(np.float64)
    return float(-np.sum(g * h, dtype=np.float64))


def exact_ablation_delta(model: Model, tokens: np.ndarray, kind: CriterionKind,
                         layer: int, neuron: int) -> float:
    """Exact criterion change from forcing h_i to zero at every position."""
    _check_indices(model, layer, neuron)
    tokens = np.asarray(tokens, dtype=np.int64)
    logits0, cache = forward(model, tokens)
    return _ablation_deltas(model, tokens, kind, logits0, cache, layer, [neuron])[0]


def _ablation_deltas(model: Model, tokens, kind: CriterionKind,
                     logits0: np.ndarray, cache, layer: int,
                     neurons: Iterable[int]) -> list[float]:
    c0 = criterion_value_for_tokens(kind, logits0, tokens)
    deltas = []
    base_hidden = cache.layers[layer].hidden
    for neuron in neurons:
        h = base_hidden.copy()
        h[:, neuron] = 0.0
        logits1 = resume_after_hidden(model, cache, layer, h)
        c1 = criterion_value_for_tokens(kind, logits1, tokens, teacher_logits=logits0)
        deltas.append(c1 - c0)
    return deltas


def exact_ablation_deltas(model: Model, tokens: np.ndarray,
                          kind: CriterionKind) -> list[np.ndarray]:
    """Exact ablation delta for every neuron, reusing one baseline forward."""
    tokens = np.asarray(tokens, dtype=np.int64)
    logits0, cache = forward(model, tokens)
    out = []
    for layer in range(model.config.n_layers):
        deltas = _ablation_deltas(model, tokens, kind, logits0, cache,
                                  layer, range(model.config.d_hidden[layer]))
        out.append(np.asarray(deltas, dtype=np.float64))
    return out


def scaled_ablation_delta(model: Model, tokens: np.ndarray, kind: CriterionKind,
                          layer: int, neuron: int, epsilon: float) -> float:
    """Exact criterion change when h_i is scaled by (1 - epsilon) everywhere.

    Evaluated by the float64 oracle so the second-order behaviour of the
    Taylor remainder is visible well below float32 noise.
    """
    _check_indices(model, layer, neuron)
    tokens = np.asarray(tokens, dtype=np.int64)
    c0 = _oracle.sequence_criterion64(model, tokens, kind)
    c1 = _oracle.criterion_with_scale(model, tokens, kind, layer, neuron,
                                      1.0 - epsilon)
    return c1 - c0
