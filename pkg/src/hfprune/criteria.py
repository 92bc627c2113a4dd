"""Per-position scalar criteria over next-token distributions.

Three criteria are available:
  IE  information entropy of the prediction distribution (bits, label-free)
  CE  one-hot cross entropy against given next-token targets (nats)
  SD  KL(teacher || student) against a fixed teacher distribution (nats)

A sequence criterion value is the MEAN of the per-position values, and the
returned gradient is the gradient of that mean, so downstream Taylor scores
are length-independent. Any positive rescaling of a criterion leaves score
rankings unchanged, so the choice of mean vs sum (and bits vs nats for CE)
is ranking-neutral.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import ShapeError


class CriterionKind(str, enum.Enum):
    IE = "ie"
    CE = "ce"
    SD = "sd"

    @classmethod
    def parse(cls, text: str) -> "CriterionKind":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown criterion {text!r}; expected ie, ce, or sd") from None


def requires_labels(kind: CriterionKind) -> bool:
    """Only CE needs ground-truth targets; IE and SD are label-free."""
    return kind is CriterionKind.CE


@dataclass
class SequenceCriterion:
    kind: CriterionKind
    per_position_values: np.ndarray  # float64 [T]
    value: float                     # mean of per-position values
    grad_logits: np.ndarray          # float32 [T x V], gradient of `value`


def evaluate(kind: CriterionKind, logits: np.ndarray,
             targets: np.ndarray | None = None,
             teacher_logits: np.ndarray | None = None) -> SequenceCriterion:
    logits = nm.as_matrix(logits, "logits")
    t, v = logits.shape

    if kind is CriterionKind.CE:
        if targets is None:
            raise ValueError("CE criterion requires next-token targets")
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (t,):
            raise ShapeError(f"targets shape {targets.shape}, expected ({t},)")
        if np.any(targets < 0) or np.any(targets >= v):
            raise ShapeError("target token id out of range")
    if kind is CriterionKind.SD:
        if teacher_logits is None:
            raise ValueError("SD criterion requires teacher logits")
        teacher_logits = nm.as_matrix(teacher_logits, "teacher logits")
        if teacher_logits.shape != logits.shape:
            raise ShapeError(f"teacher logits shape {teacher_logits.shape} vs {logits.shape}")

    values = np.empty(t, dtype=np.float64)
    grads = np.empty((t, v), dtype=np.float32)
    for i in range(t):
        p = nm.softmax_stable(logits[i])
        if kind is CriterionKind.IE:
            values[i] = nm.entropy_bits(p)
            grads[i] = nm.entropy_grad_logits(p)
        elif kind is CriterionKind.CE:
            tgt = int(targets[i])
            values[i] = -np.log(max(float(p[tgt]), nm.PROB_FLOOR))
            grads[i] = nm.ce_grad_logits(p, tgt)
        else:
            pt = nm.softmax_stable(teacher_logits[i])
            pt64 = pt.astype(np.float64)
            ps64 = p.astype(np.float64)
            values[i] = float(np.sum(
                pt64 * (np.log(np.maximum(pt64, nm.PROB_FLOOR))
                        - np.log(np.maximum(ps64, nm.PROB_FLOOR))),
                dtype=np.float64))
            grads[i] = nm.kl_grad_logits(pt, p)

    value = float(np.mean(values, dtype=np.float64))
    return SequenceCriterion(kind=kind, per_position_values=values, value=value,
                             grad_logits=grads / np.float32(t))


def criterion_value(kind: CriterionKind, logits: np.ndarray,
                    targets: np.ndarray | None = None,
                    teacher_logits: np.ndarray | None = None) -> float:
    """Mean per-position criterion value only, vectorized over positions.

    Agrees with evaluate(...).value; used on hot paths (exact ablations)
    where the gradient is not needed.
    """
    z = nm.as_matrix(logits, "logits").astype(np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    if kind is CriterionKind.IE:
        vals = -np.sum(p * np.log2(np.maximum(p, nm.PROB_FLOOR)), axis=1)
    elif kind is CriterionKind.CE:
        targets = np.asarray(targets, dtype=np.int64)
        picked = p[np.arange(z.shape[0]), targets]
        vals = -np.log(np.maximum(picked, nm.PROB_FLOOR))
    else:
        zt = nm.as_matrix(teacher_logits, "teacher logits").astype(np.float64)
        et = np.exp(zt - zt.max(axis=1, keepdims=True))
        pt = et / et.sum(axis=1, keepdims=True)
        vals = np.sum(pt * (np.log(np.maximum(pt, nm.PROB_FLOOR))
                            - np.log(np.maximum(p, nm.PROB_FLOOR))), axis=1)
    return float(np.mean(vals, dtype=np.float64))
