"""Plan construction and exact structural surgery on the MLP matrices.

Removing hidden neuron i deletes row i of W_gate and W_up and column i of
W_down, producing a smaller dense model whose forward pass is numerically
identical to masking those activations in the original (the deleted terms
contributed exact zeros to every inner product).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .model import LayerWeights, Model
from .numerics import ShapeError
from .scoring import ImportanceReport


class InfeasibleRatio(ValueError):
    """The requested overall reduction cannot be met by MLP pruning alone."""


@dataclass
class PrunePlan:
    rho: float
    report_digest: str
    removed: list[np.ndarray]  # sorted per-layer index arrays
    kept: list[np.ndarray]

    def to_json(self) -> str:
        payload = {
            "rho": self.rho,
            "report_digest": self.report_digest,
            "layers": [{"removed": [int(i) for i in r]} for r in self.removed],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, d_hidden: tuple[int, ...]) -> "PrunePlan":
        obj = json.loads(text)
        removed = [np.asarray(l["removed"], dtype=np.int64) for l in obj["layers"]]
        kept = [np.setdiff1d(np.arange(dh, dtype=np.int64), r)
                for dh, r in zip(d_hidden, removed)]
        return cls(rho=float(obj["rho"]), report_digest=obj["report_digest"],
                   removed=removed, kept=kept)


def report_digest(report: ImportanceReport) -> str:
    return hashlib.sha256(report.to_json().encode("utf-8")).hexdigest()


def make_plan(report: ImportanceReport, rho: float) -> PrunePlan:
    """Remove the floor(rho * d_hidden) lowest-scoring neurons per layer.

    Ties are broken by removing the lower index first (stable sort order).
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    removed, kept = [], []
    for scores in report.layer_scores:
        dh = len(scores)
        k = math.floor(rho * dh)
        order = np.argsort(scores, kind="stable")
        rm = np.sort(order[:k]).astype(np.int64)
        removed.append(rm)
        kept.append(np.setdiff1d(np.arange(dh, dtype=np.int64), rm))
    return PrunePlan(rho=float(rho), report_digest=report_digest(report),
                     removed=removed, kept=kept)


def random_plan(d_hidden: tuple[int, ...], rho: float,
                rng: np.random.Generator) -> PrunePlan:
    """Baseline plan removing uniformly random neurons at the same ratio."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    removed, kept = [], []
    for dh in d_hidden:
        k = math.floor(rho * dh)
        rm = np.sort(rng.choice(dh, size=k, replace=False)).astype(np.int64)
        removed.append(rm)
        kept.append(np.setdiff1d(np.arange(dh, dtype=np.int64), rm))
    return PrunePlan(rho=float(rho), report_digest="random", removed=removed,
                     kept=kept)


def apply_plan(model: Model, plan: PrunePlan) -> Model:
    """Structural surgery; returns a new, smaller Model."""
    cfg = model.config
    if len(plan.removed) != cfg.n_layers:
        raise ShapeError(f"plan covers {len(plan.removed)} layers, model has {cfg.n_layers}")
    new_layers = []
    new_hidden = []
    for l, (lw, rm) in enumerate(zip(model.layers, plan.removed)):
        dh = cfg.d_hidden[l]
        if len(rm) and (rm.min() < 0 or rm.max() >= dh):
            raise ShapeError(f"plan removes out-of-range neuron in layer {l}")
        if len(rm) >= dh:
            raise ShapeError(f"plan would remove every neuron in layer {l}")
        new_layers.append(LayerWeights(
            W_q=lw.W_q.copy(), W_k=lw.W_k.copy(), W_v=lw.W_v.copy(),
            W_o=lw.W_o.copy(),
            W_gate=np.ascontiguousarray(np.delete(lw.W_gate, rm, axis=0)),
            W_up=np.ascontiguousarray(np.delete(lw.W_up, rm, axis=0)),
            W_down=np.ascontiguousarray(np.delete(lw.W_down, rm, axis=1)),
            attn_norm=lw.attn_norm.copy(), mlp_norm=lw.mlp_norm.copy()))
        new_hidden.append(dh - len(rm))
    pruned = Model(config=replace(cfg, d_hidden=tuple(new_hidden)),
                   embedding=model.embedding.copy(), layers=new_layers,
                   final_norm=model.final_norm.copy(),
                   lm_head=None if model.tied else model.lm_head.copy(),
                   tied=model.tied)
    pruned.validate()
    return pruned


def rho_from_overall(model: Model, overall_ratio: float) -> float:
    """Map a whole-model parameter reduction target to an MLP prune fraction."""
    from .model import param_counts

    if not 0.0 <= overall_ratio < 1.0:
        raise ValueError(f"overall ratio must be in [0, 1), got {overall_ratio}")
    counts = param_counts(model)
    rho = overall_ratio * counts["total"] / counts["mlp"]
    if rho > 1.0:
        raise InfeasibleRatio(
            f"overall reduction {overall_ratio} needs rho={rho:.3f} > 1: "
            f"MLP holds only {counts['mlp'] / counts['total']:.1%} of parameters")
    return min(rho, np.nextafter(1.0, 0.0))
