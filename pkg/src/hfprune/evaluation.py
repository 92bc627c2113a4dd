"""Damage metrics: perplexity, distribution fidelity, and oracle studies.

Fidelity compares the original and pruned next-token distributions with the
base-2 Jensen-Shannon distance and the top-k index Jaccard similarity. By
default only the final prompt position is scored; mode="all" scores every
position.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import numerics as nm
from .criteria import CriterionKind
from .model import Model, logits_only
from .numerics import ShapeError
from .scoring import (CalibrationSet, accumulate_scores, exact_ablation_deltas,
                      worker_count)


@dataclass
class FidelityReport:
    mean_js: float
    mean_topk_jaccard: float
    k: int
    prompt_count: int
    positions_per_prompt: int
    ppl_original: float
    ppl_pruned: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_js": self.mean_js,
            "mean_topk_jaccard": self.mean_topk_jaccard,
            "k": self.k,
            "prompt_count": self.prompt_count,
            "positions_per_prompt": self.positions_per_prompt,
            "ppl_original": self.ppl_original,
            "ppl_pruned": self.ppl_pruned,
            "metadata": self.metadata,
        }


def perplexity(model: Model, corpus: np.ndarray, threads: int | None = None) -> float:
    """exp(mean -ln p(next token)); final positions have no successor and
    are excluded."""
    seqs = np.asarray(corpus)
    if seqs.ndim != 2 or seqs.size == 0:
        raise ValueError("empty corpus")
    if seqs.shape[1] < 2:
        raise ValueError("perplexity needs sequences of length >= 2")

    def nll(i: int) -> float:
        tokens = seqs[i].astype(np.int64)
        logits = logits_only(model, tokens)
        z = logits[:-1].astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        picked = logp[np.arange(len(tokens) - 1), tokens[1:]]
        return float(-picked.sum())

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as ex:
        total = math.fsum(ex.map(nll, range(seqs.shape[0])))
    positions = seqs.shape[0] * (seqs.shape[1] - 1)
    return float(np.exp(total / positions))


def distribution_fidelity(original: Model, pruned: Model, prompts: np.ndarray,
                          k: int = 15, mode: str = "final",
                          threads: int | None = None,
                          metadata: dict | None = None,
                          csv_path=None) -> FidelityReport:
    """Compare next-token distributions; csv_path additionally dumps one
    js/jaccard row per evaluated position for external plotting."""
    if original.config.vocab_size != pruned.config.vocab_size:
        raise ShapeError("models have different vocabularies")
    if mode not in ("final", "all"):
        raise ValueError("mode must be 'final' or 'all'")
    if not 1 <= k <= original.config.vocab_size:
        raise ShapeError(f"k={k} out of range for V={original.config.vocab_size}")
    prompts = np.asarray(prompts)
    if prompts.ndim != 2 or prompts.size == 0:
        raise ValueError("empty prompt set")

    def metrics(i: int):
        tokens = prompts[i].astype(np.int64)
        lo = logits_only(original, tokens)
        lp = logits_only(pruned, tokens)
        rows = [lo.shape[0] - 1] if mode == "final" else range(lo.shape[0])
        js, jac = [], []
        for r in rows:
            p = nm.softmax_stable(lo[r])
            q = nm.softmax_stable(lp[r])
            js.append(nm.js_distance(p, q))
            jac.append(nm.topk_jaccard(p, q, k))
        return js, jac

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as ex:
        results = list(ex.map(metrics, range(prompts.shape[0])))
    all_js = [x for js, _ in results for x in js]
    all_jac = [x for _, jac in results for x in jac]

    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write("prompt,position,js_distance,topk_jaccard\n")
            for i, (js, jac) in enumerate(results):
                for r, (a, b) in enumerate(zip(js, jac)):
                    pos = prompts.shape[1] - 1 if mode == "final" else r
                    f.write(f"{i},{pos},{a!r},{b!r}\n")

    meta = {"js_log_base": 2, "mode": mode}
    meta.update(metadata or {})
    # fsum is exactly rounded, so the means cannot depend on prompt order
    return FidelityReport(
        mean_js=math.fsum(all_js) / len(all_js),
        mean_topk_jaccard=math.fsum(all_jac) / len(all_jac),
        k=k,
        prompt_count=int(prompts.shape[0]),
        positions_per_prompt=1 if mode == "final" else int(prompts.shape[1]),
        ppl_original=perplexity(original, prompts, threads=threads),
        ppl_pruned=perplexity(pruned, prompts, threads=threads),
        metadata=meta)


def prefill_seconds(model: Model, tokens: np.ndarray, repeats: int = 3) -> float:
    """Best-of-N wall-clock time of one full-sequence forward pass.

    Informational only; nothing in the toolkit asserts on timing.
    """
    import time

    best = float("inf")
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        logits_only(model, tokens)
        best = min(best, time.perf_counter() - started)
    return best


def oracle_damage(model: Model, calib: CalibrationSet, kind: CriterionKind,
                  threads: int | None = None) -> list[np.ndarray]:
    """Mean |exact ablation delta| per neuron across the calibration set."""
    def per_seq(i: int):
        return exact_ablation_deltas(model, calib.sequences[i].astype(np.int64), kind)

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as ex:
        results = list(ex.map(per_seq, range(calib.count)))
    totals = [np.zeros(dh, dtype=np.float64) for dh in model.config.d_hidden]
    for per_layer in results:
        for acc, d in zip(totals, per_layer):
            acc += np.abs(d)
    return [t / calib.count for t in totals]


def scoring_quality(model: Model, calib: CalibrationSet, kind: CriterionKind,
                    max_neurons: int = 4096, threads: int | None = None,
                    scores: list[np.ndarray] | None = None) -> dict:
    """Compare Taylor scores against the exact-ablation oracle.

    Returns the Spearman rank correlation over all neurons and the mean
    oracle damage of the top score decile minus the bottom decile.
    """
    total = int(sum(model.config.d_hidden))
    if total > max_neurons:
        raise ValueError(f"model has {total} neurons, above the {max_neurons} "
                         "exact-ablation guard")
    if scores is None:
        scores = accumulate_scores(model, calib, kind, threads=threads).layer_scores
    damage = oracle_damage(model, calib, kind, threads=threads)
    s = np.concatenate([np.asarray(x, dtype=np.float64) for x in scores])
    d = np.concatenate(damage)
    if np.ptp(s) == 0 or np.ptp(d) == 0:
        rho = 0.0  # degenerate: constant ranks carry no signal
    else:
        rho = float(spearmanr(s, d).statistic)
    decile = max(1, len(s) // 10)
    order = np.argsort(s, kind="stable")
    gap = float(d[order[-decile:]].mean() - d[order[:decile]].mean())
    return {"spearman": rho, "top_bottom_gap": gap, "neurons": total,
            "criterion": kind.value}
