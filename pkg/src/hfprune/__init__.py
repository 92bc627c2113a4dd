"""Structured MLP-neuron pruning for SwiGLU decoder transformers.

Scores hidden neurons by first-order Taylor expansion of the next-token
distribution's information entropy, removes the lowest-scoring ones by
exact structural surgery, and measures how faithfully the pruned model
preserves the original prediction distribution.
"""

from .version import TOOLKIT_VERSION as __version__

from .criteria import CriterionKind, evaluate, requires_labels
from .fileio import load_model, load_tokens, save_model, save_tokens
from .model import Model, ModelConfig, forward, logits_only, param_counts, random_model
from .pruning import PrunePlan, apply_plan, make_plan, rho_from_overall
from .scoring import CalibrationSet, ImportanceReport, accumulate_scores
from .evaluation import FidelityReport, distribution_fidelity, perplexity, scoring_quality

__all__ = [
    "CriterionKind", "evaluate", "requires_labels",
    "load_model", "load_tokens", "save_model", "save_tokens",
    "Model", "ModelConfig", "forward", "logits_only", "param_counts", "random_model",
    "PrunePlan", "apply_plan", "make_plan", "rho_from_overall",
    "CalibrationSet", "ImportanceReport", "accumulate_scores",
    "FidelityReport", "distribution_fidelity", "perplexity", "scoring_quality",
    "__version__",
]
