"""Command-line pipeline: score -> prune -> eval, plus gradcheck and compare.

Every invocation writes exactly one manifest (`<out>.manifest.json` with the
final suffix swapped) recording the command, seed, input/output digests, and
wall-clock time. Report files themselves contain no timestamps, so fixed
inputs and seed reproduce them byte for byte.

Exit codes: 0 ok, 2 format/usage, 3 shape or vocab mismatch, 4 infeasible
ratio, 5 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backprop, evaluation, fileio, pruning, scoring
from .criteria import CriterionKind
from .fileio import FormatError
from .model import ModelConfig, forward, random_model
from .numerics import NumericError, ShapeError
from .pruning import InfeasibleRatio
from .scoring import CalibrationSet, evaluate_for_tokens

GRADCHECK_TOL = 1e-3


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _manifest_path(out: Path) -> Path:
    return out.with_suffix(".manifest.json")


def _emit_manifest(command: str, out: Path, seed: int, inputs: dict,
                   outputs: dict, started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "seed": seed,
        "inputs": {k: fileio.sha256_file(v) for k, v in inputs.items()},
        "outputs": {k: fileio.sha256_file(v) for k, v in outputs.items()},
        "wall_clock_seconds": time.perf_counter() - started,
    }
    manifest.update(extra or {})
    _write_json(_manifest_path(out), manifest)


def _load_calib(path: str) -> CalibrationSet:
    return CalibrationSet.from_tokens(fileio.load_tokens(path))


def cmd_score(args) -> int:
    started = time.perf_counter()
    model = fileio.load_model(args.model)
    calib = _load_calib(args.calib)
    kind = CriterionKind.parse(args.criterion)
    report = scoring.accumulate_scores(model, calib, kind,
                                       aggregation=args.agg, version=__version__)
    out = Path(args.out)
    out.write_text(report.to_json(), encoding="utf-8")
    if kind is CriterionKind.SD:
        top = max((float(s.max()) for s in report.layer_scores), default=0.0)
        if top <= 1e-6:
            print("warning: self-distillation against the model itself has zero "
                  "initial gradient; all importance scores are zero", file=sys.stderr)
    _emit_manifest("score", out, args.seed,
                   {"model": args.model, "calib": args.calib}, {"report": out},
                   started, {"criterion": kind.value, "aggregation": args.agg})
    return 0


def cmd_prune(args) -> int:
    started = time.perf_counter()
    model = fileio.load_model(args.model)
    report = scoring.ImportanceReport.from_json(Path(args.report).read_text(encoding="utf-8"))
    shape = tuple(len(s) for s in report.layer_scores)
    if shape != model.config.d_hidden:
        raise ShapeError(f"report layer widths {shape} do not match model "
                         f"d_hidden {model.config.d_hidden}")
    rho = args.rho if args.rho is not None else pruning.rho_from_overall(model, args.overall)
    plan = pruning.make_plan(report, rho)
    pruned = pruning.apply_plan(model, plan)
    out = Path(args.out)
    fileio.save_model(pruned, out)
    plan_path = out.with_suffix(".plan.json")
    plan_path.write_text(plan.to_json(), encoding="utf-8")
    _emit_manifest("prune", out, args.seed,
                   {"model": args.model, "report": args.report},
                   {"pruned": out, "plan": plan_path}, started,
                   {"rho": rho, "overall": args.overall})
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    original = fileio.load_model(args.original)
    pruned = fileio.load_model(args.pruned)
    _check_provenance(args)
    prompts = fileio.load_tokens(args.prompts)
    report = evaluation.distribution_fidelity(
        original, pruned, prompts, k=args.k, mode=args.mode,
        csv_path=args.csv,
        metadata={"original_digest": fileio.sha256_file(args.original),
                  "pruned_digest": fileio.sha256_file(args.pruned)})
    out = Path(args.out)
    _write_json(out, report.to_dict())
    _emit_manifest("eval", out, args.seed,
                   {"original": args.original, "pruned": args.pruned,
                    "prompts": args.prompts}, {"fidelity": out}, started,
                   {"k": args.k, "mode": args.mode})
    return 0


def _check_provenance(args) -> None:
    """Warn when the pruned model's manifest chain does not point at --original."""
    manifest = _manifest_path(Path(args.pruned))
    if not manifest.exists():
        return
    try:
        recorded = json.loads(manifest.read_text(encoding="utf-8"))["inputs"].get("model")
    except (json.JSONDecodeError, KeyError):
        return
    if recorded and recorded != fileio.sha256_file(args.original):
        print(f"warning: {args.pruned} was pruned from a model with digest "
              f"{recorded[:12]}..., not from {args.original}", file=sys.stderr)


def cmd_compare(args) -> int:
    started = time.perf_counter()
    model = fileio.load_model(args.model)
    calib = _load_calib(args.calib)
    kinds = [CriterionKind.parse(c) for c in args.criteria.split(",") if c]
    rhos = [float(r) for r in args.rhos.split(",") if r]
    if not kinds or not rhos:
        raise ValueError("compare needs at least one criterion and one rho")

    cells = []
    for kind in kinds:
        report = scoring.accumulate_scores(model, calib, kind, version=__version__)
        top = max((float(s.max()) for s in report.layer_scores), default=0.0)
        for rho in rhos:
            plan = pruning.make_plan(report, rho)
            pruned = pruning.apply_plan(model, plan)
            fidelity = evaluation.distribution_fidelity(model, pruned,
                                                        calib.sequences, k=args.k)
            cell = {
                "criterion": kind.value,
                "rho": rho,
                "mean_js": fidelity.mean_js,
                "mean_topk_jaccard": fidelity.mean_topk_jaccard,
                "ppl_original": fidelity.ppl_original,
                "ppl_pruned": fidelity.ppl_pruned,
            }
            if top <= 1e-6:
                cell["flag"] = "degenerate: zero scores"
            cells.append(cell)
    table = {"calib_digest": calib.digest, "k": args.k, "cells": cells}
    if CriterionKind.SD in kinds:
        table["sd_loss"] = "plain KL(teacher || student), no temperature"
    out = Path(args.out)
    _write_json(out, table)
    _emit_manifest("compare", out, args.seed,
                   {"model": args.model, "calib": args.calib}, {"table": out},
                   started, {"criteria": args.criteria, "rhos": args.rhos})
    return 0


def cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    model = fileio.load_model(args.model)
    kind = CriterionKind.parse(args.criterion)
    rng = np.random.default_rng(args.seed)
    t = min(8, model.config.max_seq)
    tokens = rng.integers(0, model.config.vocab_size, size=t).astype(np.int64)

    logits, cache = forward(model, tokens)
    _, grad = evaluate_for_tokens(kind, logits, tokens)
    analytic = backprop.backward_to_hidden(model, cache, grad)

    worst = {"rel_err": 0.0, "layer": -1, "neuron": -1, "position": -1}
    for _ in range(args.samples):
        layer = int(rng.integers(model.config.n_layers))
        neuron = int(rng.integers(model.config.d_hidden[layer]))
        position = int(rng.integers(t))
        a = float(analytic.layers[layer][position, neuron])
        f = backprop.finite_diff_hidden(model, tokens, kind, layer, neuron,
                                        position, epsilon=args.eps)
        rel = abs(a - f) / max(abs(a), abs(f), 1e-6)
        if rel > worst["rel_err"]:
            worst = {"rel_err": rel, "layer": layer, "neuron": neuron,
                     "position": position}
    ok = worst["rel_err"] <= GRADCHECK_TOL
    result = {"criterion": kind.value, "samples": args.samples, "eps": args.eps,
              "max_rel_err": worst["rel_err"], "tolerance": GRADCHECK_TOL,
              "worst": worst, "pass": ok}
    print(f"gradcheck {'PASS' if ok else 'FAIL'}: max rel err {worst['rel_err']:.3e} "
          f"at layer={worst['layer']} neuron={worst['neuron']} "
          f"position={worst['position']} (tol {GRADCHECK_TOL:.0e})")
    out = Path(args.out)
    _write_json(out, result)
    _emit_manifest("gradcheck", out, args.seed, {"model": args.model},
                   {"result": out}, started, {"criterion": kind.value})
    return 0 if ok else 5


def cmd_make_toy(args) -> int:
    started = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    config = ModelConfig(d_model=args.d_model, n_layers=args.layers,
                         n_heads=args.heads,
                         d_hidden=tuple([args.d_hidden] * args.layers),
                         vocab_size=args.vocab, max_seq=args.max_seq)
    model = random_model(config, rng)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.hfpw"
    calib_path = out_dir / "calib.tok"
    prompts_path = out_dir / "prompts.tok"
    fileio.save_model(model, model_path)
    fileio.save_tokens(rng.integers(0, args.vocab, size=(args.calib_n, args.seq_len),
                                    dtype=np.uint32), calib_path)
    fileio.save_tokens(rng.integers(0, args.vocab, size=(args.prompts_n, args.seq_len),
                                    dtype=np.uint32), prompts_path)
    _emit_manifest("make-toy", out_dir / "toy.json", args.seed, {},
                   {"model": model_path, "calib": calib_path,
                    "prompts": prompts_path}, started)
    print(f"wrote {model_path}, {calib_path}, {prompts_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfprune",
        description="Entropy-guided structured pruning of SwiGLU MLP neurons")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=0, help="RNG seed recorded in the manifest")

    p = sub.add_parser("score", help="accumulate per-neuron importance scores")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--criterion", required=True, choices=["ie", "ce", "sd"])
    p.add_argument("--out", required=True)
    p.add_argument("--agg", default="abs-pos", choices=list(scoring.AGGREGATIONS))
    add_seed(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", help="apply structural surgery from a score report")
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--rho", type=float, help="fraction of neurons to remove per layer")
    group.add_argument("--overall", type=float, help="whole-model parameter reduction target")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="measure original-vs-pruned distribution fidelity")
    p.add_argument("--original", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--mode", default="final", choices=["final", "all"])
    p.add_argument("--csv", default=None,
                   help="also write per-prompt js/jaccard rows to this CSV")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="score/prune/eval grid over criteria and ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--criteria", required=True, help="comma list, e.g. ie,ce,sd")
    p.add_argument("--rhos", required=True, help="comma list, e.g. 0.2,0.3")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--criterion", required=True, choices=["ie", "ce", "sd"])
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--out", default="gradcheck.json")
    add_seed(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-toy", help="generate a random model and token files "
                                        "(dev convenience, not a stable surface)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-hidden", type=int, default=64)
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--max-seq", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=16)
    p.add_argument("--calib-n", type=int, default=32)
    p.add_argument("--prompts-n", type=int, default=16)
    add_seed(p)
    p.set_defaults(func=cmd_make_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "samples", None) is not None and args.command == "gradcheck" \
            and args.samples < 1:
        print("error: --samples must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename or e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"error: bad file format: {e}", file=sys.stderr)
        return 2
    except InfeasibleRatio as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ShapeError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
