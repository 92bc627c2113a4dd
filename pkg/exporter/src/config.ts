/**
 * HF-style config.json loading and architecture compatibility checks.
 *
 * Only plain LLaMA-style decoders are exportable: SwiGLU MLPs, no attention
 * or MLP biases, full multi-head attention (no GQA), SiLU activation, plain
 * RoPE. Anything else is refused with the offending features listed.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface CheckpointConfig {
  modelType: string;
  hiddenSize: number;
  numLayers: number;
  numHeads: number;
  numKvHeads: number;
  intermediateSize: number;
  vocabSize: number;
  maxPositionEmbeddings: number;
  ropeTheta: number;
  rmsNormEps: number;
  tieWordEmbeddings: boolean;
  hiddenAct: string;
  attentionBias: boolean;
  mlpBias: boolean;
  ropeScaling: unknown;
}

export class ExportRefusal extends Error {
  constructor(public readonly features: string[]) {
    super(`source architecture is not LLaMA-style: ${features.join("; ")}`);
    this.name = "ExportRefusal";
  }
}

export function loadCheckpointConfig(checkpointDir: string): CheckpointConfig {
  const raw = JSON.parse(
    fs.readFileSync(path.join(checkpointDir, "config.json"), "utf-8"));
  const require = (key: string): number => {
    if (typeof raw[key] !== "number") throw new Error(`config.json missing numeric ${key}`);
    return raw[key];
  };
  const numHeads = require("num_attention_heads");
  return {
    modelType: raw.model_type ?? "unknown",
    hiddenSize: require("hidden_size"),
    numLayers: require("num_hidden_layers"),
    numHeads,
    numKvHeads: typeof raw.num_key_value_heads === "number" ? raw.num_key_value_heads : numHeads,
    intermediateSize: require("intermediate_size"),
    vocabSize: require("vocab_size"),
    maxPositionEmbeddings: require("max_position_embeddings"),
    ropeTheta: typeof raw.rope_theta === "number" ? raw.rope_theta : 10000.0,
    rmsNormEps: typeof raw.rms_norm_eps === "number" ? raw.rms_norm_eps : 1e-5,
    tieWordEmbeddings: raw.tie_word_embeddings === true,
    hiddenAct: raw.hidden_act ?? "silu",
    attentionBias: raw.attention_bias === true || raw.bias === true,
    mlpBias: raw.mlp_bias === true,
    ropeScaling: raw.rope_scaling ?? null,
  };
}

/** Returns the list of incompatible features (empty means exportable). */
export function incompatibilities(config: CheckpointConfig): string[] {
  const problems: string[] = [];
  if (config.modelType !== "llama") {
    problems.push(`unsupported model_type "${config.modelType}"`);
  }
  if (config.attentionBias) problems.push("qkv bias present");
  if (config.mlpBias) problems.push("mlp bias present");
  if (config.numKvHeads !== config.numHeads) {
    problems.push(`grouped-query attention (${config.numKvHeads} kv heads != ${config.numHeads} heads)`);
  }
  if (config.hiddenAct !== "silu") {
    problems.push(`activation "${config.hiddenAct}" is not silu`);
  }
  if (config.ropeScaling !== null) problems.push("rope_scaling present");
  if (config.hiddenSize % config.numHeads !== 0) {
    problems.push("hidden_size not divisible by num_attention_heads");
  }
  if ((config.hiddenSize / config.numHeads) % 2 !== 0) {
    problems.push("odd head dimension (RoPE needs even)");
  }
  return problems;
}

export function checkCompatible(config: CheckpointConfig): void {
  const problems = incompatibilities(config);
  if (problems.length > 0) throw new ExportRefusal(problems);
}
