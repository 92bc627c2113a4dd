/**
 * Checkpoint conversion: HF-style safetensors -> ".hfpw".
 *
 * Tensors map verbatim (both sides store linear weights
 * [out_features x in_features] and use half-split RoPE pairing), so every
 * exported value equals the source value after an f32 cast. A verification
 * pass re-reads the written file with the independent reader and compares
 * randomly sampled slices against the source bit for bit.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CheckpointConfig, checkCompatible, loadCheckpointConfig } from "./config.js";
import { HfpwModel, Tensor, canonicalTensorNames, hfpwBytes, readHfpw } from "./hfpw.js";
import { SafetensorsFile, parseSafetensors, readTensorF32 } from "./safetensors.js";
import { SeededRng } from "./rng.js";

export interface ExportSpec {
  checkpointDir: string; // must contain config.json and model.safetensors
  out: string;
  maxSeqCap?: number;    // optional cap on max_seq
  verifySlices?: number; // sampled slices in the post-write check
  seed?: number;         // slice sampling seed
}

export interface ExportSummary {
  tensorCount: number;
  bytesWritten: number;
  verifiedSlices: number;
  config: CheckpointConfig;
}

const HF_NAME: Record<string, (layer: number) => string> = {
  attn_norm: (i) => `model.layers.${i}.input_layernorm.weight`,
  W_q: (i) => `model.layers.${i}.self_attn.q_proj.weight`,
  W_k: (i) => `model.layers.${i}.self_attn.k_proj.weight`,
  W_v: (i) => `model.layers.${i}.self_attn.v_proj.weight`,
  W_o: (i) => `model.layers.${i}.self_attn.o_proj.weight`,
  mlp_norm: (i) => `model.layers.${i}.post_attention_layernorm.weight`,
  W_gate: (i) => `model.layers.${i}.mlp.gate_proj.weight`,
  W_up: (i) => `model.layers.${i}.mlp.up_proj.weight`,
  W_down: (i) => `model.layers.${i}.mlp.down_proj.weight`,
};

/** The source tensor name feeding a given .hfpw tensor. */
export function sourceNameFor(hfpwName: string): string {
  if (hfpwName === "embedding") return "model.embed_tokens.weight";
  if (hfpwName === "final_norm") return "model.norm.weight";
  if (hfpwName === "lm_head") return "lm_head.weight";
  const match = hfpwName.match(/^layers\.(\d+)\.(.+)$/);
  if (!match) throw new Error(`unknown tensor name ${hfpwName}`);
  const build = HF_NAME[match[2]];
  if (!build) throw new Error(`unknown tensor name ${hfpwName}`);
  return build(Number(match[1]));
}

function expectedSourceShape(name: string, config: CheckpointConfig): number[] {
  const d = config.hiddenSize;
  if (name === "embedding" || name === "lm_head") return [config.vocabSize, d];
  if (name === "final_norm") return [d];
  if (name.endsWith("attn_norm") || name.endsWith("mlp_norm")) return [d];
  if (name.endsWith("W_gate") || name.endsWith("W_up")) return [config.intermediateSize, d];
  if (name.endsWith("W_down")) return [d, config.intermediateSize];
  return [d, d];
}

function buildModel(config: CheckpointConfig, source: SafetensorsFile,
                    maxSeqCap?: number): HfpwModel {
  const model: HfpwModel = {
    dModel: config.hiddenSize,
    nLayers: config.numLayers,
    nHeads: config.numHeads,
    vocabSize: config.vocabSize,
    maxSeq: maxSeqCap
      ? Math.min(maxSeqCap, config.maxPositionEmbeddings)
      : config.maxPositionEmbeddings,
    ropeTheta: Math.fround(config.ropeTheta),
    rmsEps: Math.fround(config.rmsNormEps),
    tied: config.tieWordEmbeddings,
    dHidden: Array(config.numLayers).fill(config.intermediateSize),
    tensors: new Map<string, Tensor>(),
  };
  for (const name of canonicalTensorNames(model.nLayers, model.tied)) {
    const srcName = sourceNameFor(name);
    const entry = source.entries.get(srcName);
    if (!entry) throw new Error(`checkpoint is missing tensor ${srcName}`);
    const dims = expectedSourceShape(name, config);
    if (entry.shape.length !== dims.length
        || entry.shape.some((v, i) => v !== dims[i])) {
      throw new Error(
        `tensor ${srcName} has shape [${entry.shape}], expected [${dims}]`);
    }
    model.tensors.set(name, { dims, data: readTensorF32(source, srcName) });
  }
  return model;
}

function sameBits(a: number, b: number): boolean {
  return Math.fround(a) === Math.fround(b)
    || (Number.isNaN(a) && Number.isNaN(b));
}

/**
 * Re-read the written file with the independent reader and compare sampled
 * row slices to the source, exact after the f32 cast.
 */
function verifySlices(outPath: string, source: SafetensorsFile, count: number,
                      seed: number): number {
  const written = readHfpw(outPath);
  const names = canonicalTensorNames(written.nLayers, written.tied);
  const rng = new SeededRng(seed);
  for (let i = 0; i < count; i++) {
    const name = names[rng.nextBelow(names.length)];
    const tensor = written.tensors.get(name)!;
    const src = readTensorF32(source, sourceNameFor(name));
    const rowLen = tensor.dims.length === 1 ? tensor.dims[0]
      : tensor.dims[tensor.dims.length - 1];
    const rows = tensor.data.length / rowLen;
    const row = rng.nextBelow(rows);
    for (let j = 0; j < rowLen; j++) {
      const at = row * rowLen + j;
      if (!sameBits(tensor.data[at], src[at])) {
        throw new Error(
          `verification failed: ${name}[${row}, ${j}] = ${tensor.data[at]} `
          + `does not match source ${src[at]}`);
      }
    }
  }
  return count;
}

export function exportWeights(spec: ExportSpec): ExportSummary {
  const config = loadCheckpointConfig(spec.checkpointDir);
  checkCompatible(config);
  const source = parseSafetensors(
    path.join(spec.checkpointDir, "model.safetensors"));
  const model = buildModel(config, source, spec.maxSeqCap);
  const bytes = hfpwBytes(model);
  fs.writeFileSync(spec.out, bytes);
  const verified = verifySlices(spec.out, source, spec.verifySlices ?? 16,
                                spec.seed ?? 0);
  return {
    tensorCount: model.tensors.size,
    bytesWritten: bytes.length,
    verifiedSlices: verified,
    config,
  };
}

/** Full --verify pass: independent re-read plus whole-tensor comparison. */
export function verifyExport(outPath: string, checkpointDir: string): void {
  const written = readHfpw(outPath); // validates structure and shapes
  const source = parseSafetensors(path.join(checkpointDir, "model.safetensors"));
  for (const name of canonicalTensorNames(written.nLayers, written.tied)) {
    const tensor = written.tensors.get(name)!;
    const src = readTensorF32(source, sourceNameFor(name));
    if (src.length !== tensor.data.length) {
      throw new Error(`tensor ${name}: size mismatch against source`);
    }
    for (let i = 0; i < src.length; i++) {
      if (!sameBits(tensor.data[i], src[i])) {
        throw new Error(`tensor ${name}: element ${i} differs from source`);
      }
    }
  }
}
