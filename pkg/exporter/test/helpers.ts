/** Test fixtures: tiny LLaMA-style checkpoints written as safetensors. */

import * as fs from "node:fs";
import * as path from "node:path";

import { SeededRng } from "../src/rng.js";

export interface ToyShape {
  hiddenSize: number;
  numLayers: number;
  numHeads: number;
  intermediateSize: number;
  vocabSize: number;
  maxPositionEmbeddings: number;
  tie?: boolean;
}

export const TOY: ToyShape = {
  hiddenSize: 32,
  numLayers: 2,
  numHeads: 4,
  intermediateSize: 48,
  vocabSize: 256,
  maxPositionEmbeddings: 64,
};

/** Serialize named float32 tensors in safetensors layout. */
export function writeSafetensors(
  file: string, tensors: Map<string, { shape: number[]; data: Float32Array }>,
): void {
  const header: Record<string, unknown> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const [name, tensor] of tensors) {
    const bytes = Buffer.alloc(4 * tensor.data.length);
    for (let i = 0; i < tensor.data.length; i++) {
      bytes.writeFloatLE(tensor.data[i], 4 * i);
    }
    header[name] = {
      dtype: "F32",
      shape: tensor.shape,
      data_offsets: [offset, offset + bytes.length],
    };
    offset += bytes.length;
    chunks.push(bytes);
  }
  const headerJson = Buffer.from(JSON.stringify(header), "utf-8");
  const size = Buffer.alloc(8);
  size.writeBigUInt64LE(BigInt(headerJson.length));
  fs.writeFileSync(file, Buffer.concat([size, headerJson, ...chunks]));
}

function randomTensor(rng: SeededRng, shape: number[], scale = 0.1) {
  const n = shape.reduce((a, b) => a * b, 1);
  const data = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    // Box-Muller from two uniform u32 draws
    const u1 = (rng.nextU32() + 1) / 4294967297;
    const u2 = rng.nextU32() / 4294967296;
    data[i] = Math.fround(
      scale * Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2));
  }
  return { shape, data };
}

function onesTensor(shape: number[]) {
  const n = shape.reduce((a, b) => a * b, 1);
  return { shape, data: new Float32Array(n).fill(1) };
}

/** Write config.json + model.safetensors for a random toy checkpoint. */
export function writeToyCheckpoint(
  dir: string, seed = 1, shape: ToyShape = TOY,
  configOverrides: Record<string, unknown> = {},
): void {
  fs.mkdirSync(dir, { recursive: true });
  const config = {
    architectures: ["LlamaForCausalLM"],
    model_type: "llama",
    hidden_size: shape.hiddenSize,
    num_hidden_layers: shape.numLayers,
    num_attention_heads: shape.numHeads,
    num_key_value_heads: shape.numHeads,
    intermediate_size: shape.intermediateSize,
    vocab_size: shape.vocabSize,
    max_position_embeddings: shape.maxPositionEmbeddings,
    rope_theta: 10000.0,
    rms_norm_eps: 1e-5,
    tie_word_embeddings: shape.tie === true,
    hidden_act: "silu",
    attention_bias: false,
    mlp_bias: false,
    ...configOverrides,
  };
  fs.writeFileSync(path.join(dir, "config.json"), JSON.stringify(config, null, 2));

  const rng = new SeededRng(seed);
  const d = shape.hiddenSize;
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  tensors.set("model.embed_tokens.weight", randomTensor(rng, [shape.vocabSize, d], 1.0));
  for (let i = 0; i < shape.numLayers; i++) {
    const p = `model.layers.${i}.`;
    tensors.set(p + "input_layernorm.weight", onesTensor([d]));
    for (const n of ["q_proj", "k_proj", "v_proj", "o_proj"]) {
      tensors.set(p + `self_attn.${n}.weight`, randomTensor(rng, [d, d]));
    }
    tensors.set(p + "post_attention_layernorm.weight", onesTensor([d]));
    tensors.set(p + "mlp.gate_proj.weight", randomTensor(rng, [shape.intermediateSize, d]));
    tensors.set(p + "mlp.up_proj.weight", randomTensor(rng, [shape.intermediateSize, d]));
    tensors.set(p + "mlp.down_proj.weight", randomTensor(rng, [d, shape.intermediateSize]));
  }
  tensors.set("model.norm.weight", onesTensor([d]));
  if (shape.tie !== true) {
    tensors.set("lm_head.weight", randomTensor(rng, [shape.vocabSize, d], 0.5));
  }
  writeSafetensors(path.join(dir, "model.safetensors"), tensors);
}
