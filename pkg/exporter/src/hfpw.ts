/**
 * Writer and independent reader for the ".hfpw" weight format consumed by
 * the pruning toolkit.
 *
 * Layout (all little-endian):
 *   "HFPW" | u32 version=1
 *   u32 d_model, n_layers, n_heads, vocab_size, max_seq
 *   f32 rope_theta, f32 rms_eps, u8 tied
 *   u32 d_hidden[n_layers]
 *   u32 tensor count, then per tensor:
 *     u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | u64 offset
 *   payload: raw row-major float32, offsets relative to payload start
 *
 * Tensor order and names are canonical so identical inputs always produce
 * byte-identical files. Linear weights are [out_features x in_features].
 */

import * as fs from "node:fs";

export const WEIGHT_MAGIC = "HFPW";
export const FORMAT_VERSION = 1;

export interface Tensor {
  dims: number[];
  data: Float32Array;
}

export interface HfpwModel {
  dModel: number;
  nLayers: number;
  nHeads: number;
  vocabSize: number;
  maxSeq: number;
  ropeTheta: number;
  rmsEps: number;
  tied: boolean;
  dHidden: number[];
  tensors: Map<string, Tensor>;
}

/** Canonical tensor order for a model with the given shape. */
export function canonicalTensorNames(nLayers: number, tied: boolean): string[] {
  const names = ["embedding"];
  for (let i = 0; i < nLayers; i++) {
    const p = `layers.${i}.`;
    names.push(
      p + "attn_norm", p + "W_q", p + "W_k", p + "W_v", p + "W_o",
      p + "mlp_norm", p + "W_gate", p + "W_up", p + "W_down",
    );
  }
  names.push("final_norm");
  if (!tied) names.push("lm_head");
  return names;
}

/** Expected dims per canonical tensor name. */
export function expectedDims(model: HfpwModel): Map<string, number[]> {
  const d = model.dModel;
  const out = new Map<string, number[]>();
  out.set("embedding", [model.vocabSize, d]);
  model.dHidden.forEach((dh, i) => {
    const p = `layers.${i}.`;
    out.set(p + "attn_norm", [d]);
    for (const n of ["W_q", "W_k", "W_v", "W_o"]) out.set(p + n, [d, d]);
    out.set(p + "mlp_norm", [d]);
    out.set(p + "W_gate", [dh, d]);
    out.set(p + "W_up", [dh, d]);
    out.set(p + "W_down", [d, dh]);
  });
  out.set("final_norm", [d]);
  if (!model.tied) out.set("lm_head", [model.vocabSize, d]);
  return out;
}

function numel(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

function validate(model: HfpwModel): void {
  if (model.dHidden.length !== model.nLayers) {
    throw new Error(`dHidden has ${model.dHidden.length} entries for ${model.nLayers} layers`);
  }
  if (model.dModel % model.nHeads !== 0) {
    throw new Error(`d_model ${model.dModel} not divisible by n_heads ${model.nHeads}`);
  }
  const expected = expectedDims(model);
  for (const [name, dims] of expected) {
    const tensor = model.tensors.get(name);
    if (!tensor) throw new Error(`missing tensor ${name}`);
    if (tensor.dims.length !== dims.length
        || tensor.dims.some((v, i) => v !== dims[i])) {
      throw new Error(`tensor ${name} has dims [${tensor.dims}], expected [${dims}]`);
    }
    if (tensor.data.length !== numel(dims)) {
      throw new Error(`tensor ${name} data length ${tensor.data.length} != ${numel(dims)}`);
    }
  }
  for (const name of model.tensors.keys()) {
    if (!expected.has(name)) throw new Error(`unexpected tensor ${name}`);
  }
}

/** Serialize the model to the exact on-disk byte layout. */
export function hfpwBytes(model: HfpwModel): Buffer {
  validate(model);
  const names = canonicalTensorNames(model.nLayers, model.tied);

  const headerSize = 4 + 4 + 5 * 4 + 2 * 4 + 1 + 4 * model.nLayers;
  let tableSize = 4;
  let payloadSize = 0;
  for (const name of names) {
    const tensor = model.tensors.get(name)!;
    tableSize += 2 + Buffer.byteLength(name, "utf-8") + 1 + 4 * tensor.dims.length + 8;
    payloadSize += 4 * tensor.data.length;
  }

  const buf = Buffer.alloc(headerSize + tableSize + payloadSize);
  let at = 0;
  buf.write(WEIGHT_MAGIC, at, "ascii"); at += 4;
  at = buf.writeUInt32LE(FORMAT_VERSION, at);
  at = buf.writeUInt32LE(model.dModel, at);
  at = buf.writeUInt32LE(model.nLayers, at);
  at = buf.writeUInt32LE(model.nHeads, at);
  at = buf.writeUInt32LE(model.vocabSize, at);
  at = buf.writeUInt32LE(model.maxSeq, at);
  at = buf.writeFloatLE(model.ropeTheta, at);
  at = buf.writeFloatLE(model.rmsEps, at);
  at = buf.writeUInt8(model.tied ? 1 : 0, at);
  for (const dh of model.dHidden) at = buf.writeUInt32LE(dh, at);

  at = buf.writeUInt32LE(names.length, at);
  let offset = 0;
  for (const name of names) {
    const tensor = model.tensors.get(name)!;
    const raw = Buffer.from(name, "utf-8");
    at = buf.writeUInt16LE(raw.length, at);
    raw.copy(buf, at); at += raw.length;
    at = buf.writeUInt8(tensor.dims.length, at);
    for (const dim of tensor.dims) at = buf.writeUInt32LE(dim, at);
    at = buf.writeBigUInt64LE(BigInt(offset), at);
    offset += 4 * tensor.data.length;
  }

  for (const name of names) {
    const data = model.tensors.get(name)!.data;
    for (let i = 0; i < data.length; i++) {
      at = buf.writeFloatLE(data[i], at);
    }
  }
  return buf;
}

export function writeHfpw(path: string, model: HfpwModel): void {
  fs.writeFileSync(path, hfpwBytes(model));
}

/**
 * Independent reader used by the verification pass. Parses and validates
 * the whole file rather than trusting the writer.
 */
export function readHfpw(path: string): HfpwModel {
  const buf = fs.readFileSync(path);
  let at = 0;
  const need = (n: number, what: string) => {
    if (at + n > buf.length) throw new Error(`truncated file while reading ${what}`);
  };

  need(8, "magic");
  if (buf.toString("ascii", 0, 4) !== WEIGHT_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(buf.toString("ascii", 0, 4))}`);
  }
  at = 4;
  const version = buf.readUInt32LE(at); at += 4;
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);

  need(29, "config");
  const dModel = buf.readUInt32LE(at); at += 4;
  const nLayers = buf.readUInt32LE(at); at += 4;
  const nHeads = buf.readUInt32LE(at); at += 4;
  const vocabSize = buf.readUInt32LE(at); at += 4;
  const maxSeq = buf.readUInt32LE(at); at += 4;
  const ropeTheta = buf.readFloatLE(at); at += 4;
  const rmsEps = buf.readFloatLE(at); at += 4;
  const tied = buf.readUInt8(at) !== 0; at += 1;
  need(4 * nLayers, "d_hidden table");
  const dHidden: number[] = [];
  for (let i = 0; i < nLayers; i++) { dHidden.push(buf.readUInt32LE(at)); at += 4; }

  need(4, "tensor table");
  const count = buf.readUInt32LE(at); at += 4;
  const entries: Array<{ name: string; dims: number[]; offset: number }> = [];
  for (let i = 0; i < count; i++) {
    need(2, "tensor table");
    const nameLen = buf.readUInt16LE(at); at += 2;
    need(nameLen + 1, "tensor table");
    const name = buf.toString("utf-8", at, at + nameLen); at += nameLen;
    const rank = buf.readUInt8(at); at += 1;
    need(4 * rank + 8, "tensor table");
    const dims: number[] = [];
    for (let r = 0; r < rank; r++) { dims.push(buf.readUInt32LE(at)); at += 4; }
    const offset = Number(buf.readBigUInt64LE(at)); at += 8;
    entries.push({ name, dims, offset });
  }

  const payloadStart = at;
  const tensors = new Map<string, Tensor>();
  for (const entry of entries) {
    const n = numel(entry.dims);
    const start = payloadStart + entry.offset;
    if (start + 4 * n > buf.length) {
      throw new Error(`tensor ${entry.name} payload extends past end of file`);
    }
    const data = new Float32Array(n);
    for (let i = 0; i < n; i++) data[i] = buf.readFloatLE(start + 4 * i);
    tensors.set(entry.name, { dims: entry.dims, data });
  }

  const model: HfpwModel = {
    dModel, nLayers, nHeads, vocabSize, maxSeq, ropeTheta, rmsEps, tied,
    dHidden, tensors,
  };
  validate(model);
  return model;
}
