/**
 * Minimal safetensors parser: 8-byte little-endian header size, JSON header
 * mapping tensor names to {dtype, shape, data_offsets}, then raw data.
 * F32 is read verbatim; F16 and BF16 widen to f32 exactly.
 */

import * as fs from "node:fs";

export interface SafetensorsEntry {
  dtype: string;
  shape: number[];
  dataOffsets: [number, number];
}

export interface SafetensorsFile {
  entries: Map<string, SafetensorsEntry>;
  data: Buffer; // tensor payload (after the header)
}

export function parseSafetensors(path: string): SafetensorsFile {
  const buf = fs.readFileSync(path);
  if (buf.length < 8) throw new Error("truncated safetensors header");
  const headerSize = Number(buf.readBigUInt64LE(0));
  if (8 + headerSize > buf.length) throw new Error("safetensors header extends past end");
  const header = JSON.parse(buf.toString("utf-8", 8, 8 + headerSize));
  const entries = new Map<string, SafetensorsEntry>();
  for (const [name, value] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const v = value as { dtype: string; shape: number[]; data_offsets: [number, number] };
    entries.set(name, { dtype: v.dtype, shape: v.shape, dataOffsets: v.data_offsets });
  }
  return { entries, data: buf.subarray(8 + headerSize) };
}

export function f16ToF32(bits: number): number {
  const sign = (bits & 0x8000) >> 15;
  const exp = (bits & 0x7c00) >> 10;
  const frac = bits & 0x03ff;
  let value: number;
  if (exp === 0) {
    value = frac * 2 ** -24; // subnormal
  } else if (exp === 0x1f) {
    value = frac ? NaN : Infinity;
  } else {
    value = (1 + frac / 1024) * 2 ** (exp - 15);
  }
  return sign ? -value : value;
}

const BF16_SCRATCH = new DataView(new ArrayBuffer(4));

export function bf16ToF32(bits: number): number {
  BF16_SCRATCH.setUint32(0, (bits & 0xffff) << 16, false);
  return BF16_SCRATCH.getFloat32(0, false);
}

/** Read one tensor as float32 (exact widening for F16/BF16). */
export function readTensorF32(file: SafetensorsFile, name: string): Float32Array {
  const entry = file.entries.get(name);
  if (!entry) throw new Error(`tensor ${name} not present`);
  const [start, end] = entry.dataOffsets;
  const bytes = file.data.subarray(start, end);
  const n = entry.shape.reduce((a, b) => a * b, 1);
  const out = new Float32Array(n);
  switch (entry.dtype) {
    case "F32":
      if (bytes.length !== 4 * n) throw new Error(`tensor ${name} byte size mismatch`);
      for (let i = 0; i < n; i++) out[i] = bytes.readFloatLE(4 * i);
      return out;
    case "F16":
      if (bytes.length !== 2 * n) throw new Error(`tensor ${name} byte size mismatch`);
      for (let i = 0; i < n; i++) out[i] = f16ToF32(bytes.readUInt16LE(2 * i));
      return out;
    case "BF16":
      if (bytes.length !== 2 * n) throw new Error(`tensor ${name} byte size mismatch`);
      for (let i = 0; i < n; i++) out[i] = bf16ToF32(bytes.readUInt16LE(2 * i));
      return out;
    default:
      throw new Error(`tensor ${name} has unsupported dtype ${entry.dtype}`);
  }
}
