/**
 * Writer and independent reader for the ".tok" token-corpus format:
 *   "HFTK" | u32 version=1 | u32 seq_len | u32 seq_count | u32 ids (row-major)
 */

import * as fs from "node:fs";

export const TOKEN_MAGIC = "HFTK";
export const FORMAT_VERSION = 1;

export interface TokenCorpus {
  seqLen: number;
  count: number;
  ids: Uint32Array; // count * seqLen, row-major
}

export function tokBytes(corpus: TokenCorpus): Buffer {
  const { seqLen, count, ids } = corpus;
  if (seqLen < 1 || count < 1) throw new Error("corpus must be non-empty");
  if (ids.length !== seqLen * count) {
    throw new Error(`ids length ${ids.length} != ${count} x ${seqLen}`);
  }
  const buf = Buffer.alloc(16 + 4 * ids.length);
  buf.write(TOKEN_MAGIC, 0, "ascii");
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(seqLen, 8);
  buf.writeUInt32LE(count, 12);
  for (let i = 0; i < ids.length; i++) buf.writeUInt32LE(ids[i], 16 + 4 * i);
  return buf;
}

export function writeTok(path: string, corpus: TokenCorpus): void {
  fs.writeFileSync(path, tokBytes(corpus));
}

/** Independent reader for the verification pass. */
export function readTok(path: string): TokenCorpus {
  const buf = fs.readFileSync(path);
  if (buf.length < 16) throw new Error("truncated file while reading header");
  if (buf.toString("ascii", 0, 4) !== TOKEN_MAGIC) {
    throw new Error(`bad magic ${JSON.stringify(buf.toString("ascii", 0, 4))}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const seqLen = buf.readUInt32LE(8);
  const count = buf.readUInt32LE(12);
  if (seqLen < 1 || count < 1) throw new Error("header declares an empty corpus");
  if (buf.length !== 16 + 4 * seqLen * count) {
    throw new Error(`payload size ${buf.length - 16} != 4 * ${count} * ${seqLen}`);
  }
  const ids = new Uint32Array(seqLen * count);
  for (let i = 0; i < ids.length; i++) ids[i] = buf.readUInt32LE(16 + 4 * i);
  return { seqLen, count, ids };
}
