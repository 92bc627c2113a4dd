/**
 * Text -> ".tok" corpus export.
 *
 * Each input file is one document. Documents shorter than the sequence
 * length are skipped (and counted); each output sequence is a uniformly
 * random fixed-length crop of a uniformly chosen eligible document, drawn
 * with replacement. Everything is driven by one seed, so identical inputs
 * produce byte-identical corpora.
 */

import * as fs from "node:fs";

import { SeededRng } from "./rng.js";
import { getTokenizer } from "./tokenizer.js";
import { TokenCorpus, writeTok } from "./tok.js";

export interface CorpusSpec {
  textFiles: string[];
  tokenizerId: string;
  seqLen: number;
  count: number;
  seed: number;
  out: string;
}

export interface CorpusSummary {
  written: number;
  skippedShortDocuments: number;
  eligibleDocuments: number;
  vocabSize: number;
}

export function exportCorpus(spec: CorpusSpec): CorpusSummary {
  if (spec.seqLen < 1) throw new Error("seq-len must be >= 1");
  if (spec.count < 1) throw new Error("count must be >= 1");
  const tokenizer = getTokenizer(spec.tokenizerId);

  const documents: Uint32Array[] = [];
  let skipped = 0;
  for (const file of spec.textFiles) {
    const tokens = tokenizer.encode(fs.readFileSync(file, "utf-8"));
    if (tokens.length < spec.seqLen) {
      skipped += 1;
      continue;
    }
    documents.push(tokens);
  }
  if (documents.length === 0) {
    throw new Error(
      `insufficient text: 0 of the requested ${spec.count} sequences are `
      + `achievable (no document reaches ${spec.seqLen} tokens; `
      + `${skipped} skipped as too short)`);
  }

  const rng = new SeededRng(spec.seed);
  const ids = new Uint32Array(spec.count * spec.seqLen);
  for (let i = 0; i < spec.count; i++) {
    const doc = documents[rng.nextBelow(documents.length)];
    const offset = rng.nextBelow(doc.length - spec.seqLen + 1);
    ids.set(doc.subarray(offset, offset + spec.seqLen), i * spec.seqLen);
  }

  const corpus: TokenCorpus = { seqLen: spec.seqLen, count: spec.count, ids };
  writeTok(spec.out, corpus);
  return {
    written: spec.count,
    skippedShortDocuments: skipped,
    eligibleDocuments: documents.length,
    vocabSize: tokenizer.vocabSize,
  };
}
