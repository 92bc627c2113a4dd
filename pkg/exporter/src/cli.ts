#!/usr/bin/env node
/**
 * Exporter CLI.
 *
 * Usage:
 *   node dist/cli.js weights --checkpoint DIR --out model.hfpw
 *                            [--max-seq N] [--seed S] [--verify]
 *   node dist/cli.js corpus  --text FILE [--text FILE ...] --tokenizer byte
 *                            --seq-len T --count N --seed S --out corpus.tok
 *                            [--verify]
 */

import { parseArgs } from "node:util";

import { ExportRefusal } from "./config.js";
import { exportCorpus } from "./exportCorpus.js";
import { exportWeights, verifyExport } from "./exportWeights.js";
import { readTok } from "./tok.js";

function usageError(message: string): never {
  console.error(`error: ${message}`);
  process.exit(2);
}

function runWeights(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: "string" },
      out: { type: "string" },
      "max-seq": { type: "string" },
      seed: { type: "string", default: "0" },
      verify: { type: "boolean", default: false },
    },
  });
  if (!values.checkpoint || !values.out) {
    usageError("weights needs --checkpoint and --out");
  }
  const summary = exportWeights({
    checkpointDir: values.checkpoint,
    out: values.out,
    maxSeqCap: values["max-seq"] ? Number(values["max-seq"]) : undefined,
    seed: Number(values.seed),
  });
  console.log(
    `wrote ${values.out}: ${summary.tensorCount} tensors, `
    + `${summary.bytesWritten} bytes, ${summary.verifiedSlices} slices verified`);
  if (values.verify) {
    verifyExport(values.out, values.checkpoint);
    console.log("full verification passed: every tensor matches the source");
  }
  return 0;
}

function runCorpus(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      text: { type: "string", multiple: true },
      tokenizer: { type: "string", default: "byte" },
      "seq-len": { type: "string" },
      count: { type: "string" },
      seed: { type: "string", default: "0" },
      out: { type: "string" },
      verify: { type: "boolean", default: false },
    },
  });
  if (!values.text?.length || !values["seq-len"] || !values.count || !values.out) {
    usageError("corpus needs --text, --seq-len, --count, and --out");
  }
  const summary = exportCorpus({
    textFiles: values.text,
    tokenizerId: values.tokenizer!,
    seqLen: Number(values["seq-len"]),
    count: Number(values.count),
    seed: Number(values.seed),
    out: values.out,
  });
  console.log(
    `wrote ${values.out}: ${summary.written} sequences of ${values["seq-len"]} `
    + `tokens (${summary.eligibleDocuments} documents used, `
    + `${summary.skippedShortDocuments} skipped as too short)`);
  if (values.verify) {
    const corpus = readTok(values.out!);
    if (corpus.count !== summary.written) throw new Error("verification failed: count");
    console.log("verification passed: corpus re-parses cleanly");
  }
  return 0;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "weights") return runWeights(rest);
    if (command === "corpus") return runCorpus(rest);
    usageError(`unknown command ${JSON.stringify(command ?? "")} (weights | corpus)`);
  } catch (err) {
    if (err instanceof ExportRefusal) {
      console.error(`refused: ${err.message}`);
      return 3;
    }
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

const isDirectRun = process.argv[1] !== undefined
  && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
