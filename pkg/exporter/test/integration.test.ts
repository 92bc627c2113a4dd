/**
 * Cross-component checks: files written here must be accepted by the Python
 * toolkit through its public surfaces (file formats and CLI), and the
 * toolkit's own finite-difference gradient check must pass on an exported
 * model.
 */

import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { exportCorpus } from "../src/exportCorpus.js";
import { exportWeights } from "../src/exportWeights.js";
import { writeToyCheckpoint } from "./helpers.js";

const PYTHON = process.env.HFPRUNE_PYTHON ?? "python3";

function runToolkit(args: string[], cwd: string) {
  return spawnSync(PYTHON, ["-m", "hfprune", ...args],
                   { cwd, encoding: "utf-8", timeout: 180_000 });
}

function toolkitAvailable(): boolean {
  return spawnSync(PYTHON, ["-c", "import hfprune"], { encoding: "utf-8" }).status === 0;
}

let dir: string;
let modelPath: string;
let calibPath: string;

beforeAll(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), "integ-"));
  writeToyCheckpoint(path.join(dir, "ckpt"), 21);
  modelPath = path.join(dir, "model.hfpw");
  exportWeights({ checkpointDir: path.join(dir, "ckpt"), out: modelPath });

  const text = path.join(dir, "doc.txt");
  fs.writeFileSync(
    text, "Taylor expansions make cheap importance estimates. ".repeat(40));
  calibPath = path.join(dir, "calib.tok");
  exportCorpus({ textFiles: [text], tokenizerId: "byte", seqLen: 12,
                 count: 6, seed: 5, out: calibPath });
});

afterAll(() => {
  fs.rmSync(dir, { recursive: true, force: true });
});

describe.skipIf(!toolkitAvailable())("primary-toolkit integration", () => {
  it("exported model survives a toolkit load/save round trip byte-for-byte", () => {
    const script = [
      "import sys",
      "from hfprune import fileio",
      "m = fileio.load_model(sys.argv[1])",
      "fileio.save_model(m, sys.argv[2])",
    ].join("\n");
    const out = path.join(dir, "roundtrip.hfpw");
    const proc = spawnSync(PYTHON, ["-c", script, modelPath, out],
                           { encoding: "utf-8", timeout: 60_000 });
    expect(proc.status, proc.stderr).toBe(0);
    expect(fs.readFileSync(out).equals(fs.readFileSync(modelPath))).toBe(true);
  });

  it("exported model passes the toolkit gradient check", () => {
    const proc = runToolkit(
      ["gradcheck", "--model", modelPath, "--criterion", "ie",
       "--samples", "60", "--out", path.join(dir, "gc.json")], dir);
    expect(proc.status, proc.stderr + proc.stdout).toBe(0);
    expect(proc.stdout).toContain("PASS");
  });

  it("exported corpus drives the scoring pipeline end to end", () => {
    const report = path.join(dir, "report.json");
    const score = runToolkit(
      ["score", "--model", modelPath, "--calib", calibPath,
       "--criterion", "ie", "--out", report], dir);
    expect(score.status, score.stderr).toBe(0);

    const pruned = path.join(dir, "pruned.hfpw");
    const prune = runToolkit(
      ["prune", "--model", modelPath, "--report", report,
       "--rho", "0.25", "--out", pruned], dir);
    expect(prune.status, prune.stderr).toBe(0);

    const fidelity = path.join(dir, "fidelity.json");
    const evalProc = runToolkit(
      ["eval", "--original", modelPath, "--pruned", pruned,
       "--prompts", calibPath, "--k", "15", "--out", fidelity], dir);
    expect(evalProc.status, evalProc.stderr).toBe(0);

    const parsed = JSON.parse(fs.readFileSync(fidelity, "utf-8"));
    expect(parsed.mean_js).toBeGreaterThanOrEqual(0);
    expect(parsed.mean_js).toBeLessThanOrEqual(1);
    expect(parsed.mean_topk_jaccard).toBeGreaterThan(0);
  });
});
