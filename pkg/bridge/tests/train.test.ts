import { execSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { loadCorpus } from "../src/corpus.js";
import { BpeTokenizer } from "../src/tokenizer.js";
import {
  DESK_TRAINER,
  TrainResult,
  TrainerConfig,
  encodeDocs,
  meanValLoss,
  train,
} from "../src/train.js";

// The corpora come from the Python package's command-line interface, which
// the bridge treats as an external data source; `searchstream` must be on
// PATH for this file.

const TEST_TRAINER: TrainerConfig = {
  ...DESK_TRAINER,
  steps: 60,
  learningRate: 6e-3,
  valTexts: 16,
};

let dir: string;
let texts: string[];
let result: TrainResult;

beforeAll(async () => {
  dir = mkdtempSync(join(tmpdir(), "bridge-train-"));
  execSync(`searchstream make-pretrain --count 2000 --out ${join(dir, "pretrain")}`, {
    stdio: "pipe",
  });
  execSync(
    `searchstream hint-sweep --count 150 --max-hints 3 --out-dir ${join(dir, "sweep")} ` +
      `--out ${join(dir, "sweep", "report.json")}`,
    { stdio: "pipe" }
  );
  texts = loadCorpus(join(dir, "pretrain", "corpus.txt"));
  result = await train(texts, TEST_TRAINER);
});

afterAll(() => {
  rmSync(dir, { recursive: true, force: true });
});

describe("fitting the search corpus", () => {
  it("loads one document per generated record", () => {
    expect(texts).toHaveLength(2000);
    for (const doc of texts.slice(0, 20)) {
      expect(doc.startsWith("Current State: ")).toBe(true);
    }
  });

  it("cuts held-out loss by at least 30%", () => {
    const reduction = 1 - result.valLossFinal / result.valLossInit;
    console.info(
      `val loss ${result.valLossInit.toFixed(4)} -> ${result.valLossFinal.toFixed(4)} ` +
        `(reduction ${(reduction * 100).toFixed(1)}%)`
    );
    expect(result.valLossInit).toBeGreaterThan(0);
    expect(reduction).toBeGreaterThanOrEqual(0.3);
  });

  it("improves the running training loss", () => {
    expect(result.trainLossLast).toBeLessThan(result.trainLossFirst);
  });

  it("assigns higher loss to solved trajectories seeded with longer optimal prefixes", async () => {
    const losses: number[] = [];
    for (const n of [0, 1, 2, 3]) {
      const docs = loadCorpus(join(dir, "sweep", `corpus_${n}.txt`))
        .filter((t) => t.endsWith("equal: Goal Reached"))
        .map((t) => t.slice(0, result.model.config.contextLength - 1));
      expect(docs.length).toBeGreaterThan(10);
      losses.push(meanValLoss(result.model, encodeDocs(result.tokenizer, docs)));
      await new Promise<void>((resolve) => setImmediate(resolve));
    }
    console.info(`loss by prefix length: ${losses.map((l) => l.toFixed(4)).join(" ")}`);
    expect(losses[3]).toBeGreaterThan(losses[0]);
    for (let n = 1; n < losses.length; n++) {
      expect(losses[n]).toBeGreaterThanOrEqual(losses[n - 1] - 5e-3);
    }
  });
});

describe("reproducibility", () => {
  const tiny: TrainerConfig = {
    dModel: 16,
    heads: 2,
    layers: 1,
    contextLength: 128,
    units: "char",
    bpeMerges: 0,
    seqLen: 64,
    batchSize: 2,
    steps: 5,
    learningRate: 3e-3,
    seed: 3,
    valTexts: 4,
  };

  it("the same seed trains to the same losses", async () => {
    const a = await train(texts.slice(0, 80), tiny);
    const b = await train(texts.slice(0, 80), tiny);
    expect(a.trainLossFirst).toBe(b.trainLossFirst);
    expect(a.trainLossLast).toBe(b.trainLossLast);
    expect(a.valLossFinal).toBe(b.valLossFinal);
  });

  it("a different seed trains differently", async () => {
    const a = await train(texts.slice(0, 80), tiny);
    const b = await train(texts.slice(0, 80), { ...tiny, seed: 4 });
    expect(a.trainLossLast).not.toBe(b.trainLossLast);
  });
});

describe("operation horizon under learned units", () => {
  it("line boundaries stay under a tenth of the unit stream", () => {
    const tok = BpeTokenizer.learn(texts.slice(0, 400), DESK_TRAINER.bpeMerges);
    let lines = 0;
    let units = 0;
    for (const doc of texts.slice(400, 600)) {
      lines += doc.split("\n").length;
      units += tok.encode(doc).ids.length;
    }
    const ratio = lines / units;
    console.info(
      `horizon ratio ${(ratio * 100).toFixed(2)}% ` +
        `(${lines} operation lines over ${units} units, ${DESK_TRAINER.bpeMerges} merges)`
    );
    expect(ratio).toBeGreaterThan(0);
    expect(ratio).toBeLessThan(0.1);
  });
});
