// ---- Next-unit prediction training ----

import {
  BOS_ID,
  BpeTokenizer,
  CharTokenizer,
  Tokenizer,
} from "./tokenizer.js";
import {
  Gpt,
  ModelConfig,
  backward,
  crossEntropyOn,
  initModel,
  namedParams,
  zeroGrads,
} from "./model.js";
import { noGrad } from "./tensor.js";
import { Rng, mulberry32, randInt } from "./rng.js";

export interface TrainerConfig {
  dModel: number;
  heads: number;
  layers: number;
  contextLength: number;
  units: "char" | "bpe";
  bpeMerges: number;
  seqLen: number;
  batchSize: number;
  steps: number;
  learningRate: number;
  seed: number;
  /** How many held-out trajectories the validation loss averages over. */
  valTexts: number;
}

export const DESK_TRAINER: TrainerConfig = {
  dModel: 48,
  heads: 4,
  layers: 2,
  contextLength: 1024,
  units: "char",
  bpeMerges: 80,
  seqLen: 256,
  batchSize: 8,
  steps: 200,
  learningRate: 3e-3,
  seed: 0,
  valTexts: 24,
};

/** Full-scale reference hyperparameters. Not meant for desk runs; kept as a
 * labeled profile so the config surface matches the real training setup. */
export const FULL_SCALE_TRAINER: TrainerConfig = {
  dModel: 1024,
  heads: 16,
  layers: 24,
  contextLength: 4096,
  units: "bpe",
  bpeMerges: 50000,
  seqLen: 4096,
  batchSize: 256,
  steps: 50000,
  learningRate: 1e-5,
  seed: 0,
  valTexts: 512,
};

export interface TrainResult {
  model: Gpt;
  tokenizer: Tokenizer;
  valLossInit: number;
  valLossFinal: number;
  trainLossFirst: number;
  trainLossLast: number;
  steps: number;
}

export function buildTokenizer(texts: string[], cfg: TrainerConfig): Tokenizer {
  if (cfg.units === "char") return CharTokenizer.fromCorpus(texts);
  const sample = texts.slice(0, Math.min(texts.length, 400));
  return BpeTokenizer.learn(sample, cfg.bpeMerges);
}

export function modelConfigFor(tokenizer: Tokenizer, cfg: TrainerConfig): ModelConfig {
  return {
    dModel: cfg.dModel,
    heads: cfg.heads,
    layers: cfg.layers,
    contextLength: cfg.contextLength,
    vocabSize: tokenizer.vocabSize,
  };
}

/** Mean per-unit NLL over whole held-out trajectories. */
export function meanValLoss(model: Gpt, docs: Int32Array[]): number {
  let total = 0;
  let units = 0;
  noGrad(() => {
    for (const ids of docs) {
      const max = model.config.contextLength;
      const seq = ids.length + 1 > max ? ids.subarray(0, max - 1) : ids;
      const inputs = new Int32Array(seq.length);
      inputs[0] = BOS_ID;
      inputs.set(seq.subarray(0, seq.length - 1), 1);
      const { perPosition } = crossEntropyOn(model, inputs, seq);
      for (const nll of perPosition) total += nll;
      units += seq.length;
    }
  });
  return total / units;
}

export function encodeDocs(tokenizer: Tokenizer, texts: string[]): Int32Array[] {
  return texts.map((t) => Int32Array.from(tokenizer.encode(t).ids));
}

/** Every tenth trajectory is held out for validation. */
export function splitDocs(texts: string[]): { train: string[]; val: string[] } {
  const train: string[] = [];
  const val: string[] = [];
  texts.forEach((t, i) => (i % 10 === 9 ? val : train).push(t));
  return { train, val };
}

/** Fit a model to the corpus. Asynchronous only to yield to the event loop
 * between steps; all numeric work is deterministic in cfg.seed. */
export async function train(
  texts: string[],
  cfg: TrainerConfig,
  onStep?: (step: number, loss: number) => void
): Promise<TrainResult> {
  if (texts.length === 0) throw new Error("empty corpus");
  const rng = mulberry32(cfg.seed);
  const tokenizer = buildTokenizer(texts, cfg);
  const model = initModel(modelConfigFor(tokenizer, cfg), rng);
  const { train: trainTexts, val: valTexts } = splitDocs(texts);
  const trainDocs = encodeDocs(tokenizer, trainTexts);
  const valDocs = encodeDocs(tokenizer, valTexts.slice(0, cfg.valTexts));

  const valLossInit = meanValLoss(model, valDocs);
  const params = namedParams(model);
  const sizes = params.map(([, t]) => t.size);
  const totalSize = sizes.reduce((a, b) => a + b, 0);
  const m = new Float64Array(totalSize);
  const v = new Float64Array(totalSize);
  const beta1 = 0.9;
  const beta2 = 0.99;
  const eps = 1e-8;

  let trainLossFirst = 0;
  let trainLossLast = 0;
  for (let step = 0; step < cfg.steps; step++) {
    zeroGrads(model);
    let lossSum = 0;
    for (let b = 0; b < cfg.batchSize; b++) {
      const { inputs, targets } = sampleCrop(trainDocs, cfg.seqLen, rng);
      const { loss } = crossEntropyOn(model, inputs, targets);
      lossSum += loss.data[0];
      backward(loss);
    }
    const meanLoss = lossSum / cfg.batchSize;
    if (step === 0) trainLossFirst = meanLoss;
    trainLossLast = meanLoss;
    onStep?.(step, meanLoss);

    const lr = cfg.learningRate * (1 - step / cfg.steps);
    const t = step + 1;
    const mHat = 1 - Math.pow(beta1, t);
    const vHat = 1 - Math.pow(beta2, t);
    let offset = 0;
    for (const [, p] of params) {
      const grad = p.grad;
      if (grad !== null) {
        for (let i = 0; i < p.size; i++) {
          const g = grad[i] / cfg.batchSize;
          const mi = (m[offset + i] = beta1 * m[offset + i] + (1 - beta1) * g);
          const vi = (v[offset + i] = beta2 * v[offset + i] + (1 - beta2) * g * g);
          p.data[i] -= (lr * (mi / mHat)) / (Math.sqrt(vi / vHat) + eps);
        }
      }
      offset += p.size;
    }
    await new Promise<void>((resolve) => setImmediate(resolve));
  }

  const valLossFinal = meanValLoss(model, valDocs);
  return { model, tokenizer, valLossInit, valLossFinal, trainLossFirst, trainLossLast, steps: cfg.steps };
}

function sampleCrop(
  docs: Int32Array[],
  seqLen: number,
  rng: Rng
): { inputs: Int32Array; targets: Int32Array } {
  const ids = docs[randInt(rng, docs.length)];
  // window over [BOS, ...ids], at most seqLen inputs
  const seq = new Int32Array(ids.length + 1);
  seq[0] = BOS_ID;
  seq.set(ids, 1);
  const span = Math.min(seqLen + 1, seq.length);
  const start = seq.length === span ? 0 : randInt(rng, seq.length - span + 1);
  const window = seq.subarray(start, start + span);
  return {
    inputs: window.subarray(0, span - 1),
    targets: window.subarray(1),
  };
}
