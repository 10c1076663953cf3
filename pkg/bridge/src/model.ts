// ---- Tiny character-level GPT ----
//
// Follows the usual decoder-only recipe with small simplifications: RMSNorm
// instead of LayerNorm, no biases, ReLU instead of GeLU. Weights are plain
// Float32Arrays; checkpoints are JSON with base64 weight blobs.

import { Buffer } from "node:buffer";
import {
  CrossEntropyResult,
  Tensor,
  add,
  backward,
  causalSelfAttention,
  crossEntropy,
  embed,
  matmul,
  relu,
  rmsnorm,
} from "./tensor.js";
import { BOS_ID, Tokenizer, VocabJson, tokenizerFromJSON } from "./tokenizer.js";
import { Rng, gauss, weightedChoice } from "./rng.js";

export { backward };

export interface ModelConfig {
  dModel: number;
  heads: number;
  layers: number;
  contextLength: number;
  vocabSize: number;
}

interface Block {
  ln1: Tensor;
  qkv: Tensor;
  proj: Tensor;
  ln2: Tensor;
  fc: Tensor;
  out: Tensor;
}

export interface Gpt {
  config: ModelConfig;
  wte: Tensor;
  wpe: Tensor;
  blocks: Block[];
  lnf: Tensor;
  head: Tensor;
}

function gaussian(shape: number[], rng: Rng, std: number): Tensor {
  const t = new Tensor(shape);
  for (let i = 0; i < t.size; i++) t.data[i] = gauss(rng, 0, std);
  return t;
}

function ones(shape: number[]): Tensor {
  const t = new Tensor(shape);
  t.data.fill(1);
  return t;
}

export function initModel(config: ModelConfig, rng: Rng): Gpt {
  const d = config.dModel;
  const std = 0.02;
  const residStd = std / Math.sqrt(2 * config.layers);
  const blocks: Block[] = [];
  for (let i = 0; i < config.layers; i++) {
    blocks.push({
      ln1: ones([d]),
      qkv: gaussian([d, 3 * d], rng, std),
      proj: gaussian([d, d], rng, residStd),
      ln2: ones([d]),
      fc: gaussian([d, 4 * d], rng, std),
      out: gaussian([4 * d, d], rng, residStd),
    });
  }
  return {
    config,
    wte: gaussian([config.vocabSize, d], rng, std),
    // zero positions: untrained offsets stay exactly neutral
    wpe: new Tensor([config.contextLength, d]),
    blocks,
    lnf: ones([d]),
    head: gaussian([d, config.vocabSize], rng, std),
  };
}

export function namedParams(model: Gpt): [string, Tensor][] {
  const out: [string, Tensor][] = [
    ["wte", model.wte],
    ["wpe", model.wpe],
  ];
  model.blocks.forEach((b, i) => {
    out.push([`h${i}.ln1`, b.ln1]);
    out.push([`h${i}.qkv`, b.qkv]);
    out.push([`h${i}.proj`, b.proj]);
    out.push([`h${i}.ln2`, b.ln2]);
    out.push([`h${i}.fc`, b.fc]);
    out.push([`h${i}.out`, b.out]);
  });
  out.push(["lnf", model.lnf]);
  out.push(["head", model.head]);
  return out;
}

export function zeroGrads(model: Gpt): void {
  for (const [, t] of namedParams(model)) t.grad = null;
}

/** Full-sequence forward: ids [T] -> logits [T, V]; T <= contextLength. */
export function forward(model: Gpt, ids: Int32Array): Tensor {
  if (ids.length > model.config.contextLength) {
    throw new Error(
      `sequence length ${ids.length} exceeds context ${model.config.contextLength}`
    );
  }
  let x = embed(model.wte, model.wpe, ids);
  for (const b of model.blocks) {
    const att = causalSelfAttention(matmul(rmsnorm(x, b.ln1), b.qkv), model.config.heads);
    x = add(x, matmul(att, b.proj));
    const mlp = matmul(relu(matmul(rmsnorm(x, b.ln2), b.fc)), b.out);
    x = add(x, mlp);
  }
  return matmul(rmsnorm(x, model.lnf), model.head);
}

/** Forward plus fused cross-entropy against targets. */
export function crossEntropyOn(
  model: Gpt,
  inputs: Int32Array,
  targets: Int32Array
): CrossEntropyResult {
  return crossEntropy(forward(model, inputs), targets);
}

// ---- checkpoints ----

export interface Checkpoint {
  version: number;
  config: ModelConfig;
  vocab: VocabJson;
  meta: Record<string, unknown>;
  weights: Record<string, { shape: number[]; b64: string }>;
}

export function saveCheckpoint(model: Gpt, vocab: VocabJson, meta: Record<string, unknown>): Checkpoint {
  const weights: Checkpoint["weights"] = {};
  for (const [name, t] of namedParams(model)) {
    const bytes = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
    weights[name] = { shape: t.shape.slice(), b64: bytes.toString("base64") };
  }
  return { version: 1, config: { ...model.config }, vocab, meta, weights };
}

export function loadCheckpoint(ckpt: Checkpoint): { model: Gpt; tokenizer: Tokenizer } {
  if (ckpt.version !== 1) throw new Error(`unsupported checkpoint version ${ckpt.version}`);
  const tokenizer = tokenizerFromJSON(ckpt.vocab);
  const model = initModel(ckpt.config, () => 0.5);
  for (const [name, t] of namedParams(model)) {
    const entry = ckpt.weights[name];
    if (!entry) throw new Error(`checkpoint missing weights for ${name}`);
    const bytes = Buffer.from(entry.b64, "base64");
    if (bytes.byteLength !== t.data.byteLength) {
      throw new Error(`weight ${name} has ${bytes.byteLength} bytes, expected ${t.data.byteLength}`);
    }
    // Copy out of the Buffer pool; pool slices need not be 4-byte aligned.
    t.data = new Float32Array(new Uint8Array(bytes).buffer);
  }
  return { model, tokenizer };
}

export function cloneModel(model: Gpt): Gpt {
  const copy = initModel(model.config, () => 0.5);
  const source = new Map(namedParams(model));
  for (const [name, t] of namedParams(copy)) {
    t.data = new Float32Array(source.get(name)!.data);
  }
  return copy;
}

// ---- cached inference ----

export interface KvCache {
  keys: Float32Array[];
  values: Float32Array[];
  length: number;
}

export function createCache(model: Gpt): KvCache {
  const { contextLength, dModel, layers } = model.config;
  return {
    keys: Array.from({ length: layers }, () => new Float32Array(contextLength * dModel)),
    values: Array.from({ length: layers }, () => new Float32Array(contextLength * dModel)),
    length: 0,
  };
}

function rmsRowInto(x: Float32Array, gain: Float32Array, out: Float32Array): void {
  const d = x.length;
  let ss = 0;
  for (let j = 0; j < d; j++) ss += x[j] * x[j];
  const inv = 1 / Math.sqrt(ss / d + 1e-5);
  for (let j = 0; j < d; j++) out[j] = x[j] * inv * gain[j];
}

function matRowInto(x: Float32Array, w: Tensor, out: Float32Array): void {
  const [m, n] = [w.shape[0], w.shape[1]];
  out.fill(0);
  for (let k = 0; k < m; k++) {
    const a = x[k];
    if (a === 0) continue;
    const row = k * n;
    for (let j = 0; j < n; j++) out[j] += a * w.data[row + j];
  }
}

/** One token through the model with a KV cache; returns the logits row. */
export function forwardStep(model: Gpt, cache: KvCache, id: number): Float32Array {
  const { dModel: d, heads, contextLength, vocabSize } = model.config;
  const pos = cache.length;
  if (pos >= contextLength) throw new Error(`cache full at context ${contextLength}`);
  const hd = d / heads;
  const scale = 1 / Math.sqrt(hd);

  const x = new Float32Array(d);
  for (let j = 0; j < d; j++) x[j] = model.wte.data[id * d + j] + model.wpe.data[pos * d + j];

  const normed = new Float32Array(d);
  const qkvRow = new Float32Array(3 * d);
  const attOut = new Float32Array(d);
  const hidden = new Float32Array(4 * d);
  const mixed = new Float32Array(d);

  for (let layer = 0; layer < model.blocks.length; layer++) {
    const b = model.blocks[layer];
    rmsRowInto(x, b.ln1.data, normed);
    matRowInto(normed, b.qkv, qkvRow);
    const keys = cache.keys[layer];
    const values = cache.values[layer];
    for (let j = 0; j < d; j++) {
      keys[pos * d + j] = qkvRow[d + j];
      values[pos * d + j] = qkvRow[2 * d + j];
    }
    attOut.fill(0);
    for (let h = 0; h < heads; h++) {
      const off = h * hd;
      const scores = new Float64Array(pos + 1);
      let maxScore = -Infinity;
      for (let u = 0; u <= pos; u++) {
        let s = 0;
        for (let j = 0; j < hd; j++) s += qkvRow[off + j] * keys[u * d + off + j];
        s *= scale;
        scores[u] = s;
        if (s > maxScore) maxScore = s;
      }
      let total = 0;
      for (let u = 0; u <= pos; u++) {
        scores[u] = Math.exp(scores[u] - maxScore);
        total += scores[u];
      }
      for (let u = 0; u <= pos; u++) {
        const p = scores[u] / total;
        for (let j = 0; j < hd; j++) attOut[off + j] += p * values[u * d + off + j];
      }
    }
    matRowInto(attOut, b.proj, mixed);
    for (let j = 0; j < d; j++) x[j] += mixed[j];
    rmsRowInto(x, b.ln2.data, normed);
    matRowInto(normed, b.fc, hidden);
    for (let j = 0; j < 4 * d; j++) hidden[j] = hidden[j] > 0 ? hidden[j] : 0;
    matRowInto(hidden, b.out, mixed);
    for (let j = 0; j < d; j++) x[j] += mixed[j];
  }

  rmsRowInto(x, model.lnf.data, normed);
  const logits = new Float32Array(vocabSize);
  matRowInto(normed, model.head, logits);
  cache.length = pos + 1;
  return logits;
}

// ---- scoring and generation ----

export interface ScoreResult {
  /** Sum of per-unit negative log-likelihoods. */
  loss: number;
  logprobs: number[];
  spans: [number, number][];
}

function logSoftmaxPick(logits: Float32Array, target: number): number {
  let maxLogit = -Infinity;
  for (let j = 0; j < logits.length; j++) if (logits[j] > maxLogit) maxLogit = logits[j];
  let norm = 0;
  for (let j = 0; j < logits.length; j++) norm += Math.exp(logits[j] - maxLogit);
  return logits[target] - maxLogit - Math.log(norm);
}

/** Per-unit log-probabilities of text under the model, each unit conditioned
 * on a leading BOS plus everything before it. */
export function scoreText(model: Gpt, tokenizer: Tokenizer, text: string): ScoreResult {
  const { ids, spans } = tokenizer.encode(text);
  if (ids.length + 1 > model.config.contextLength) {
    throw new Error(
      `text has ${ids.length} units, context allows ${model.config.contextLength - 1}`
    );
  }
  const cache = createCache(model);
  const logprobs: number[] = [];
  let loss = 0;
  let logits = forwardStep(model, cache, BOS_ID);
  for (const id of ids) {
    const lp = logSoftmaxPick(logits, id);
    logprobs.push(lp);
    loss -= lp;
    logits = forwardStep(model, cache, id);
  }
  return { loss, logprobs, spans };
}

const STOP_SUFFIXES = ["No solution found.", "equal: Goal Reached"];

export interface GenerateResult {
  continuation: string;
  units: number;
  finishReason: "stop" | "budget" | "context";
}

/** Continue prefix by up to maxNewUnits units; greedy at temperature 0.
 * Stops at the end of a terminal line or when the context fills. */
export function generateText(
  model: Gpt,
  tokenizer: Tokenizer,
  prefix: string,
  maxNewUnits: number,
  temperature: number,
  rng: Rng
): GenerateResult {
  const { ids } = tokenizer.encode(prefix);
  const cache = createCache(model);
  let logits = forwardStep(model, cache, BOS_ID);
  for (const id of ids) {
    if (cache.length >= model.config.contextLength) {
      return { continuation: "", units: 0, finishReason: "context" };
    }
    logits = forwardStep(model, cache, id);
  }
  let text = prefix;
  let continuation = "";
  let units = 0;
  while (units < maxNewUnits) {
    const id = pickUnit(logits, temperature, rng);
    const piece = tokenizer.tokenText(id);
    continuation += piece;
    text += piece;
    units += 1;
    if (STOP_SUFFIXES.some((s) => text.endsWith(s))) {
      return { continuation, units, finishReason: "stop" };
    }
    if (cache.length >= model.config.contextLength) {
      return { continuation, units, finishReason: "context" };
    }
    logits = forwardStep(model, cache, id);
  }
  return { continuation, units, finishReason: "budget" };
}

function pickUnit(logits: Float32Array, temperature: number, rng: Rng): number {
  if (temperature <= 0) {
    let best = 1;
    for (let j = 1; j < logits.length; j++) {
      if (logits[j] > logits[best]) best = j;
    }
    return best;
  }
  let maxLogit = -Infinity;
  for (let j = 1; j < logits.length; j++) if (logits[j] > maxLogit) maxLogit = logits[j];
  const weights: number[] = [];
  for (let j = 1; j < logits.length; j++) {
    weights.push(Math.exp((logits[j] - maxLogit) / temperature));
  }
  return 1 + weightedChoice(rng, weights);
}
