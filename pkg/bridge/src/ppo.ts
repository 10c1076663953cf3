// ---- One clipped-surrogate policy epoch over exported advantages ----
//
// Probabilities factor over operations: an operation's log-probability is
// the sum of its units' log-probabilities, and the surrogate ratio is taken
// per operation segment against a frozen reference copy of the policy.

import { BOS_ID, Tokenizer } from "./tokenizer.js";
import { Gpt, cloneModel, forward, namedParams, scoreText, zeroGrads } from "./model.js";
import { backwardFrom, pickedLogprobs } from "./tensor.js";

export interface AdvantageRow {
  problem_id: string;
  iteration: number;
  prompt: string;
  segments: { index: number; span: [number, number]; text: string }[];
  rewards: number[];
  advantages: number[];
  returns: number[];
}

export function parseAdvantageRows(jsonl: string): AdvantageRow[] {
  const rows: AdvantageRow[] = [];
  for (const line of jsonl.split("\n")) {
    if (!line.trim()) continue;
    const row = JSON.parse(line) as AdvantageRow;
    if (
      typeof row.prompt !== "string" ||
      !Array.isArray(row.segments) ||
      !Array.isArray(row.advantages) ||
      row.segments.length === 0 ||
      row.segments.length !== row.advantages.length
    ) {
      throw new Error("advantage row does not match the exporter layout");
    }
    rows.push(row);
  }
  return rows;
}

export interface PpoConfig {
  clip: number;
  learningRate: number;
  klBeta: number;
}

export const DEFAULT_PPO: PpoConfig = {
  clip: 0.2,
  learningRate: 1e-3,
  klBeta: 0.01,
};

export interface PpoReport {
  records: number;
  skipped: number;
  segments: number;
  clipFraction: number;
  meanRatio: number;
  /** Mean of -beta * (logprob - ref_logprob) over segments. */
  meanKlPenalty: number;
  meanSurrogate: number;
}

interface SegmentView {
  unitStart: number;
  unitEnd: number;
  advantage: number;
}

/** Map the exporter's generated-text char spans onto scored unit indices.
 * Unit u of the scored sequence is char u of prompt + "\n" + generated, so
 * this only holds for char-unit checkpoints. */
function segmentUnits(row: AdvantageRow, promptUnits: number): SegmentView[] {
  return row.segments.map((seg, i) => ({
    unitStart: promptUnits + seg.span[0],
    unitEnd: promptUnits + seg.span[1],
    advantage: row.advantages[i],
  }));
}

export function ppoEpoch(
  model: Gpt,
  tokenizer: Tokenizer,
  rows: AdvantageRow[],
  cfg: PpoConfig
): PpoReport {
  if (tokenizer.toJSON().kind !== "char") {
    throw new Error("advantage spans are character offsets; use a char-unit checkpoint");
  }
  const reference = cloneModel(model);
  let totalSegments = 0;
  let clipped = 0;
  let ratioSum = 0;
  let klSum = 0;
  let surrogateSum = 0;
  let skipped = 0;
  let processed = 0;

  for (const row of rows) {
    const generated = row.segments.map((s) => s.text).join("");
    const fullText = row.prompt + "\n" + generated;
    const { ids } = tokenizer.encode(fullText);
    if (ids.length + 1 > model.config.contextLength) {
      skipped += 1;
      continue;
    }
    const promptUnits = row.prompt.length + 1;
    const views = segmentUnits(row, promptUnits);
    const last = views[views.length - 1];
    if (last.unitEnd !== ids.length) {
      throw new Error(
        `segment spans cover ${last.unitEnd - promptUnits} generated units, text has ${ids.length - promptUnits}`
      );
    }

    const refScore = scoreText(reference, tokenizer, fullText);

    const targets = Int32Array.from(ids);
    const inputs = new Int32Array(ids.length);
    inputs[0] = BOS_ID;
    inputs.set(targets.subarray(0, targets.length - 1), 1);
    zeroGrads(model);
    const logprobs = pickedLogprobs(forward(model, inputs), targets);

    const seed = new Float64Array(logprobs.size);
    for (const view of views) {
      let segLp = 0;
      let refLp = 0;
      for (let u = view.unitStart; u < view.unitEnd; u++) {
        segLp += logprobs.data[u];
        refLp += refScore.logprobs[u];
      }
      const ratio = Math.exp(segLp - refLp);
      const a = view.advantage;
      const clippedRatio = Math.min(Math.max(ratio, 1 - cfg.clip), 1 + cfg.clip);
      const surrogate = Math.min(ratio * a, clippedRatio * a);
      const clippedOut = (a > 0 && ratio > 1 + cfg.clip) || (a < 0 && ratio < 1 - cfg.clip);
      totalSegments += 1;
      ratioSum += ratio;
      klSum += -cfg.klBeta * (segLp - refLp);
      surrogateSum += surrogate;
      if (clippedOut) {
        clipped += 1;
        continue;
      }
      // d(-surrogate)/d(unit logprob) = -A * ratio on the active branch
      const g = -a * ratio;
      if (g !== 0) {
        for (let u = view.unitStart; u < view.unitEnd; u++) seed[u] += g;
      }
    }
    backwardFrom(logprobs, seed);
    for (const [, p] of namedParams(model)) {
      if (p.grad === null) continue;
      for (let i = 0; i < p.size; i++) p.data[i] -= cfg.learningRate * p.grad[i];
    }
    zeroGrads(model);
    processed += 1;
  }

  return {
    records: processed,
    skipped,
    segments: totalSegments,
    clipFraction: totalSegments ? clipped / totalSegments : 0,
    meanRatio: totalSegments ? ratioSum / totalSegments : 0,
    meanKlPenalty: totalSegments ? klSum / totalSegments : 0,
    meanSurrogate: totalSegments ? surrogateSum / totalSegments : 0,
  };
}

/** Sum of unit log-probabilities over each segment of one row, under one
 * model; the quantity the surrogate moves. */
export function segmentLogprobs(model: Gpt, tokenizer: Tokenizer, row: AdvantageRow): number[] {
  const generated = row.segments.map((s) => s.text).join("");
  const fullText = row.prompt + "\n" + generated;
  const score = scoreText(model, tokenizer, fullText);
  const promptUnits = row.prompt.length + 1;
  return segmentUnits(row, promptUnits).map((view) => {
    let total = 0;
    for (let u = view.unitStart; u < view.unitEnd; u++) total += score.logprobs[u];
    return total;
  });
}
