// ---- Line-delimited JSON request loop ----
//
// One JSON object per line on stdin, one response per line on stdout.
// Responses always carry the request id; failures become {id, error} and the
// process stays alive.

import { createInterface } from "node:readline";
import { Gpt, generateText, scoreText } from "./model.js";
import { Tokenizer } from "./tokenizer.js";
import { Rng } from "./rng.js";

export interface BridgeState {
  model: Gpt;
  tokenizer: Tokenizer;
  rng: Rng;
}

interface Request {
  op?: string;
  id?: unknown;
  prefix_text?: string;
  max_new_units?: number;
  temperature?: number;
  texts?: string[];
  text?: string;
}

export function handleRequest(state: BridgeState, line: string): string {
  let id: unknown = -1;
  try {
    const request = JSON.parse(line) as Request;
    id = request.id ?? -1;
    switch (request.op) {
      case "generate": {
        const prefix = request.prefix_text ?? "";
        const budget = Math.max(0, Math.floor(request.max_new_units ?? 0));
        const temperature = request.temperature ?? 0;
        const result = generateText(state.model, state.tokenizer, prefix, budget, temperature, state.rng);
        return JSON.stringify({ id, continuation_text: result.continuation });
      }
      case "score": {
        const texts = request.texts ?? [];
        const perTextLoss: number[] = [];
        const tokenLogprobs: number[][] = [];
        const units: number[] = [];
        for (const text of texts) {
          const score = scoreText(state.model, state.tokenizer, text);
          perTextLoss.push(score.loss);
          tokenLogprobs.push(score.logprobs);
          units.push(score.logprobs.length);
        }
        return JSON.stringify({
          id,
          per_text_loss: perTextLoss,
          token_logprobs: tokenLogprobs,
          units,
        });
      }
      case "tokenize": {
        const spans = state.tokenizer.encode(request.text ?? "").spans;
        return JSON.stringify({ id, token_spans: spans });
      }
      default:
        return JSON.stringify({ id, error: `unknown op: ${String(request.op)}` });
    }
  } catch (err) {
    return JSON.stringify({ id, error: err instanceof Error ? err.message : String(err) });
  }
}

export function serveLoop(state: BridgeState): Promise<void> {
  return new Promise((resolve) => {
    const lines = createInterface({ input: process.stdin, terminal: false });
    lines.on("line", (line) => {
      if (!line.trim()) return;
      process.stdout.write(handleRequest(state, line) + "\n");
    });
    lines.on("close", resolve);
  });
}
