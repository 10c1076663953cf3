#!/usr/bin/env node
// Subcommands: serve (answer bridge requests on stdio), train (fit a
// checkpoint to a corpus), ppo (one surrogate epoch over exported
// advantages).

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";
import { loadCorpus } from "./corpus.js";
import {
  Checkpoint,
  initModel,
  loadCheckpoint,
  saveCheckpoint,
} from "./model.js";
import { DEFAULT_PPO, parseAdvantageRows, ppoEpoch } from "./ppo.js";
import { mulberry32 } from "./rng.js";
import { serveLoop } from "./protocol.js";
import { DESK_TRAINER, TrainerConfig, buildTokenizer, modelConfigFor, train } from "./train.js";

function numberOr(value: string | undefined, fallback: number): number {
  if (value === undefined) return fallback;
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) throw new Error(`not a number: ${value}`);
  return parsed;
}

function trainerFromFlags(values: Record<string, string | boolean | undefined>): TrainerConfig {
  const units = (values["units"] as string | undefined) ?? DESK_TRAINER.units;
  if (units !== "char" && units !== "bpe") throw new Error(`unknown units: ${units}`);
  return {
    dModel: numberOr(values["d-model"] as string | undefined, DESK_TRAINER.dModel),
    heads: numberOr(values["heads"] as string | undefined, DESK_TRAINER.heads),
    layers: numberOr(values["layers"] as string | undefined, DESK_TRAINER.layers),
    contextLength: numberOr(values["context"] as string | undefined, DESK_TRAINER.contextLength),
    units,
    bpeMerges: numberOr(values["bpe-merges"] as string | undefined, DESK_TRAINER.bpeMerges),
    seqLen: numberOr(values["seq-len"] as string | undefined, DESK_TRAINER.seqLen),
    batchSize: numberOr(values["batch"] as string | undefined, DESK_TRAINER.batchSize),
    steps: numberOr(values["steps"] as string | undefined, DESK_TRAINER.steps),
    learningRate: numberOr(values["lr"] as string | undefined, DESK_TRAINER.learningRate),
    seed: numberOr(values["seed"] as string | undefined, DESK_TRAINER.seed),
    valTexts: numberOr(values["val-texts"] as string | undefined, DESK_TRAINER.valTexts),
  };
}

const TRAINER_FLAGS = {
  "d-model": { type: "string" },
  heads: { type: "string" },
  layers: { type: "string" },
  context: { type: "string" },
  units: { type: "string" },
  "bpe-merges": { type: "string" },
  "seq-len": { type: "string" },
  batch: { type: "string" },
  steps: { type: "string" },
  lr: { type: "string" },
  seed: { type: "string" },
  "val-texts": { type: "string" },
} as const;

async function cmdServe(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: "string" },
      "random-init": { type: "boolean" },
      corpus: { type: "string" },
      ...TRAINER_FLAGS,
    },
  });
  let state;
  const seed = numberOr(values["seed"], DESK_TRAINER.seed);
  if (values["checkpoint"]) {
    const ckpt = JSON.parse(readFileSync(values["checkpoint"], "utf8")) as Checkpoint;
    const { model, tokenizer } = loadCheckpoint(ckpt);
    state = { model, tokenizer, rng: mulberry32(seed) };
  } else if (values["random-init"]) {
    if (!values["corpus"]) throw new Error("--random-init needs --corpus for the vocabulary");
    const cfg = trainerFromFlags(values);
    const texts = loadCorpus(values["corpus"]);
    if (texts.length === 0) throw new Error("empty corpus");
    const tokenizer = buildTokenizer(texts, cfg);
    const model = initModel(modelConfigFor(tokenizer, cfg), mulberry32(cfg.seed));
    state = { model, tokenizer, rng: mulberry32(seed) };
  } else {
    throw new Error("serve needs --checkpoint or --random-init");
  }
  await serveLoop(state);
  return 0;
}

async function cmdTrain(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      corpus: { type: "string" },
      out: { type: "string" },
      quiet: { type: "boolean" },
      ...TRAINER_FLAGS,
    },
  });
  if (!values["corpus"] || !values["out"]) throw new Error("train needs --corpus and --out");
  const cfg = trainerFromFlags(values);
  const texts = loadCorpus(values["corpus"]);
  const logEvery = Math.max(1, Math.floor(cfg.steps / 10));
  const result = await train(texts, cfg, (step, loss) => {
    if (!values["quiet"] && (step % logEvery === 0 || step === cfg.steps - 1)) {
      process.stderr.write(`step ${step} loss ${loss.toFixed(4)}\n`);
    }
  });
  const ckpt = saveCheckpoint(result.model, result.tokenizer.toJSON(), {
    trainer: cfg,
    valLossInit: result.valLossInit,
    valLossFinal: result.valLossFinal,
  });
  writeFileSync(values["out"], JSON.stringify(ckpt));
  process.stdout.write(
    JSON.stringify(
      {
        corpus_texts: texts.length,
        steps: result.steps,
        train_loss_first: result.trainLossFirst,
        train_loss_last: result.trainLossLast,
        val_loss_init: result.valLossInit,
        val_loss_final: result.valLossFinal,
        val_loss_reduction: 1 - result.valLossFinal / result.valLossInit,
        checkpoint: values["out"],
      },
      null,
      2
    ) + "\n"
  );
  return 0;
}

function cmdPpo(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: "string" },
      advantages: { type: "string" },
      out: { type: "string" },
      clip: { type: "string" },
      lr: { type: "string" },
      "kl-beta": { type: "string" },
      limit: { type: "string" },
    },
  });
  if (!values["checkpoint"] || !values["advantages"] || !values["out"]) {
    throw new Error("ppo needs --checkpoint, --advantages and --out");
  }
  const ckpt = JSON.parse(readFileSync(values["checkpoint"], "utf8")) as Checkpoint;
  const { model, tokenizer } = loadCheckpoint(ckpt);
  let rows = parseAdvantageRows(readFileSync(values["advantages"], "utf8"));
  const limit = numberOr(values["limit"], rows.length);
  rows = rows.slice(0, limit);
  const report = ppoEpoch(model, tokenizer, rows, {
    clip: numberOr(values["clip"], DEFAULT_PPO.clip),
    learningRate: numberOr(values["lr"], DEFAULT_PPO.learningRate),
    klBeta: numberOr(values["kl-beta"], DEFAULT_PPO.klBeta),
  });
  writeFileSync(values["out"], JSON.stringify(saveCheckpoint(model, tokenizer.toJSON(), ckpt.meta)));
  process.stdout.write(JSON.stringify(report, null, 2) + "\n");
  return 0;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  switch (command) {
    case "serve":
      return cmdServe(rest);
    case "train":
      return cmdTrain(rest);
    case "ppo":
      return cmdPpo(rest);
    default:
      process.stderr.write("usage: searchstream-bridge <serve|train|ppo> [flags]\n");
      return 2;
  }
}

main()
  .then((code) => {
    process.exitCode = code;
  })
  .catch((err) => {
    process.stderr.write(`${err instanceof Error ? err.message : String(err)}\n`);
    process.exitCode = 1;
  });
