// ---- Text units ----
//
// The model reads characters by default; a small learned byte-pair vocab is
// available as an alternative. Both tokenizers report character spans that
// tile the input exactly, and neither merges across a newline, so spans
// never straddle a line boundary.

export const BOS_ID = 0;

export interface Encoded {
  ids: number[];
  /** [start, end) character offsets, one per id, tiling the text. */
  spans: [number, number][];
}

export interface VocabJson {
  kind: "char" | "bpe";
  chars: string;
  merges?: [string, string][];
}

export interface Tokenizer {
  readonly vocabSize: number;
  encode(text: string): Encoded;
  decode(ids: number[]): string;
  tokenText(id: number): string;
  toJSON(): VocabJson;
}

export class CharTokenizer implements Tokenizer {
  private readonly chars: string;
  private readonly ids = new Map<string, number>();

  constructor(chars: string) {
    this.chars = chars;
    for (let i = 0; i < chars.length; i++) {
      this.ids.set(chars[i], i + 1);
    }
  }

  static fromCorpus(texts: string[]): CharTokenizer {
    const seen = new Set<string>();
    for (const text of texts) {
      for (const ch of text) seen.add(ch);
    }
    return new CharTokenizer([...seen].sort().join(""));
  }

  get vocabSize(): number {
    return this.chars.length + 1;
  }

  encode(text: string): Encoded {
    const ids: number[] = [];
    const spans: [number, number][] = [];
    for (let i = 0; i < text.length; i++) {
      const id = this.ids.get(text[i]);
      if (id === undefined) throw new Error(`character not in vocab: ${JSON.stringify(text[i])}`);
      ids.push(id);
      spans.push([i, i + 1]);
    }
    return { ids, spans };
  }

  decode(ids: number[]): string {
    return ids.map((id) => this.tokenText(id)).join("");
  }

  tokenText(id: number): string {
    if (id === BOS_ID) return "";
    if (id < 1 || id > this.chars.length) throw new Error(`id out of vocab: ${id}`);
    return this.chars[id - 1];
  }

  toJSON(): VocabJson {
    return { kind: "char", chars: this.chars };
  }
}

export class BpeTokenizer implements Tokenizer {
  private readonly chars: string;
  private readonly merges: [string, string][];
  private readonly tokens: string[];
  private readonly ids = new Map<string, number>();

  constructor(chars: string, merges: [string, string][]) {
    this.chars = chars;
    this.merges = merges;
    this.tokens = [""];
    for (const ch of chars) this.tokens.push(ch);
    for (const [a, b] of merges) this.tokens.push(a + b);
    for (let i = 1; i < this.tokens.length; i++) {
      this.ids.set(this.tokens[i], i);
    }
  }

  /** Learn numMerges byte-pair merges, most frequent pair first; ties break
   * lexicographically so training is deterministic. Newlines are hard
   * boundaries: a merge never joins units from different lines. */
  static learn(texts: string[], numMerges: number): BpeTokenizer {
    const seen = new Set<string>();
    for (const text of texts) for (const ch of text) seen.add(ch);
    const chars = [...seen].sort().join("");

    let sequences: string[][] = [];
    for (const text of texts) {
      for (const chunk of splitKeepNewlines(text)) {
        sequences.push([...chunk]);
      }
    }
    const merges: [string, string][] = [];
    for (let step = 0; step < numMerges; step++) {
      const counts = new Map<string, number>();
      for (const seq of sequences) {
        for (let i = 0; i + 1 < seq.length; i++) {
          if (seq[i].endsWith("\n")) continue;
          const key = seq[i] + "\u0000" + seq[i + 1];
          counts.set(key, (counts.get(key) ?? 0) + 1);
        }
      }
      let best: string | null = null;
      let bestCount = 1;
      for (const [key, count] of counts) {
        if (count > bestCount || (count === bestCount && best !== null && key < best)) {
          best = key;
          bestCount = count;
        }
      }
      if (best === null) break;
      const [a, b] = best.split("\u0000");
      merges.push([a, b]);
      sequences = sequences.map((seq) => mergePair(seq, a, b));
    }
    return new BpeTokenizer(chars, merges);
  }

  get vocabSize(): number {
    return this.tokens.length;
  }

  encode(text: string): Encoded {
    const ids: number[] = [];
    const spans: [number, number][] = [];
    let offset = 0;
    for (const chunk of splitKeepNewlines(text)) {
      let seq = [...chunk];
      for (const [a, b] of this.merges) {
        if (seq.length < 2) break;
        seq = mergePair(seq, a, b);
      }
      for (const token of seq) {
        const id = this.ids.get(token);
        if (id === undefined) throw new Error(`token not in vocab: ${JSON.stringify(token)}`);
        ids.push(id);
        spans.push([offset, offset + token.length]);
        offset += token.length;
      }
    }
    return { ids, spans };
  }

  decode(ids: number[]): string {
    return ids.map((id) => this.tokenText(id)).join("");
  }

  tokenText(id: number): string {
    if (id < 0 || id >= this.tokens.length) throw new Error(`id out of vocab: ${id}`);
    return this.tokens[id];
  }

  toJSON(): VocabJson {
    return { kind: "bpe", chars: this.chars, merges: this.merges };
  }
}

export function tokenizerFromJSON(json: VocabJson): Tokenizer {
  if (json.kind === "char") return new CharTokenizer(json.chars);
  if (json.kind === "bpe") return new BpeTokenizer(json.chars, json.merges ?? []);
  throw new Error(`unknown vocab kind: ${(json as { kind: string }).kind}`);
}

/** Split into pieces that each end at a newline (inclusive), so merges and
 * tokens stay within one line. */
function splitKeepNewlines(text: string): string[] {
  const out: string[] = [];
  let start = 0;
  for (let i = 0; i < text.length; i++) {
    if (text[i] === "\n") {
      out.push(text.slice(start, i + 1));
      start = i + 1;
    }
  }
  if (start < text.length) out.push(text.slice(start));
  return out;
}

function mergePair(seq: string[], a: string, b: string): string[] {
  const out: string[] = [];
  let i = 0;
  while (i < seq.length) {
    if (i + 1 < seq.length && seq[i] === a && seq[i + 1] === b && !seq[i].endsWith("\n")) {
      out.push(a + b);
      i += 2;
    } else {
      out.push(seq[i]);
      i += 1;
    }
  }
  return out;
}
