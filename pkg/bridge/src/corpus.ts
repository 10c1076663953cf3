import { readFileSync } from "node:fs";

/** Read a stage corpus: trajectories separated by blank lines. */
export function loadCorpus(path: string): string[] {
  const raw = readFileSync(path, "utf8");
  if (raw === "") return [];
  const pieces = raw.split("\n\n");
  const last = pieces.length - 1;
  if (pieces[last].endsWith("\n")) pieces[last] = pieces[last].slice(0, -1);
  return pieces.filter((p) => p.length > 0);
}
