// ---- Tape autograd over flat Float32Array tensors ----
//
// Each op computes its output eagerly and pushes one backward closure onto a
// tape; backward() replays the tape in reverse. Graphs live for one step:
// build, backward, reset. Accumulation happens in plain JS numbers (f64),
// storage is f32.

export class Tensor {
  data: Float32Array;
  grad: Float32Array | null = null;
  readonly shape: number[];

  constructor(shape: number[], data?: Float32Array) {
    this.shape = shape;
    const size = shape.reduce((a, b) => a * b, 1);
    if (data !== undefined && data.length !== size) {
      throw new Error(`data length ${data.length} does not match shape ${shape}`);
    }
    this.data = data ?? new Float32Array(size);
  }

  get size(): number {
    return this.data.length;
  }
}

let tape: (() => void)[] = [];
let gradEnabled = true;

export function resetTape(): void {
  tape = [];
}

export function pushTape(fn: () => void): void {
  if (gradEnabled) tape.push(fn);
}

export function isGradEnabled(): boolean {
  return gradEnabled;
}

/** Run fn with the tape disabled (inference / scoring). */
export function noGrad<T>(fn: () => T): T {
  const prev = gradEnabled;
  gradEnabled = false;
  try {
    return fn();
  } finally {
    gradEnabled = prev;
  }
}

export function ensureGrad(t: Tensor): Float32Array {
  if (t.grad === null) t.grad = new Float32Array(t.size);
  return t.grad;
}

/** Seed d(loss)/d(loss) = 1 and replay the tape backward. */
export function backward(loss: Tensor): void {
  if (loss.size !== 1) throw new Error("backward needs a scalar loss");
  ensureGrad(loss)[0] += 1;
  for (let i = tape.length - 1; i >= 0; i--) tape[i]();
  tape = [];
}

/** Seed an arbitrary output gradient and replay the tape backward. */
export function backwardFrom(t: Tensor, seed: Float32Array | Float64Array): void {
  if (seed.length !== t.size) throw new Error("gradient seed size mismatch");
  const grad = ensureGrad(t);
  for (let i = 0; i < seed.length; i++) grad[i] += seed[i];
  for (let i = tape.length - 1; i >= 0; i--) tape[i]();
  tape = [];
}

// ---- ops ----

/** Row gather: out[t, :] = table[ids[t], :] + positions[t, :]. */
export function embed(table: Tensor, positions: Tensor, ids: Int32Array): Tensor {
  const [, d] = [table.shape[0], table.shape[1]];
  const T = ids.length;
  const out = new Tensor([T, d]);
  for (let t = 0; t < T; t++) {
    const row = ids[t] * d;
    const pos = t * d;
    for (let j = 0; j < d; j++) {
      out.data[t * d + j] = table.data[row + j] + positions.data[pos + j];
    }
  }
  pushTape(() => {
    if (out.grad === null) return;
    const dTable = ensureGrad(table);
    const dPos = ensureGrad(positions);
    for (let t = 0; t < T; t++) {
      const row = ids[t] * d;
      const pos = t * d;
      for (let j = 0; j < d; j++) {
        const g = out.grad[t * d + j];
        dTable[row + j] += g;
        dPos[pos + j] += g;
      }
    }
  });
  return out;
}

/** [T, m] x [m, n] -> [T, n]. */
export function matmul(x: Tensor, w: Tensor): Tensor {
  const [T, m] = [x.shape[0], x.shape[1]];
  const [wm, n] = [w.shape[0], w.shape[1]];
  if (m !== wm) throw new Error(`matmul shapes [${x.shape}] x [${w.shape}]`);
  const out = new Tensor([T, n]);
  const xd = x.data;
  const wd = w.data;
  const od = out.data;
  for (let t = 0; t < T; t++) {
    const xRow = t * m;
    const oRow = t * n;
    for (let k = 0; k < m; k++) {
      const a = xd[xRow + k];
      if (a === 0) continue;
      const wRow = k * n;
      for (let j = 0; j < n; j++) {
        od[oRow + j] += a * wd[wRow + j];
      }
    }
  }
  pushTape(() => {
    if (out.grad === null) return;
    const dOut = out.grad;
    const dX = ensureGrad(x);
    const dW = ensureGrad(w);
    for (let t = 0; t < T; t++) {
      const xRow = t * m;
      const oRow = t * n;
      for (let k = 0; k < m; k++) {
        const wRow = k * n;
        let s = 0;
        for (let j = 0; j < n; j++) {
          const g = dOut[oRow + j];
          s += g * wd[wRow + j];
          dW[wRow + j] += xd[xRow + k] * g;
        }
        dX[xRow + k] += s;
      }
    }
  });
  return out;
}

export function add(a: Tensor, b: Tensor): Tensor {
  if (a.size !== b.size) throw new Error(`add shapes [${a.shape}] + [${b.shape}]`);
  const out = new Tensor(a.shape.slice());
  for (let i = 0; i < a.size; i++) out.data[i] = a.data[i] + b.data[i];
  pushTape(() => {
    if (out.grad === null) return;
    const dA = ensureGrad(a);
    const dB = ensureGrad(b);
    for (let i = 0; i < a.size; i++) {
      dA[i] += out.grad[i];
      dB[i] += out.grad[i];
    }
  });
  return out;
}

export function relu(x: Tensor): Tensor {
  const out = new Tensor(x.shape.slice());
  for (let i = 0; i < x.size; i++) out.data[i] = x.data[i] > 0 ? x.data[i] : 0;
  pushTape(() => {
    if (out.grad === null) return;
    const dX = ensureGrad(x);
    for (let i = 0; i < x.size; i++) {
      if (x.data[i] > 0) dX[i] += out.grad[i];
    }
  });
  return out;
}

const RMS_EPS = 1e-5;

/** Per-row RMS normalization with a learned gain: y = x / rms(x) * gain. */
export function rmsnorm(x: Tensor, gain: Tensor): Tensor {
  const [T, d] = [x.shape[0], x.shape[1]];
  if (gain.size !== d) throw new Error("rmsnorm gain size mismatch");
  const out = new Tensor([T, d]);
  const inv = new Float64Array(T);
  for (let t = 0; t < T; t++) {
    let ss = 0;
    for (let j = 0; j < d; j++) {
      const v = x.data[t * d + j];
      ss += v * v;
    }
    inv[t] = 1 / Math.sqrt(ss / d + RMS_EPS);
    for (let j = 0; j < d; j++) {
      out.data[t * d + j] = x.data[t * d + j] * inv[t] * gain.data[j];
    }
  }
  pushTape(() => {
    if (out.grad === null) return;
    const dX = ensureGrad(x);
    const dG = ensureGrad(gain);
    for (let t = 0; t < T; t++) {
      const r = inv[t];
      let dot = 0;
      for (let j = 0; j < d; j++) {
        const g = out.grad[t * d + j];
        dG[j] += g * x.data[t * d + j] * r;
        dot += g * gain.data[j] * x.data[t * d + j];
      }
      const scale = (dot * r * r * r) / d;
      for (let j = 0; j < d; j++) {
        dX[t * d + j] += out.grad[t * d + j] * gain.data[j] * r - x.data[t * d + j] * scale;
      }
    }
  });
  return out;
}

/** Multi-head causal self-attention over a packed [T, 3d] qkv activation;
 * returns the mixed values [T, d]. */
export function causalSelfAttention(qkv: Tensor, heads: number): Tensor {
  const T = qkv.shape[0];
  const d = qkv.shape[1] / 3;
  if (!Number.isInteger(d) || d % heads !== 0) {
    throw new Error(`attention needs [T, 3d] with d divisible by ${heads} heads`);
  }
  const hd = d / heads;
  const scale = 1 / Math.sqrt(hd);
  const out = new Tensor([T, d]);
  const qd = qkv.data;
  const stride = 3 * d;
  // probs[h][t * T + u], row-stochastic over u <= t
  const probs = new Float32Array(heads * T * T);

  for (let h = 0; h < heads; h++) {
    const qOff = h * hd;
    const kOff = d + h * hd;
    const vOff = 2 * d + h * hd;
    const pOff = h * T * T;
    for (let t = 0; t < T; t++) {
      let maxScore = -Infinity;
      const scores = new Float64Array(t + 1);
      for (let u = 0; u <= t; u++) {
        let s = 0;
        for (let j = 0; j < hd; j++) {
          s += qd[t * stride + qOff + j] * qd[u * stride + kOff + j];
        }
        s *= scale;
        scores[u] = s;
        if (s > maxScore) maxScore = s;
      }
      let total = 0;
      for (let u = 0; u <= t; u++) {
        const e = Math.exp(scores[u] - maxScore);
        scores[u] = e;
        total += e;
      }
      for (let u = 0; u <= t; u++) {
        const p = scores[u] / total;
        probs[pOff + t * T + u] = p;
        for (let j = 0; j < hd; j++) {
          out.data[t * d + h * hd + j] += p * qd[u * stride + vOff + j];
        }
      }
    }
  }
  pushTape(() => {
    if (out.grad === null) return;
    const dOut = out.grad;
    const dQkv = ensureGrad(qkv);
    for (let h = 0; h < heads; h++) {
      const qOff = h * hd;
      const kOff = d + h * hd;
      const vOff = 2 * d + h * hd;
      const pOff = h * T * T;
      for (let t = 0; t < T; t++) {
        // dV and dP
        const dP = new Float64Array(t + 1);
        for (let u = 0; u <= t; u++) {
          const p = probs[pOff + t * T + u];
          let dp = 0;
          for (let j = 0; j < hd; j++) {
            const g = dOut[t * d + h * hd + j];
            dQkv[u * stride + vOff + j] += p * g;
            dp += g * qd[u * stride + vOff + j];
          }
          dP[u] = dp;
        }
        // softmax backward: dS = p * (dP - sum(p dP))
        let mix = 0;
        for (let u = 0; u <= t; u++) mix += probs[pOff + t * T + u] * dP[u];
        for (let u = 0; u <= t; u++) {
          const ds = probs[pOff + t * T + u] * (dP[u] - mix) * scale;
          for (let j = 0; j < hd; j++) {
            dQkv[t * stride + qOff + j] += ds * qd[u * stride + kOff + j];
            dQkv[u * stride + kOff + j] += ds * qd[t * stride + qOff + j];
          }
        }
      }
    }
  });
  return out;
}

export interface CrossEntropyResult {
  /** Scalar mean NLL over positions (differentiable). */
  loss: Tensor;
  /** Per-position NLL, detached. */
  perPosition: Float64Array;
}

/** Softmax cross-entropy against integer targets, fused. */
export function crossEntropy(logits: Tensor, targets: Int32Array): CrossEntropyResult {
  const [T, V] = [logits.shape[0], logits.shape[1]];
  if (targets.length !== T) throw new Error("targets length mismatch");
  const perPosition = new Float64Array(T);
  const probs = gradEnabled ? new Float32Array(T * V) : null;
  let total = 0;
  for (let t = 0; t < T; t++) {
    const row = t * V;
    let maxLogit = -Infinity;
    for (let j = 0; j < V; j++) {
      if (logits.data[row + j] > maxLogit) maxLogit = logits.data[row + j];
    }
    let norm = 0;
    for (let j = 0; j < V; j++) norm += Math.exp(logits.data[row + j] - maxLogit);
    const logNorm = Math.log(norm) + maxLogit;
    perPosition[t] = logNorm - logits.data[row + targets[t]];
    total += perPosition[t];
    if (probs !== null) {
      for (let j = 0; j < V; j++) {
        probs[row + j] = Math.exp(logits.data[row + j] - logNorm);
      }
    }
  }
  const loss = new Tensor([1], new Float32Array([total / T]));
  pushTape(() => {
    if (loss.grad === null || probs === null) return;
    const g = loss.grad[0] / T;
    const dLogits = ensureGrad(logits);
    for (let t = 0; t < T; t++) {
      const row = t * V;
      for (let j = 0; j < V; j++) {
        dLogits[row + j] += g * probs[row + j];
      }
      dLogits[row + targets[t]] -= g;
    }
  });
  return { loss, perPosition };
}

/** Differentiable log P(targets[t] | ...) per position, as a [T] tensor. */
export function pickedLogprobs(logits: Tensor, targets: Int32Array): Tensor {
  const [T, V] = [logits.shape[0], logits.shape[1]];
  if (targets.length !== T) throw new Error("targets length mismatch");
  const out = new Tensor([T]);
  const probs = gradEnabled ? new Float32Array(T * V) : null;
  for (let t = 0; t < T; t++) {
    const row = t * V;
    let maxLogit = -Infinity;
    for (let j = 0; j < V; j++) {
      if (logits.data[row + j] > maxLogit) maxLogit = logits.data[row + j];
    }
    let norm = 0;
    for (let j = 0; j < V; j++) norm += Math.exp(logits.data[row + j] - maxLogit);
    const logNorm = Math.log(norm) + maxLogit;
    out.data[t] = logits.data[row + targets[t]] - logNorm;
    if (probs !== null) {
      for (let j = 0; j < V; j++) {
        probs[row + j] = Math.exp(logits.data[row + j] - logNorm);
      }
    }
  }
  pushTape(() => {
    if (out.grad === null || probs === null) return;
    const dLogits = ensureGrad(logits);
    for (let t = 0; t < T; t++) {
      const g = out.grad[t];
      if (g === 0) continue;
      const row = t * V;
      for (let j = 0; j < V; j++) {
        dLogits[row + j] -= g * probs[row + j];
      }
      dLogits[row + targets[t]] += g;
    }
  });
  return out;
}
