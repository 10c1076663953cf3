import { describe, expect, it } from "vitest";
import {
  Tensor,
  backward,
  backwardFrom,
  causalSelfAttention,
  crossEntropy,
  embed,
  matmul,
  pickedLogprobs,
  relu,
  resetTape,
  rmsnorm,
  noGrad,
} from "../src/tensor.js";
import { mulberry32, gauss } from "../src/rng.js";

const rng = mulberry32(7);

function randomTensor(shape: number[], scale = 1): Tensor {
  const t = new Tensor(shape);
  for (let i = 0; i < t.size; i++) t.data[i] = gauss(rng, 0, scale);
  return t;
}

/** Compare analytic gradients of s = sum_i coeffs[i] * out[i] against central
 * finite differences on every parameter entry. Storage is f32, so tolerances
 * are loose. */
function checkGradients(params: Tensor[], forward: () => Tensor): void {
  resetTape();
  const out = forward();
  const coeffs = new Float64Array(out.size);
  for (let i = 0; i < out.size; i++) coeffs[i] = gauss(rng, 0, 1);
  backwardFrom(out, coeffs);

  const scalar = (): number => {
    const o = noGrad(forward);
    let s = 0;
    for (let i = 0; i < o.size; i++) s += coeffs[i] * o.data[i];
    return s;
  };

  const h = 5e-3;
  for (const p of params) {
    expect(p.grad).not.toBeNull();
    for (let i = 0; i < p.size; i++) {
      const keep = p.data[i];
      p.data[i] = keep + h;
      const up = scalar();
      p.data[i] = keep - h;
      const down = scalar();
      p.data[i] = keep;
      const numeric = (up - down) / (2 * h);
      const analytic = p.grad![i];
      const err = Math.abs(numeric - analytic) / Math.max(1, Math.abs(numeric), Math.abs(analytic));
      expect(err, `entry ${i}: analytic ${analytic}, numeric ${numeric}`).toBeLessThan(2e-2);
    }
    p.grad = null;
  }
}

describe("finite-difference gradient checks", () => {
  it("matmul", () => {
    const x = randomTensor([3, 4]);
    const w = randomTensor([4, 5]);
    checkGradients([x, w], () => matmul(x, w));
  });

  it("embed gathers rows and adds positions", () => {
    const table = randomTensor([6, 3]);
    const positions = randomTensor([4, 3]);
    const ids = Int32Array.from([2, 0, 5, 2]);
    checkGradients([table, positions], () => embed(table, positions, ids));
  });

  it("relu", () => {
    const x = randomTensor([2, 6]);
    // Keep entries away from the kink where the derivative jumps.
    for (let i = 0; i < x.size; i++) if (Math.abs(x.data[i]) < 0.05) x.data[i] = 0.5;
    checkGradients([x], () => relu(x));
  });

  it("rmsnorm", () => {
    const x = randomTensor([3, 5]);
    const gain = randomTensor([5]);
    checkGradients([x, gain], () => rmsnorm(x, gain));
  });

  it("causal self-attention", () => {
    const qkv = randomTensor([4, 12], 0.5);
    checkGradients([qkv], () => causalSelfAttention(qkv, 2));
  });

  it("cross-entropy mean loss", () => {
    const logits = randomTensor([4, 7]);
    const targets = Int32Array.from([1, 6, 0, 3]);
    resetTape();
    const { loss } = crossEntropy(logits, targets);
    backward(loss);
    const h = 5e-3;
    for (let i = 0; i < logits.size; i++) {
      const keep = logits.data[i];
      logits.data[i] = keep + h;
      const up = noGrad(() => crossEntropy(logits, targets).loss.data[0]);
      logits.data[i] = keep - h;
      const down = noGrad(() => crossEntropy(logits, targets).loss.data[0]);
      logits.data[i] = keep;
      const numeric = (up - down) / (2 * h);
      expect(Math.abs(numeric - logits.grad![i])).toBeLessThan(1e-3);
    }
  });

  it("picked log-probabilities with a weighted seed", () => {
    const logits = randomTensor([3, 5]);
    const targets = Int32Array.from([4, 1, 2]);
    checkGradients([logits], () => pickedLogprobs(logits, targets));
  });

  it("two-layer composite", () => {
    const x = randomTensor([3, 4]);
    const w1 = randomTensor([4, 8], 0.5);
    const gain = randomTensor([8]);
    const w2 = randomTensor([8, 2], 0.5);
    checkGradients([x, w1, gain, w2], () => matmul(rmsnorm(relu(matmul(x, w1)), gain), w2));
  });
});

describe("tape mechanics", () => {
  it("cross-entropy loss matches an independent computation", () => {
    const logits = randomTensor([2, 3]);
    const targets = Int32Array.from([2, 0]);
    const { loss, perPosition } = noGrad(() => crossEntropy(logits, targets));
    let expected = 0;
    for (let t = 0; t < 2; t++) {
      const row = [logits.data[t * 3], logits.data[t * 3 + 1], logits.data[t * 3 + 2]];
      const m = Math.max(...row);
      const z = row.reduce((a, v) => a + Math.exp(v - m), 0);
      const nll = -(row[targets[t]] - m - Math.log(z));
      expected += nll;
      expect(perPosition[t]).toBeCloseTo(nll, 5);
    }
    expect(loss.data[0]).toBeCloseTo(expected / 2, 5);
  });

  it("noGrad leaves no backward work behind", () => {
    const x = randomTensor([2, 2]);
    const w = randomTensor([2, 2]);
    resetTape();
    noGrad(() => matmul(x, w));
    const out = matmul(x, w);
    backwardFrom(out, Float64Array.from({ length: out.size }, () => 1));
    expect(x.grad).not.toBeNull();
    // One backward pass for one recorded matmul: each x entry sees the sum
    // of its weight row.
    const expected0 = w.data[0] + w.data[1];
    expect(x.grad![0]).toBeCloseTo(expected0, 4);
  });

  it("backward rejects non-scalar outputs", () => {
    const x = randomTensor([2, 2]);
    expect(() => backward(x)).toThrow(/scalar/);
  });
});
