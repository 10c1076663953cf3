import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // Training-backed tests fit a small model from scratch.
    testTimeout: 240_000,
    hookTimeout: 600_000,
  },
});
