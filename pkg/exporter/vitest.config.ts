import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the cross-tool round-trip shells out to the Python engine
    testTimeout: 120_000,
  },
});
