import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The integration suite boots the Python service once per run.
    testTimeout: 20_000,
    hookTimeout: 120_000,
  },
});
