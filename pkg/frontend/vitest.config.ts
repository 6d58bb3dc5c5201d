import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the e2e suite spawns the Python service and waits for real builds
    testTimeout: 30_000,
    hookTimeout: 180_000,
  },
});
