import { defineConfig } from "vite";

// The dev server proxies API calls to the inference service so the UI can be
// served from vite while `textcolorize serve` runs on :8000.
const apiProxy = {
  "/colorize": "http://127.0.0.1:8000",
  "/detect": "http://127.0.0.1:8000",
  "/health": "http://127.0.0.1:8000",
};

export default defineConfig({
  server: { proxy: apiProxy },
  preview: { proxy: apiProxy },
  test: {
    environment: "node",
  },
});
