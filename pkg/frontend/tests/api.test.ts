import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiError,
  getHealth,
  postColorize,
  postDetect,
  validateColorizeResponse,
  validateDetectResponse,
} from "../src/api";
import type { ColorizeRequest } from "../src/types";

const REQUEST: ColorizeRequest = {
  image_png_b64: "aGVsbG8=",
  scene_caption: "scene",
  instances: [{ box: [0, 0, 4, 4], caption: "red dot" }],
};

const GOOD_RESPONSE = {
  image_png_b64: "aW1n",
  width: 4,
  height: 4,
  bit_depth: 16,
  instances: [
    { box: [0, 0, 4, 4], caption: "red dot", class_id: 0, class_name: "person", confidence: 1 },
  ],
  captions_used: ["red dot"],
  out_of_gamut_count: 0,
  timing_ms: { total_ms: 3 },
};

function mockFetch(impl: (url: string, init?: RequestInit) => Promise<Response>) {
  vi.stubGlobal("fetch", vi.fn(impl));
}

afterEach(() => vi.unstubAllGlobals());

describe("api client", () => {
  it("posts the request body unchanged and validates the reply", async () => {
    let seenBody: unknown = null;
    mockFetch(async (_url, init) => {
      seenBody = JSON.parse(init!.body as string);
      return new Response(JSON.stringify(GOOD_RESPONSE), { status: 200 });
    });
    const resp = await postColorize(REQUEST);
    expect(seenBody).toEqual(REQUEST);
    expect(resp.image_png_b64).toBe("aW1n");
  });

  it("offline service raises a descriptive ApiError", async () => {
    mockFetch(async () => {
      throw new TypeError("fetch failed");
    });
    await expect(postColorize(REQUEST)).rejects.toThrow(/unreachable/);
  });

  it("4xx body detail is surfaced", async () => {
    mockFetch(async () =>
      new Response(JSON.stringify({ detail: "instance 0: box outside bounds" }), {
        status: 400,
      }),
    );
    await expect(postColorize(REQUEST)).rejects.toThrow(/box outside bounds/);
  });

  it("malformed service response is rejected by schema validation", async () => {
    mockFetch(async () => new Response(JSON.stringify({ width: 4 }), { status: 200 }));
    await expect(postColorize(REQUEST)).rejects.toThrow(/image_png_b64/);
  });

  it("non-JSON response is an ApiError, not a crash", async () => {
    mockFetch(async () => new Response("<html>gateway</html>", { status: 502 }));
    const err = await postColorize(REQUEST).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(502);
  });

  it("detect replies validate per instance", async () => {
    mockFetch(async () =>
      new Response(JSON.stringify({ instances: [{ box: [0, 0], caption: "x" }] }), {
        status: 200,
      }),
    );
    await expect(postDetect({ image_png_b64: "aW1n" })).rejects.toThrow(/bad box/);
  });

  it("health check parses", async () => {
    mockFetch(async () =>
      new Response(
        JSON.stringify({
          status: "ready",
          checkpoints: { ioc: "a.pt", fusion: "b.pt" },
          adapters: { text_encoder: "stub", detector: "stub" },
        }),
        { status: 200 },
      ),
    );
    const h = await getHealth();
    expect(h.status).toBe("ready");
  });
});

describe("schema validators", () => {
  it("accept the documented shapes", () => {
    expect(() => validateColorizeResponse(GOOD_RESPONSE)).not.toThrow();
    expect(() => validateDetectResponse({ instances: GOOD_RESPONSE.instances })).not.toThrow();
  });

  it("reject missing fields with the field named", () => {
    expect(() => validateColorizeResponse({ ...GOOD_RESPONSE, instances: "x" })).toThrow(
      /instances/,
    );
    expect(() =>
      validateColorizeResponse({ ...GOOD_RESPONSE, captions_used: undefined }),
    ).toThrow(/captions_used/);
  });
});
