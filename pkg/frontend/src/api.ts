import type {
  ColorizeRequest,
  ColorizeResponse,
  DetectRequest,
  HealthResponse,
  InstanceOut,
} from "./types";

export class ApiError extends Error {
  status: number | null;

  constructor(message: string, status: number | null = null) {
    super(message);
    this.status = status;
  }
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (e) {
    throw new ApiError(`service unreachable: ${(e as Error).message}`);
  }
  let payload: unknown;
  try {
    payload = await resp.json();
  } catch {
    throw new ApiError(`service returned non-JSON (HTTP ${resp.status})`, resp.status);
  }
  if (!resp.ok) {
    const detail =
      payload && typeof payload === "object" && "detail" in payload
        ? String((payload as { detail: unknown }).detail)
        : `HTTP ${resp.status}`;
    throw new ApiError(detail, resp.status);
  }
  return payload as T;
}

function isBox(value: unknown): boolean {
  return (
    Array.isArray(value) &&
    value.length === 4 &&
    value.every((v) => typeof v === "number" && Number.isFinite(v))
  );
}

function validateInstance(inst: unknown, where: string): InstanceOut {
  if (!inst || typeof inst !== "object") {
    throw new ApiError(`${where}: instance is not an object`);
  }
  const o = inst as Record<string, unknown>;
  if (!isBox(o.box)) throw new ApiError(`${where}: bad box ${JSON.stringify(o.box)}`);
  if (typeof o.caption !== "string") throw new ApiError(`${where}: missing caption`);
  return o as unknown as InstanceOut;
}

export function validateColorizeResponse(payload: unknown): ColorizeResponse {
  if (!payload || typeof payload !== "object") {
    throw new ApiError("colorize response is not an object");
  }
  const o = payload as Record<string, unknown>;
  if (typeof o.image_png_b64 !== "string" || o.image_png_b64.length === 0) {
    throw new ApiError("colorize response missing image_png_b64");
  }
  if (typeof o.width !== "number" || typeof o.height !== "number") {
    throw new ApiError("colorize response missing dimensions");
  }
  if (!Array.isArray(o.instances)) {
    throw new ApiError("colorize response missing instances");
  }
  o.instances.forEach((inst, i) => validateInstance(inst, `instances[${i}]`));
  if (!Array.isArray(o.captions_used)) {
    throw new ApiError("colorize response missing captions_used");
  }
  return o as unknown as ColorizeResponse;
}

export function validateDetectResponse(payload: unknown): InstanceOut[] {
  if (!payload || typeof payload !== "object" || !Array.isArray((payload as any).instances)) {
    throw new ApiError("detect response missing instances");
  }
  return (payload as { instances: unknown[] }).instances.map((inst, i) =>
    validateInstance(inst, `instances[${i}]`),
  );
}

export async function postColorize(
  req: ColorizeRequest,
  baseUrl = "",
): Promise<ColorizeResponse> {
  return validateColorizeResponse(await postJson(`${baseUrl}/colorize`, req));
}

export async function postDetect(
  req: DetectRequest,
  baseUrl = "",
): Promise<InstanceOut[]> {
  return validateDetectResponse(await postJson(`${baseUrl}/detect`, req));
}

export async function getHealth(baseUrl = ""): Promise<HealthResponse> {
  let resp: Response;
  try {
    resp = await fetch(`${baseUrl}/health`);
  } catch (e) {
    throw new ApiError(`service unreachable: ${(e as Error).message}`);
  }
  if (!resp.ok) throw new ApiError(`health check failed (HTTP ${resp.status})`, resp.status);
  return (await resp.json()) as HealthResponse;
}
