// Wire types for the inference service. Kept in sync with the documented
// /colorize and /detect schemas (see the repository README).

export type Box = [number, number, number, number]; // x0, y0, x1, y1

export interface InstanceSpec {
  box: Box;
  caption: string;
  class_id?: number | null;
  confidence?: number;
  mask_rle?: string | null;
}

export interface InstanceOut {
  box: Box;
  caption: string;
  class_id: number;
  class_name: string;
  confidence: number;
  mask_rle?: string;
}

export interface ColorizeRequest {
  image_png_b64: string;
  scene_caption: string;
  instances: InstanceSpec[];
}

export interface ColorizeResponse {
  image_png_b64: string;
  width: number;
  height: number;
  bit_depth: number;
  instances: InstanceOut[];
  captions_used: string[];
  out_of_gamut_count: number;
  timing_ms: Record<string, number>;
}

export interface DetectRequest {
  image_png_b64: string;
  annotations?: InstanceSpec[];
}

export interface HealthResponse {
  status: "loading" | "ready";
  checkpoints: { ioc: string | null; fusion: string | null };
  adapters: { text_encoder: string; detector: string };
}
