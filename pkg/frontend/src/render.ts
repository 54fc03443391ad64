import type { Box } from "./types";
import type { InstanceUI } from "./state";

const BOX_COLORS = ["#ff5252", "#40c4ff", "#69f0ae", "#ffd740", "#e040fb", "#ffab40"];

export function drawInstanceOverlay(
  ctx: CanvasRenderingContext2D,
  instances: InstanceUI[],
  scale: number,
  selected: number | null = null,
): void {
  ctx.save();
  ctx.font = "12px sans-serif";
  ctx.textBaseline = "top";
  instances.forEach((inst, i) => {
    const color = BOX_COLORS[i % BOX_COLORS.length];
    const [x0, y0, x1, y1] = inst.box;
    ctx.lineWidth = i === selected ? 3 : 1.5;
    ctx.strokeStyle = color;
    ctx.strokeRect(x0 * scale, y0 * scale, (x1 - x0) * scale, (y1 - y0) * scale);
    const label = `${i}: ${inst.caption}`;
    const metrics = ctx.measureText(label);
    ctx.fillStyle = "rgba(0,0,0,0.65)";
    ctx.fillRect(x0 * scale, y0 * scale - 16, metrics.width + 8, 16);
    ctx.fillStyle = color;
    ctx.fillText(label, x0 * scale + 4, y0 * scale - 14);
  });
  ctx.restore();
}

// Drag-to-draw geometry: pointer coordinates come in canvas space and leave
// as an image-space box, normalized and clamped.
export interface DragState {
  startX: number;
  startY: number;
  endX: number;
  endY: number;
}

export function dragToBox(
  drag: DragState,
  scale: number,
  imageWidth: number,
  imageHeight: number,
): Box | null {
  const x0 = Math.max(0, Math.min(drag.startX, drag.endX) / scale);
  const y0 = Math.max(0, Math.min(drag.startY, drag.endY) / scale);
  const x1 = Math.min(imageWidth, Math.max(drag.startX, drag.endX) / scale);
  const y1 = Math.min(imageHeight, Math.max(drag.startY, drag.endY) / scale);
  const box: Box = [Math.floor(x0), Math.floor(y0), Math.ceil(x1), Math.ceil(y1)];
  if (box[2] - box[0] < 2 || box[3] - box[1] < 2) return null; // too small to mean anything
  return box;
}

export async function decodePngToImageData(pngB64: string): Promise<ImageData> {
  const bytes = Uint8Array.from(atob(pngB64), (c) => c.charCodeAt(0));
  const bitmap = await createImageBitmap(new Blob([bytes], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  return ctx.getImageData(0, 0, bitmap.width, bitmap.height);
}
