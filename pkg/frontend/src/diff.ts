// Client-side per-pixel difference for the comparison view. Works on decoded
// RGBA buffers (canvas ImageData layout) so it has no DOM dependency and is
// unit-testable in node.

export interface DiffResult {
  overlay: Uint8ClampedArray; // RGBA heat overlay: red with alpha ~ difference
  maxValue: number; // max per-pixel mean abs channel difference, 0..255
  maxAt: { x: number; y: number };
  meanValue: number;
}

export function diffHeatmap(
  a: Uint8ClampedArray,
  b: Uint8ClampedArray,
  width: number,
  height: number,
): DiffResult {
  const n = width * height;
  if (a.length !== n * 4 || b.length !== n * 4) {
    throw new Error(
      `buffer sizes (${a.length}, ${b.length}) do not match ${width}x${height} RGBA`,
    );
  }
  const overlay = new Uint8ClampedArray(n * 4);
  let maxValue = 0;
  let maxAt = { x: 0, y: 0 };
  let sum = 0;
  for (let i = 0; i < n; i++) {
    const o = i * 4;
    const d =
      (Math.abs(a[o] - b[o]) + Math.abs(a[o + 1] - b[o + 1]) + Math.abs(a[o + 2] - b[o + 2])) /
      3;
    sum += d;
    if (d > maxValue) {
      maxValue = d;
      maxAt = { x: i % width, y: Math.floor(i / width) };
    }
    overlay[o] = 255;
    overlay[o + 1] = 32;
    overlay[o + 2] = 32;
    overlay[o + 3] = Math.min(255, Math.round(d * 2.5));
  }
  return { overlay, maxValue, maxAt, meanValue: sum / n };
}

export function boxContains(
  box: [number, number, number, number],
  x: number,
  y: number,
): boolean {
  return x >= box[0] && x < box[2] && y >= box[1] && y < box[3];
}
