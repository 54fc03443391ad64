import { ApiError, getHealth, postColorize, postDetect } from "./api";
import { diffHeatmap } from "./diff";
import {
  addUserBox,
  beginSubmit,
  buildRequest,
  completeSubmit,
  editCaption,
  failSubmit,
  initialState,
  loadImage,
  removeInstance,
  selectCompare,
  setInstances,
  setSceneCaption,
  type InstanceUI,
  type WorkspaceState,
} from "./state";
import { decodePngToImageData, dragToBox, drawInstanceOverlay, type DragState } from "./render";

let state: WorkspaceState = initialState();
let sourceBitmap: ImageBitmap | null = null;
let drag: DragState | null = null;
let selectedHistory: number[] = [];

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
const canvas = $<HTMLCanvasElement>("image-canvas");
const ctx = canvas.getContext("2d")!;

function setState(next: WorkspaceState) {
  state = next;
  renderAll();
}

function scaleFor(): number {
  if (!state.imageWidth) return 1;
  return Math.min(1, 512 / Math.max(state.imageWidth, state.imageHeight));
}

function renderCanvas() {
  const scale = scaleFor();
  canvas.width = Math.max(1, Math.round(state.imageWidth * scale)) || 512;
  canvas.height = Math.max(1, Math.round(state.imageHeight * scale)) || 512;
  ctx.fillStyle = "#101216";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (sourceBitmap) {
    ctx.drawImage(sourceBitmap, 0, 0, canvas.width, canvas.height);
  }
  drawInstanceOverlay(ctx, state.instances, scale);
  if (drag) {
    ctx.strokeStyle = "#ffffff";
    ctx.setLineDash([4, 3]);
    ctx.strokeRect(
      Math.min(drag.startX, drag.endX),
      Math.min(drag.startY, drag.endY),
      Math.abs(drag.endX - drag.startX),
      Math.abs(drag.endY - drag.startY),
    );
    ctx.setLineDash([]);
  }
}

function renderInstances() {
  const list = $<HTMLDivElement>("instance-list");
  list.innerHTML = "";
  state.instances.forEach((inst, i) => {
    const row = document.createElement("div");
    row.className = "instance-row";
    const meta = document.createElement("span");
    meta.className = "meta";
    meta.textContent = inst.className
      ? `#${i} ${inst.className} (${inst.confidence.toFixed(2)})`
      : `#${i} user box`;
    const input = document.createElement("input");
    input.type = "text";
    input.value = inst.caption;
    input.addEventListener("change", () => setState(editCaption(state, i, input.value)));
    const remove = document.createElement("button");
    remove.textContent = "✕";
    remove.addEventListener("click", () => setState(removeInstance(state, i)));
    row.append(meta, input, remove);
    list.append(row);
  });
  $<HTMLButtonElement>("submit-btn").disabled = !state.imagePngB64 || state.inFlight;
}

function renderError() {
  const banner = $<HTMLDivElement>("error-banner");
  if (state.error) {
    banner.textContent = `colorize failed: ${state.error}`;
    banner.classList.remove("hidden");
  } else {
    banner.classList.add("hidden");
  }
}

function renderHistory() {
  const strip = $<HTMLDivElement>("history-strip");
  strip.innerHTML = "";
  state.history.forEach((entry) => {
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${entry.response.image_png_b64}`;
    img.title = `#${entry.id}`;
    if (selectedHistory.includes(entry.id)) img.classList.add("selected");
    img.addEventListener("click", () => {
      selectedHistory = [...selectedHistory.slice(-1), entry.id];
      if (selectedHistory.length === 2) {
        setState(selectCompare(state, selectedHistory[0], selectedHistory[1]));
        return;
      }
      renderHistory();
    });
    strip.append(img);
  });
}

async function renderCompare() {
  const area = $<HTMLDivElement>("compare-area");
  if (!state.comparePair) {
    area.classList.add("hidden");
    return;
  }
  area.classList.remove("hidden");
  const [i, j] = state.comparePair;
  const a = state.history[i].response;
  const b = state.history[j].response;
  $<HTMLHeadingElement>("compare-label-a").textContent = `#${i}`;
  $<HTMLHeadingElement>("compare-label-b").textContent = `#${j}`;
  const dataA = await decodePngToImageData(a.image_png_b64);
  const dataB = await decodePngToImageData(b.image_png_b64);
  for (const [id, data] of [
    ["compare-a", dataA],
    ["compare-b", dataB],
  ] as const) {
    const c = $<HTMLCanvasElement>(id);
    c.width = data.width;
    c.height = data.height;
    c.getContext("2d")!.putImageData(data, 0, 0);
  }
  const diffCanvas = $<HTMLCanvasElement>("compare-diff");
  diffCanvas.width = dataA.width;
  diffCanvas.height = dataA.height;
  const diffCtx = diffCanvas.getContext("2d")!;
  diffCtx.putImageData(dataA, 0, 0);
  const result = diffHeatmap(dataA.data, dataB.data, dataA.width, dataA.height);
  if ($<HTMLInputElement>("overlay-toggle").checked) {
    const overlay = new ImageData(
      new Uint8ClampedArray(result.overlay),
      dataA.width,
      dataA.height,
    );
    const tmp = document.createElement("canvas");
    tmp.width = dataA.width;
    tmp.height = dataA.height;
    tmp.getContext("2d")!.putImageData(overlay, 0, 0);
    diffCtx.drawImage(tmp, 0, 0);
  }
  $<HTMLDivElement>("diff-stats").textContent =
    `max diff ${result.maxValue.toFixed(1)} at (${result.maxAt.x}, ${result.maxAt.y}); ` +
    `mean ${result.meanValue.toFixed(2)}`;
}

function renderAll() {
  renderCanvas();
  renderInstances();
  renderError();
  renderHistory();
  void renderCompare();
}

// ---------------------------------------------------------------------------
// events
// ---------------------------------------------------------------------------

$<HTMLInputElement>("file-input").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  const buf = new Uint8Array(await file.arrayBuffer());
  let b64 = "";
  for (let i = 0; i < buf.length; i += 0x8000) {
    b64 += String.fromCharCode(...buf.subarray(i, i + 0x8000));
  }
  const pngB64 = btoa(b64);
  sourceBitmap = await createImageBitmap(file);
  selectedHistory = [];
  setState(loadImage(state, pngB64, sourceBitmap.width, sourceBitmap.height));
});

$<HTMLButtonElement>("detect-btn").addEventListener("click", async () => {
  if (!state.imagePngB64) return;
  try {
    const detected = await postDetect({ image_png_b64: state.imagePngB64 });
    const instances: InstanceUI[] = detected.map((d) => ({
      box: d.box,
      caption: d.caption || d.class_name,
      classId: d.class_id,
      className: d.class_name,
      confidence: d.confidence,
      maskRle: d.mask_rle ?? null,
    }));
    setState(setInstances(state, instances));
  } catch (e) {
    setState(failSubmit(state, (e as ApiError).message));
  }
});

$<HTMLButtonElement>("clear-boxes-btn").addEventListener("click", () =>
  setState(setInstances(state, [])),
);

$<HTMLInputElement>("scene-caption").addEventListener("change", (ev) =>
  setState(setSceneCaption(state, (ev.target as HTMLInputElement).value)),
);

canvas.addEventListener("mousedown", (ev) => {
  if (!state.imagePngB64) return;
  const rect = canvas.getBoundingClientRect();
  drag = {
    startX: ev.clientX - rect.left,
    startY: ev.clientY - rect.top,
    endX: ev.clientX - rect.left,
    endY: ev.clientY - rect.top,
  };
});

canvas.addEventListener("mousemove", (ev) => {
  if (!drag) return;
  const rect = canvas.getBoundingClientRect();
  drag.endX = ev.clientX - rect.left;
  drag.endY = ev.clientY - rect.top;
  renderCanvas();
});

canvas.addEventListener("mouseup", () => {
  if (!drag) return;
  const box = dragToBox(drag, scaleFor(), state.imageWidth, state.imageHeight);
  drag = null;
  if (box) {
    const caption = window.prompt("Caption for this box (e.g. 'blue sky'):", "");
    if (caption && caption.trim()) {
      setState(addUserBox(state, box, caption.trim()));
      return;
    }
  }
  renderCanvas();
});

$<HTMLButtonElement>("submit-btn").addEventListener("click", () => void submit());

async function submit() {
  if (state.inFlight) {
    setState(beginSubmit(state)); // queues
    return;
  }
  const request = buildRequest(state);
  setState(beginSubmit(state));
  try {
    const response = await postColorize(request);
    setState(completeSubmit(state, request, response));
  } catch (e) {
    setState(failSubmit(state, (e as ApiError).message));
    return;
  }
  if (state.queued) {
    state = { ...state, queued: false };
    await submit();
  }
}

$<HTMLInputElement>("overlay-toggle").addEventListener("change", () => void renderCompare());

void (async () => {
  const health = $<HTMLSpanElement>("health");
  try {
    const h = await getHealth();
    health.textContent =
      h.status === "ready"
        ? `service ready (${h.checkpoints.ioc} / ${h.checkpoints.fusion})`
        : "service loading…";
  } catch (e) {
    health.textContent = `service offline: ${(e as ApiError).message}`;
  }
})();

renderAll();
