import type { Box, ColorizeRequest, ColorizeResponse, InstanceSpec } from "./types";

// All session state lives client-side; the service is stateless. History is
// append-only for the lifetime of the workspace so earlier results stay
// comparable.

export interface InstanceUI {
  box: Box;
  caption: string;
  classId: number | null;
  className: string | null;
  confidence: number;
  maskRle: string | null;
}

export interface HistoryEntry {
  id: number;
  request: ColorizeRequest;
  response: ColorizeResponse;
}

export interface WorkspaceState {
  imagePngB64: string | null;
  imageWidth: number;
  imageHeight: number;
  instances: InstanceUI[];
  sceneCaption: string;
  history: HistoryEntry[];
  comparePair: [number, number] | null;
  inFlight: boolean;
  queued: boolean;
  error: string | null;
}

export function initialState(): WorkspaceState {
  return {
    imagePngB64: null,
    imageWidth: 0,
    imageHeight: 0,
    instances: [],
    sceneCaption: "",
    history: [],
    comparePair: null,
    inFlight: false,
    queued: false,
    error: null,
  };
}

export function loadImage(
  state: WorkspaceState,
  pngB64: string,
  width: number,
  height: number,
): WorkspaceState {
  // a fresh image starts a fresh session: history belongs to one image
  return { ...initialState(), imagePngB64: pngB64, imageWidth: width, imageHeight: height };
}

export function setInstances(state: WorkspaceState, instances: InstanceUI[]): WorkspaceState {
  return { ...state, instances: [...instances] };
}

export function editCaption(
  state: WorkspaceState,
  index: number,
  caption: string,
): WorkspaceState {
  if (index < 0 || index >= state.instances.length) {
    throw new Error(`instance index ${index} out of range`);
  }
  const instances = state.instances.map((inst, i) =>
    i === index ? { ...inst, caption } : inst,
  );
  return { ...state, instances };
}

export function addUserBox(state: WorkspaceState, box: Box, caption: string): WorkspaceState {
  const instance: InstanceUI = {
    box,
    caption,
    classId: null,
    className: null,
    confidence: 1.0,
    maskRle: null,
  };
  return { ...state, instances: [...state.instances, instance] };
}

export function removeInstance(state: WorkspaceState, index: number): WorkspaceState {
  return { ...state, instances: state.instances.filter((_, i) => i !== index) };
}

export function setSceneCaption(state: WorkspaceState, caption: string): WorkspaceState {
  return { ...state, sceneCaption: caption };
}

export function buildRequest(state: WorkspaceState): ColorizeRequest {
  if (!state.imagePngB64) throw new Error("no image loaded");
  const instances: InstanceSpec[] = state.instances.map((inst) => ({
    box: inst.box,
    caption: inst.caption,
    class_id: inst.classId,
    confidence: inst.confidence,
    mask_rle: inst.maskRle,
  }));
  return {
    image_png_b64: state.imagePngB64,
    scene_caption: state.sceneCaption,
    instances,
  };
}

// Single in-flight request; a second submit while busy is queued client-side.
export function beginSubmit(state: WorkspaceState): WorkspaceState {
  if (state.inFlight) return { ...state, queued: true };
  return { ...state, inFlight: true, error: null };
}

export function completeSubmit(
  state: WorkspaceState,
  request: ColorizeRequest,
  response: ColorizeResponse,
): WorkspaceState {
  const entry: HistoryEntry = { id: state.history.length, request, response };
  return {
    ...state,
    inFlight: false,
    queued: false,
    error: null,
    history: [...state.history, entry],
  };
}

export function failSubmit(state: WorkspaceState, message: string): WorkspaceState {
  // state other than the banner is untouched, so the user can retry as-is
  return { ...state, inFlight: false, queued: false, error: message };
}

export function selectCompare(
  state: WorkspaceState,
  i: number,
  j: number,
): WorkspaceState {
  if (i < 0 || j < 0 || i >= state.history.length || j >= state.history.length) {
    throw new Error(`compare indices (${i}, ${j}) out of history range`);
  }
  return { ...state, comparePair: [i, j] };
}

export function captionDiff(a: ColorizeRequest, b: ColorizeRequest): number[] {
  // indices whose captions differ between two submitted requests
  const changed: number[] = [];
  const n = Math.max(a.instances.length, b.instances.length);
  for (let i = 0; i < n; i++) {
    const ca = a.instances[i]?.caption ?? null;
    const cb = b.instances[i]?.caption ?? null;
    if (ca !== cb) changed.push(i);
  }
  return changed;
}
