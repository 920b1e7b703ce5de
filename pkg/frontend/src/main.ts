// DOM wiring: file upload, slice navigation, tools, sigma sliders, overlay
// toggles, and the canvas. All state transitions run through UiController.

import { ApiClient, Axis, Triple } from "./api.js";
import { drawSlice } from "./render.js";
import { UiController } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new ApiClient("");
const status = $("status");
const warning = $("warning");
const canvas = $<HTMLCanvasElement>("slice-canvas");

const controller = new UiController(api, {
  onState: () => {
    void refresh();
  },
  onWarning: (msg) => showBanner(msg, "#9a6a00"),
  onError: (msg) => showBanner(msg, "#a02020"),
  onConflict: (rev) => showBanner(`another tab changed this session (now at r${rev})`, "#a02020"),
});

let bannerTimer: number | undefined;
function showBanner(msg: string, color: string): void {
  warning.textContent = msg;
  warning.style.background = color;
  warning.style.display = "block";
  window.clearTimeout(bannerTimer);
  bannerTimer = window.setTimeout(() => (warning.style.display = "none"), 4000);
}

async function refresh(): Promise<void> {
  const view = controller.view;
  if (!view.sessionId) return;
  const slider = $<HTMLInputElement>("slice-slider");
  slider.max = String(controller.maxSlice());
  slider.value = String(view.sliceIndex);
  $("slice-label").textContent = `${view.axis}=${view.sliceIndex}/${controller.maxSlice()}`;
  status.textContent =
    `session ${view.sessionId}  dims ${view.dims.join("×")}  ` +
    `spacing ${view.spacing.map((s) => s.toFixed(2)).join("×")}mm  ` +
    `r${view.revision}  clicks ${view.clicks.length}  pred ${view.predictionVoxels} vox`;
  try {
    const slice = await api.slice(view.sessionId, view.axis, view.sliceIndex, view.window ?? undefined);
    if (slice.revision === controller.view.revision) {
      await drawSlice(canvas, slice, controller.view, controller.geometry());
    }
  } catch (e) {
    showBanner((e as Error).message, "#a02020");
  }
}

function parseHeader(text: string): { dims: Triple; spacing: Triple } {
  const obj = JSON.parse(text) as { dims: number[]; spacing: number[] };
  if (!obj.dims || obj.dims.length !== 3) throw new Error("header must carry dims [d, h, w]");
  return {
    dims: obj.dims as Triple,
    spacing: (obj.spacing ?? [1, 1, 1]) as Triple,
  };
}

function bytesToB64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

$("open-btn").addEventListener("click", async () => {
  const headerInput = $<HTMLInputElement>("header-file");
  const payloadInput = $<HTMLInputElement>("payload-file");
  const header = headerInput.files?.[0];
  const payload = payloadInput.files?.[0];
  if (!header || !payload) {
    showBanner("choose the .json header and .raw payload", "#9a6a00");
    return;
  }
  try {
    const meta = parseHeader(await header.text());
    const bytes = new Uint8Array(await payload.arrayBuffer());
    await controller.openVolume(meta.dims, meta.spacing, bytesToB64(bytes));
  } catch {
    // controller already surfaced the error banner
  }
});

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const px = ev.clientX - rect.left;
  const py = ev.clientY - rect.top;
  if (controller.view.tool === "box") {
    handleBoxCorner(px, py);
  } else {
    void controller.placeClickAtCanvas(px, py);
  }
});

let pendingCorner: [number, number] | null = null;
function handleBoxCorner(px: number, py: number): void {
  const geo = controller.geometry();
  const plane = [Math.floor(py / geo.zoom), Math.floor(px / geo.zoom)] as [number, number];
  if (!pendingCorner) {
    pendingCorner = plane;
    showBanner("box corner set; click the opposite corner", "#406080");
    return;
  }
  const [r0, c0] = pendingCorner;
  const [r1, c1] = plane;
  pendingCorner = null;
  const axisIdx = { z: 0, y: 1, x: 2 }[controller.view.axis];
  const lo = [0, 0, 0];
  const hi = [0, 0, 0];
  const planeAxes = [0, 1, 2].filter((a) => a !== axisIdx);
  lo[axisIdx] = hi[axisIdx] = controller.view.sliceIndex;
  lo[planeAxes[0]] = Math.min(r0, r1);
  hi[planeAxes[0]] = Math.max(r0, r1);
  lo[planeAxes[1]] = Math.min(c0, c1);
  hi[planeAxes[1]] = Math.max(c0, c1);
  void controller.drawBox([...lo, ...hi], false);
}

for (const axis of ["z", "y", "x"] as Axis[]) {
  $(`axis-${axis}`).addEventListener("click", () => controller.setAxis(axis));
}
$<HTMLInputElement>("slice-slider").addEventListener("input", (ev) => {
  controller.setSlice(Number((ev.target as HTMLInputElement).value));
});
$("tool-pos").addEventListener("click", () => controller.setTool("pos-click"));
$("tool-neg").addEventListener("click", () => controller.setTool("neg-click"));
$("tool-box").addEventListener("click", () => controller.setTool("box"));
$("undo-btn").addEventListener("click", () => void controller.undo());
$("reset-btn").addEventListener("click", () => void controller.reset());
$("toggle-contours").addEventListener("change", () => controller.toggleOverlay("contours"));
$("toggle-clicks").addEventListener("change", () => controller.toggleOverlay("clicks"));

$("sigma-apply").addEventListener("click", () => {
  const sz = Number($<HTMLInputElement>("sigma-z").value);
  const sy = Number($<HTMLInputElement>("sigma-y").value);
  const sx = Number($<HTMLInputElement>("sigma-x").value);
  void controller.adjustSigma([sz, sy, sx]);
});

$<HTMLInputElement>("zoom").addEventListener("input", (ev) => {
  controller.view.zoom = Number((ev.target as HTMLInputElement).value);
  void refresh();
});
