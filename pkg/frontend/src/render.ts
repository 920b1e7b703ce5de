// Canvas drawing for one slice: windowed grayscale, prediction contours,
// click markers, box outlines. Positive clicks are red, negative yellow,
// matching the contour palette.

import type { SliceView } from "./api.js";
import { SliceGeometry, planeToCanvas, voxelToPlane } from "./mapping.js";
import type { ViewState } from "./state.js";

export const POSITIVE_COLOR = "#e63232";
export const NEGATIVE_COLOR = "#f0d040";
export const CONTOUR_COLOR = "#f0d040";
export const BOX_COLOR = "#40c0f0";

export async function drawSlice(
  canvas: HTMLCanvasElement,
  slice: SliceView,
  view: ViewState,
  geo: SliceGeometry,
): Promise<void> {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  canvas.width = geo.cols * geo.zoom;
  canvas.height = geo.rows * geo.zoom;

  const img = new Image();
  img.src = `data:image/png;base64,${slice.png_b64}`;
  await img.decode();
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);

  if (view.showContours) {
    ctx.strokeStyle = CONTOUR_COLOR;
    ctx.lineWidth = 1.5;
    for (const loop of slice.contours) {
      ctx.beginPath();
      loop.forEach(([r, c], i) => {
        const [x, y] = planeToCanvas(r, c, geo);
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
  }

  if (view.showClicks) {
    for (const click of view.clicks) {
      const plane = voxelToPlane(click.index, geo);
      if (!plane) continue;
      const [x, y] = planeToCanvas(plane[0], plane[1], geo);
      ctx.fillStyle = click.polarity === "positive" ? POSITIVE_COLOR : NEGATIVE_COLOR;
      ctx.beginPath();
      ctx.arc(x, y, Math.max(3, geo.zoom / 2), 0, 2 * Math.PI);
      ctx.fill();
      ctx.strokeStyle = "#202020";
      ctx.stroke();
    }
  }

  ctx.strokeStyle = BOX_COLOR;
  ctx.lineWidth = 1.5;
  for (const box of view.boxes) {
    // draw boxes spanning this slice along the viewing axis
    const axisIdx = { z: 0, y: 1, x: 2 }[geo.axis];
    if (box[axisIdx] <= geo.index && geo.index <= box[axisIdx + 3]) {
      const planeAxes = [0, 1, 2].filter((a) => a !== axisIdx);
      const r0 = box[planeAxes[0]];
      const c0 = box[planeAxes[1]];
      const r1 = box[planeAxes[0] + 3];
      const c1 = box[planeAxes[1] + 3];
      const [x0, y0] = planeToCanvas(r0, c0, geo);
      const [x1, y1] = planeToCanvas(r1, c1, geo);
      ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
    }
  }
}
