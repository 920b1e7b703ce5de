// UI controller: owns the view state, serializes mutations (one in flight,
// FIFO), and recovers from revision conflicts by refetching server state.
// The server is the single source of truth; everything here is replayable.

import {
  ApiClient,
  Axis,
  Polarity,
  RevisionConflictError,
  SessionState,
  Triple,
} from "./api.js";
import { SliceGeometry, canvasToVoxel, sliceShape } from "./mapping.js";

export type Tool = "pos-click" | "neg-click" | "box";

export interface ViewState {
  sessionId: string | null;
  dims: Triple;
  spacing: Triple;
  axis: Axis;
  sliceIndex: number;
  window: [number, number] | null;
  tool: Tool;
  sigma: Triple;
  zoom: number;
  showContours: boolean;
  showClicks: boolean;
  showGroundTruth: boolean;
  revision: number;
  clicks: { polarity: Polarity; index: Triple }[];
  boxes: number[][];
  predictionVoxels: number;
}

export const MIN_BOX_EXTENT = 128; // advisory in-plane box size
export const MAX_BOXES = 5;

export interface ControllerEvents {
  onState?: (view: ViewState) => void;
  onWarning?: (message: string) => void;
  onError?: (message: string) => void;
  onConflict?: (serverRevision: number) => void;
}

export class UiController {
  view: ViewState = {
    sessionId: null,
    dims: [1, 1, 1],
    spacing: [1, 1, 1],
    axis: "y", // coronal-first
    sliceIndex: 0,
    window: null,
    tool: "pos-click",
    sigma: [1, 5, 5],
    zoom: 4,
    showContours: true,
    showClicks: true,
    showGroundTruth: false,
    revision: 0,
    clicks: [],
    boxes: [],
    predictionVoxels: 0,
  };

  private queue: Promise<void> = Promise.resolve();

  constructor(
    private api: ApiClient,
    private events: ControllerEvents = {},
  ) {}

  geometry(): SliceGeometry {
    const [rows, cols] = sliceShape(this.view.axis, this.view.dims);
    return {
      axis: this.view.axis,
      index: this.view.sliceIndex,
      rows,
      cols,
      zoom: this.view.zoom,
    };
  }

  private applyState(state: SessionState): void {
    this.view.revision = state.revision;
    this.view.sigma = state.sigma;
    this.view.clicks = state.clicks.map((c) => ({ polarity: c.polarity, index: c.index }));
    this.view.boxes = state.boxes;
    this.view.predictionVoxels = state.prediction_voxels;
    this.events.onState?.(this.view);
  }

  async openVolume(dims: Triple, spacing: Triple, dataB64: string): Promise<void> {
    try {
      const info = await this.api.createSession(dims, spacing, dataB64);
      this.view.sessionId = info.session_id;
      this.view.dims = info.dims;
      this.view.spacing = info.spacing;
      this.view.revision = info.revision;
      this.view.sigma = info.sigma;
      this.view.axis = "y";
      this.view.sliceIndex = Math.floor(info.dims[1] / 2); // middle coronal slice
      this.view.clicks = [];
      this.view.boxes = [];
      this.view.predictionVoxels = 0;
      this.events.onState?.(this.view);
    } catch (e) {
      this.events.onError?.(`upload rejected: ${(e as Error).message}`);
      throw e;
    }
  }

  // Mutations queue FIFO behind one another; each sends the latest known
  // revision at send time and refetches on conflict.
  private enqueue(op: () => Promise<SessionState>): Promise<void> {
    const run = async () => {
      const sid = this.view.sessionId;
      if (!sid) throw new Error("no open session");
      try {
        this.applyState(await op());
      } catch (e) {
        if (e instanceof RevisionConflictError) {
          this.applyState(await this.api.state(sid));
          this.events.onConflict?.(e.serverRevision);
        } else {
          this.events.onError?.((e as Error).message);
          throw e;
        }
      }
    };
    this.queue = this.queue.then(run, run);
    return this.queue;
  }

  placeClickAtCanvas(px: number, py: number): Promise<void> {
    const voxel = canvasToVoxel(px, py, this.geometry());
    if (!voxel) {
      this.events.onWarning?.("click outside the slice");
      return Promise.resolve();
    }
    const polarity: Polarity = this.view.tool === "neg-click" ? "negative" : "positive";
    return this.placeClick(polarity, voxel);
  }

  placeClick(polarity: Polarity, voxel: Triple): Promise<void> {
    return this.enqueue(() =>
      this.api.addClick(this.view.sessionId!, this.view.revision, polarity, voxel),
    );
  }

  adjustSigma(sigma: Triple): Promise<void> {
    return this.enqueue(() => this.api.setSigma(this.view.sessionId!, this.view.revision, sigma));
  }

  // Box construction warns (never blocks) on the advisory size/count rules;
  // `confirmed` must be set to push a warned box anyway.
  drawBox(box: number[], confirmed = false): Promise<void> {
    const warnings: string[] = [];
    const height = box[4] - box[1] + 1;
    const width = box[5] - box[2] + 1;
    const [, rows, cols] = this.view.dims;
    if (height < Math.min(MIN_BOX_EXTENT, rows) || width < Math.min(MIN_BOX_EXTENT, cols)) {
      warnings.push(`box in-plane extent ${height}x${width} is below ${MIN_BOX_EXTENT}`);
    }
    if (this.view.boxes.length + 1 > MAX_BOXES) {
      warnings.push(`more than ${MAX_BOXES} boxes`);
    }
    if (warnings.length > 0) {
      this.events.onWarning?.(warnings.join("; "));
      if (!confirmed) return Promise.resolve();
    }
    const boxes = [...this.view.boxes, box];
    return this.enqueue(() => this.api.setBoxes(this.view.sessionId!, this.view.revision, boxes));
  }

  undo(): Promise<void> {
    return this.enqueue(() => this.api.undo(this.view.sessionId!, this.view.revision));
  }

  reset(): Promise<void> {
    return this.enqueue(() => this.api.reset(this.view.sessionId!, this.view.revision));
  }

  async refetch(): Promise<void> {
    const sid = this.view.sessionId;
    if (!sid) return;
    this.applyState(await this.api.state(sid));
  }

  setAxis(axis: Axis): void {
    this.view.axis = axis;
    const max = this.maxSlice();
    if (this.view.sliceIndex > max) this.view.sliceIndex = max;
    this.events.onState?.(this.view);
  }

  setSlice(index: number): void {
    this.view.sliceIndex = Math.max(0, Math.min(index, this.maxSlice()));
    this.events.onState?.(this.view);
  }

  maxSlice(): number {
    const ax = { z: 0, y: 1, x: 2 }[this.view.axis];
    return this.view.dims[ax] - 1;
  }

  setTool(tool: Tool): void {
    this.view.tool = tool;
    this.events.onState?.(this.view);
  }

  toggleOverlay(which: "contours" | "clicks" | "gt"): void {
    if (which === "contours") this.view.showContours = !this.view.showContours;
    else if (which === "clicks") this.view.showClicks = !this.view.showClicks;
    else this.view.showGroundTruth = !this.view.showGroundTruth;
    this.events.onState?.(this.view);
  }

  /** Wait until every queued mutation has settled. */
  flush(): Promise<void> {
    return this.queue;
  }
}
