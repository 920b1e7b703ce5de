// Typed client for the segmentation session API. Pure fetch, no DOM.

export type Axis = "z" | "y" | "x";
export type Polarity = "positive" | "negative";
export type Triple = [number, number, number];

export interface SessionInfo {
  session_id: string;
  dims: Triple;
  spacing: Triple;
  revision: number;
  sigma: Triple;
}

export interface ClickRecord {
  polarity: Polarity;
  index: Triple;
}

export interface SessionState {
  revision: number;
  dims: Triple;
  spacing: Triple;
  sigma: Triple;
  clicks: ClickRecord[];
  boxes: number[][]; // [zmin, ymin, xmin, zmax, ymax, xmax]
  has_ground_truth: boolean;
  prediction_voxels: number;
}

export interface SliceView {
  revision: number;
  axis: Axis;
  index: number;
  shape: [number, number];
  window: [number, number];
  png_b64: string;
  contours: [number, number][][];
  clicks: { polarity: Polarity; point: [number, number] }[];
}

export class RevisionConflictError extends Error {
  constructor(public serverRevision: number) {
    super(`revision conflict, server is at ${serverRevision}`);
  }
}

async function parseOrThrow(res: Response): Promise<unknown> {
  if (res.status === 409) {
    const body = (await res.json()) as { revision: number };
    throw new RevisionConflictError(body.revision);
  }
  if (!res.ok) {
    const text = await res.text();
    throw new Error(`HTTP ${res.status}: ${text}`);
  }
  return res.json();
}

export class ApiClient {
  constructor(private baseUrl: string) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    const res = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return parseOrThrow(res);
  }

  async createSession(dims: Triple, spacing: Triple, dataB64: string): Promise<SessionInfo> {
    return (await this.post("/sessions", {
      dims,
      spacing,
      data_b64: dataB64,
    })) as SessionInfo;
  }

  async state(sessionId: string): Promise<SessionState> {
    const res = await fetch(`${this.baseUrl}/sessions/${sessionId}/state`);
    return (await parseOrThrow(res)) as SessionState;
  }

  async addClick(
    sessionId: string,
    revision: number,
    polarity: Polarity,
    index: Triple,
  ): Promise<SessionState> {
    return (await this.post(`/sessions/${sessionId}/clicks`, {
      revision,
      polarity,
      index,
    })) as SessionState;
  }

  async setBoxes(sessionId: string, revision: number, boxes: number[][]): Promise<SessionState> {
    return (await this.post(`/sessions/${sessionId}/boxes`, { revision, boxes })) as SessionState;
  }

  async setSigma(sessionId: string, revision: number, sigma: Triple): Promise<SessionState> {
    return (await this.post(`/sessions/${sessionId}/sigma`, { revision, sigma })) as SessionState;
  }

  async undo(sessionId: string, revision: number): Promise<SessionState> {
    return (await this.post(`/sessions/${sessionId}/undo`, { revision })) as SessionState;
  }

  async reset(sessionId: string, revision: number): Promise<SessionState> {
    return (await this.post(`/sessions/${sessionId}/reset`, { revision })) as SessionState;
  }

  async slice(sessionId: string, axis: Axis, index: number, window?: [number, number]): Promise<SliceView> {
    const params = new URLSearchParams({ axis, index: String(index) });
    if (window) params.set("window", `${window[0]},${window[1]}`);
    const res = await fetch(`${this.baseUrl}/sessions/${sessionId}/slice?${params}`);
    return (await parseOrThrow(res)) as SliceView;
  }
}
