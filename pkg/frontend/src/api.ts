// Types and request building for the manipulation service. The UI state to
// request-body mapping is a pure function so playback, scrubbing and slider
// moves all produce identical requests for identical state.

export interface CameraState {
  azimuth_deg: number;
  elevation_deg: number;
  radius: number;
}

export interface TimelineKeyframe {
  frame: number;
  emotion: string;
  tau: number;
}

export interface ManipulationState {
  emotion: string;
  secondEmotion: string | null;
  tau: number;
  lambda: number;
  camera: CameraState;
  resolution: number;
  timeline: TimelineKeyframe[];
}

export interface RenderRequestBody {
  emotion: string;
  tau: number;
  second_emotion?: string;
  lambda?: number;
  camera: CameraState;
  resolution: number;
}

export interface ServiceInfo {
  emotions: string[];
  max_resolution: number;
  tau_range: [number, number];
  mode: string;
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}

export function defaultState(emotion: string): ManipulationState {
  return {
    emotion,
    secondEmotion: null,
    tau: 0,
    lambda: 0,
    camera: { azimuth_deg: 0, elevation_deg: 0, radius: 3 },
    resolution: 64,
    timeline: [],
  };
}

// lambda is only meaningful (and only sent) when a second emotion is set
export function buildRenderRequest(state: ManipulationState): RenderRequestBody {
  const body: RenderRequestBody = {
    emotion: state.emotion,
    tau: state.tau,
    camera: {
      azimuth_deg: state.camera.azimuth_deg,
      elevation_deg: state.camera.elevation_deg,
      radius: state.camera.radius,
    },
    resolution: state.resolution,
  };
  if (state.secondEmotion !== null && state.secondEmotion !== "") {
    body.second_emotion = state.secondEmotion;
    body.lambda = clamp(state.lambda, 0, 1);
  }
  return body;
}

export interface RenderResult {
  blob: Blob;
  latencyMs: number;
}

export class RenderClient {
  constructor(private baseUrl: string = "") {}

  async info(): Promise<ServiceInfo> {
    const resp = await fetch(`${this.baseUrl}/emotions`);
    if (!resp.ok) {
      throw new Error(`GET /emotions failed: ${resp.status}`);
    }
    return (await resp.json()) as ServiceInfo;
  }

  async health(): Promise<boolean> {
    try {
      const resp = await fetch(`${this.baseUrl}/health`);
      return resp.ok;
    } catch {
      return false;
    }
  }

  async render(body: RenderRequestBody, signal?: AbortSignal): Promise<RenderResult> {
    const started = performance.now();
    const resp = await fetch(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!resp.ok) {
      const detail = await resp.text();
      throw new Error(`render failed (${resp.status}): ${detail}`);
    }
    const blob = await resp.blob();
    return { blob, latencyMs: performance.now() - started };
  }
}
