// Playback engine for the keyframe timeline. Frame stepping is driven by an
// injectable ticker so tests can advance time synchronously; scrubbing to a
// frame issues exactly the request playback would issue on reaching it.

import { buildRenderRequest, ManipulationState, RenderRequestBody } from "./api.js";
import { CROSSFADE_SPAN, stateAtFrame } from "./schedule.js";

export interface PlayerOptions {
  fps?: number;
  span?: number;
  frameCount?: number;
  loop?: boolean;
}

export type FrameCallback = (frame: number, body: RenderRequestBody) => void;

export function requestForFrame(base: ManipulationState, frame: number,
                                span: number = CROSSFADE_SPAN): RenderRequestBody {
  return buildRenderRequest(stateAtFrame(base, frame, span));
}

export class TimelinePlayer {
  private current = 0;
  private playing = false;
  private timer: ReturnType<typeof setInterval> | null = null;
  readonly fps: number;
  readonly span: number;
  readonly frameCount: number;
  readonly loop: boolean;

  constructor(private base: ManipulationState, private onFrame: FrameCallback,
              opts: PlayerOptions = {}) {
    this.fps = opts.fps ?? 25;
    this.span = opts.span ?? CROSSFADE_SPAN;
    this.loop = opts.loop ?? false;
    const last = base.timeline.length
      ? Math.max(...base.timeline.map((k) => k.frame))
      : 0;
    this.frameCount = opts.frameCount ?? last + this.span;
  }

  get frame(): number {
    return this.current;
  }

  get isPlaying(): boolean {
    return this.playing;
  }

  private emit(): void {
    this.onFrame(this.current, requestForFrame(this.base, this.current, this.span));
  }

  // one playback step; exposed so tests can drive the clock
  step(): void {
    if (!this.playing) {
      return;
    }
    this.emit();
    if (this.current >= this.frameCount - 1) {
      if (this.loop) {
        this.current = 0;
      } else {
        this.pause();
      }
      return;
    }
    this.current += 1;
  }

  play(): void {
    if (this.playing) {
      return;
    }
    this.playing = true;
    if (typeof setInterval === "function") {
      this.timer = setInterval(() => this.step(), 1000 / this.fps);
    }
  }

  pause(): void {
    this.playing = false;
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  scrub(frame: number): void {
    this.pause();
    this.current = Math.max(0, Math.min(this.frameCount - 1, Math.round(frame)));
    this.emit();
  }
}
