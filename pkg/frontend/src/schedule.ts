// Cross-fade schedule for two-emotion talking: around each keyframe switch
// the blend weight ramps 0 -> 1 across a fixed span of frames (mirrors the
// service's default of 12).

import { ManipulationState, TimelineKeyframe } from "./api.js";

export const CROSSFADE_SPAN = 12;

export function crossfadeLambda(frame: number, switchFrame: number,
                                span: number = CROSSFADE_SPAN): number {
  const t = (frame - (switchFrame - span / 2)) / span;
  return Math.max(0, Math.min(1, t));
}

export interface FrameState {
  emotion: string;
  secondEmotion: string | null;
  tau: number;
  lambda: number;
}

// State at a frame given sorted keyframes: outside a cross-fade the latest
// keyframe wins; inside one, the previous/next pair blend with the ramp.
export function frameState(timeline: TimelineKeyframe[], frame: number,
                           span: number = CROSSFADE_SPAN): FrameState {
  if (timeline.length === 0) {
    throw new Error("timeline needs at least one keyframe");
  }
  const keys = [...timeline].sort((a, b) => a.frame - b.frame);
  if (frame <= keys[0].frame) {
    return { emotion: keys[0].emotion, secondEmotion: null,
             tau: keys[0].tau, lambda: 0 };
  }
  let prev = keys[0];
  for (let i = 1; i < keys.length; i++) {
    const next = keys[i];
    if (frame <= next.frame + span / 2) {
      const lam = crossfadeLambda(frame, next.frame, span);
      if (lam <= 0) {
        return { emotion: prev.emotion, secondEmotion: null,
                 tau: prev.tau, lambda: 0 };
      }
      if (lam >= 1) {
        return { emotion: next.emotion, secondEmotion: null,
                 tau: next.tau, lambda: 0 };
      }
      return {
        emotion: prev.emotion,
        secondEmotion: next.emotion,
        tau: (1 - lam) * prev.tau + lam * next.tau,
        lambda: lam,
      };
    }
    prev = next;
  }
  const last = keys[keys.length - 1];
  return { emotion: last.emotion, secondEmotion: null, tau: last.tau, lambda: 0 };
}

export function stateAtFrame(base: ManipulationState, frame: number,
                             span: number = CROSSFADE_SPAN): ManipulationState {
  const fs = frameState(base.timeline, frame, span);
  return {
    ...base,
    emotion: fs.emotion,
    secondEmotion: fs.secondEmotion,
    tau: fs.tau,
    lambda: fs.lambda,
  };
}
