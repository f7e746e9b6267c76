// Viewer-side session state: the HUD mirrors the most recent stats message,
// and outbound viewport updates are throttled to one per interval with
// monotonically increasing timestamps.

import type { Stats } from "./protocol.js";

export interface ViewerState {
  connected: boolean;
  lastFrame: number | null;
  density: number | null;
  representation: string | null;
  throughputBps: number | null;
  requiredPpi: number | null;
  effectivePpi: number | null;
  cameraDistanceIn: number;
  scale: number;
}

export function initialState(cameraDistanceIn = 0, scale = 1): ViewerState {
  return {
    connected: false,
    lastFrame: null,
    density: null,
    representation: null,
    throughputBps: null,
    requiredPpi: null,
    effectivePpi: null,
    cameraDistanceIn,
    scale,
  };
}

function num(value: string | number | undefined): number | null {
  return typeof value === "number" ? value : null;
}

export function applyStats(state: ViewerState, stats: Stats): ViewerState {
  return {
    ...state,
    density: num(stats["density"]) ?? state.density,
    representation:
      typeof stats["rep"] === "string" ? stats["rep"] : state.representation,
    throughputBps: num(stats["tput_bps"]) ?? state.throughputBps,
    requiredPpi: num(stats["req_ppi"]) ?? state.requiredPpi,
    effectivePpi: num(stats["eff_ppi"]) ?? state.effectivePpi,
  };
}

export function applyFrame(state: ViewerState, frameIndex: number,
                           density: number): ViewerState {
  return { ...state, lastFrame: frameIndex, density };
}

export function setConnected(state: ViewerState,
                             connected: boolean): ViewerState {
  return { ...state, connected };
}

export interface ViewportUpdate {
  cameraDistanceIn: number;
  scale: number;
  timestampMs: number;
}

/**
 * Quantizes viewport changes to at most one update per interval.  Calls
 * between ticks keep only the latest value; flush() returns the update to
 * send now, if any, and guarantees timestamps strictly increase.
 */
export class ViewportThrottle {
  private pending: { cameraDistanceIn: number; scale: number } | null = null;
  private lastSentMs = -Infinity;
  private lastTimestampMs = -Infinity;

  constructor(readonly intervalMs = 100) {}

  request(cameraDistanceIn: number, scale: number): void {
    this.pending = { cameraDistanceIn, scale };
  }

  flush(nowMs: number): ViewportUpdate | null {
    if (this.pending === null) return null;
    if (nowMs - this.lastSentMs < this.intervalMs) return null;
    const timestampMs = Math.max(nowMs, this.lastTimestampMs + 1e-3);
    const update = { ...this.pending, timestampMs };
    this.pending = null;
    this.lastSentMs = nowMs;
    this.lastTimestampMs = timestampMs;
    return update;
  }
}
