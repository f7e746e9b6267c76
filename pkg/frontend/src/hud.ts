// DOM bindings for the adaptation HUD.

import type { ViewerState } from "./state.js";

export interface HudElements {
  status: HTMLElement;
  frame: HTMLElement;
  density: HTMLElement;
  representation: HTMLElement;
  throughput: HTMLElement;
  ppi: HTMLElement;
  drawn: HTMLElement;
  viewport: HTMLElement;
}

function fmt(value: number | null, suffix = "", digits = 0): string {
  if (value === null) return "-";
  return value.toFixed(digits) + suffix;
}

export function renderHud(el: HudElements, state: ViewerState,
                          drawnCount: number, fps: number): void {
  el.status.textContent = state.connected ? "connected" : "disconnected";
  el.status.className = state.connected ? "ok" : "stale";
  el.frame.textContent = state.lastFrame === null ? "-" : `${state.lastFrame}`;
  el.density.textContent = fmt(state.density);
  el.representation.textContent = state.representation ?? "-";
  el.throughput.textContent =
    state.throughputBps === null
      ? "-"
      : `${(state.throughputBps / 1e6).toFixed(2)} Mb/s`;
  el.ppi.textContent =
    `${fmt(state.requiredPpi, "", 2)} required / ` +
    `${fmt(state.effectivePpi, "", 2)} effective`;
  el.drawn.textContent = `${drawnCount} pts @ ${fps.toFixed(0)} fps`;
  el.viewport.textContent =
    `D' ${state.cameraDistanceIn.toFixed(1)} in, S ${state.scale.toFixed(2)}`;
}
