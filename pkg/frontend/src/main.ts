// Entry point: connect to the client bridge over WebSocket, decode frames
// into GPU buffers, mirror stats into the HUD, and feed dolly/scale control
// changes back as throttled viewport updates.

import { MSG_FRAME, MSG_STATS, StreamDecoder, decodeFrame, encodeHello,
         encodeViewport, parseStats } from "./protocol.js";
import { PointRenderer } from "./renderer.js";
import { ViewerState, ViewportThrottle, applyFrame, applyStats,
         initialState, setConnected } from "./state.js";
import { HudElements, renderHud } from "./hud.js";

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function bridgeUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const addr = params.get("bridge")
    ?? `${window.location.hostname || "127.0.0.1"}:9301`;
  return `ws://${addr}/`;
}

function sendable(bytes: Uint8Array): ArrayBuffer {
  // WebSocket.send wants a plain ArrayBuffer; ours are never shared.
  return bytes.buffer.slice(bytes.byteOffset,
                            bytes.byteOffset + bytes.byteLength) as ArrayBuffer;
}

function start(): void {
  const canvas = $("view") as HTMLCanvasElement;
  const hud: HudElements = {
    status: $("status"),
    frame: $("frame"),
    density: $("density"),
    representation: $("rep"),
    throughput: $("tput"),
    ppi: $("ppi"),
    drawn: $("drawn"),
    viewport: $("viewport"),
  };
  const dolly = $("dolly") as HTMLInputElement;
  const scale = $("scale") as HTMLInputElement;
  const reconnect = $("reconnect") as HTMLButtonElement;

  const renderer = new PointRenderer(canvas);
  const throttle = new ViewportThrottle(100);
  let state: ViewerState = initialState(Number(dolly.value),
                                        Number(scale.value));
  let socket: WebSocket | null = null;
  let drawn = 0;
  let frames = 0;
  let fps = 0;
  let lastFpsAt = performance.now();
  let orbit = 0;

  function connect(): void {
    const decoder = new StreamDecoder();
    const ws = new WebSocket(bridgeUrl());
    ws.binaryType = "arraybuffer";
    socket = ws;
    ws.onopen = () => {
      state = setConnected(state, true);
      ws.send(sendable(encodeHello()));
    };
    ws.onclose = () => {
      state = setConnected(state, false); // HUD keeps the stale values
      socket = null;
    };
    ws.onmessage = (event) => {
      const data = new Uint8Array(event.data as ArrayBuffer);
      for (const message of decoder.feed(data)) {
        if (message.kind === MSG_FRAME) {
          const frame = decodeFrame(message.payload);
          renderer.upload(frame.positions, frame.colors, frame.density);
          state = applyFrame(state, frame.frameIndex, frame.density);
        } else if (message.kind === MSG_STATS) {
          state = applyStats(state, parseStats(message.payload));
        }
      }
    };
  }

  function pushViewport(): void {
    state = {
      ...state,
      cameraDistanceIn: Number(dolly.value),
      scale: Number(scale.value),
    };
    throttle.request(state.cameraDistanceIn, state.scale);
  }
  dolly.addEventListener("input", pushViewport);
  scale.addEventListener("input", pushViewport);
  canvas.addEventListener("wheel", (event) => {
    event.preventDefault();
    const next = Number(dolly.value) * (event.deltaY > 0 ? 1.1 : 1 / 1.1);
    dolly.value = String(Math.min(Math.max(next, 1), 1e6));
    pushViewport();
  }, { passive: false });
  reconnect.addEventListener("click", () => {
    if (!socket) connect();
  });

  function tick(): void {
    const update = throttle.flush(performance.now());
    if (update && socket && socket.readyState === WebSocket.OPEN) {
      socket.send(sendable(
        encodeViewport(update.cameraDistanceIn, update.scale)));
    }
    orbit += 0.003;
    drawn = renderer.draw(2.2, orbit);
    frames += 1;
    const now = performance.now();
    if (now - lastFpsAt >= 1000) {
      fps = (frames * 1000) / (now - lastFpsAt);
      frames = 0;
      lastFpsAt = now;
    }
    renderHud(hud, state, drawn, fps);
    requestAnimationFrame(tick);
  }

  connect();
  requestAnimationFrame(tick);
}

start();
