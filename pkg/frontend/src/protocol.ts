// Bridge wire format: a little-endian stream of length-prefixed messages
// [u32 length][u8 kind][payload], length counting the kind byte and payload.
// Kind 'F' carries a frame: u32 frame index, u32 density, then density
// 15-byte records (float32 x, y, z + u8 r, g, b).  Kind 'S' carries one
// UTF-8 "key=value ..." stats line.  Kind 'V' (outbound from the viewer)
// carries "dprime=<number> scale=<number>".

export const MSG_FRAME = 0x46;
export const MSG_STATS = 0x53;
export const MSG_VIEWPORT = 0x56;

export const POINT_RECORD_BYTES = 15;

export interface Message {
  kind: number;
  payload: Uint8Array;
}

export interface FrameMessage {
  frameIndex: number;
  density: number;
  positions: Float32Array; // 3 * density
  colors: Uint8Array;      // 3 * density
}

export type Stats = Record<string, string | number>;

/** Incremental decoder tolerant of arbitrary fragmentation. */
export class StreamDecoder {
  private buffer = new Uint8Array(0);

  feed(data: Uint8Array): Message[] {
    if (this.buffer.length === 0) {
      this.buffer = data.slice();
    } else {
      const joined = new Uint8Array(this.buffer.length + data.length);
      joined.set(this.buffer, 0);
      joined.set(data, this.buffer.length);
      this.buffer = joined;
    }
    const out: Message[] = [];
    let offset = 0;
    const view = new DataView(this.buffer.buffer, this.buffer.byteOffset);
    while (this.buffer.length - offset >= 5) {
      const length = view.getUint32(offset, true);
      if (length < 1) throw new Error("invalid message length");
      if (this.buffer.length - offset < 4 + length) break;
      const kind = this.buffer[offset + 4];
      const payload = this.buffer.slice(offset + 5, offset + 4 + length);
      out.push({ kind, payload });
      offset += 4 + length;
    }
    this.buffer = this.buffer.slice(offset);
    return out;
  }
}

export function decodeFrame(payload: Uint8Array): FrameMessage {
  if (payload.length < 8) throw new Error("frame payload too short");
  const view = new DataView(payload.buffer, payload.byteOffset,
                            payload.byteLength);
  const frameIndex = view.getUint32(0, true);
  const density = view.getUint32(4, true);
  const expected = 8 + density * POINT_RECORD_BYTES;
  if (payload.length !== expected) {
    throw new Error(
      `frame payload ${payload.length} bytes, expected ${expected}`);
  }
  const positions = new Float32Array(3 * density);
  const colors = new Uint8Array(3 * density);
  for (let i = 0; i < density; i++) {
    const base = 8 + i * POINT_RECORD_BYTES;
    positions[3 * i] = view.getFloat32(base, true);
    positions[3 * i + 1] = view.getFloat32(base + 4, true);
    positions[3 * i + 2] = view.getFloat32(base + 8, true);
    colors[3 * i] = payload[base + 12];
    colors[3 * i + 1] = payload[base + 13];
    colors[3 * i + 2] = payload[base + 14];
  }
  return { frameIndex, density, positions, colors };
}

export function parseStats(payload: Uint8Array): Stats {
  const text = new TextDecoder().decode(payload);
  const stats: Stats = {};
  for (const part of text.split(" ")) {
    if (!part) continue;
    const eq = part.indexOf("=");
    if (eq < 1) continue;
    const key = part.slice(0, eq);
    const raw = part.slice(eq + 1);
    const num = Number(raw);
    stats[key] = raw !== "" && Number.isFinite(num) ? num : raw;
  }
  return stats;
}

export function encodeMessage(kind: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(5 + payload.length);
  new DataView(out.buffer).setUint32(0, 1 + payload.length, true);
  out[4] = kind;
  out.set(payload, 5);
  return out;
}

export function encodeViewport(cameraDistanceIn: number,
                               scale: number): Uint8Array {
  const text = `dprime=${cameraDistanceIn} scale=${scale}`;
  return encodeMessage(MSG_VIEWPORT, new TextEncoder().encode(text));
}

/** Any early bytes tell the bridge this is a raw/binary peer right away. */
export function encodeHello(): Uint8Array {
  return encodeMessage(0x48, new TextEncoder().encode("viewer"));
}
