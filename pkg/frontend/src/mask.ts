/** Editable-region mask: brush strokes rasterized client-side.
 *
 * The mask is the single source of truth for geometry: the service never
 * re-rasterizes strokes. On the wire it travels as packed bits
 * ("bits:<w>:<h>:<base64>", row-major, MSB-first), which round-trips
 * losslessly.
 */

export interface Stroke {
  points: [number, number][];
  radius: number;
  erase: boolean;
}

export class MaskState {
  readonly width: number;
  readonly height: number;
  private data: Uint8Array;
  private strokes: Stroke[] = [];

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  get pixels(): Uint8Array {
    return this.data;
  }

  isEmpty(): boolean {
    return !this.data.some((v) => v !== 0);
  }

  at(x: number, y: number): boolean {
    return this.data[y * this.width + x] !== 0;
  }

  applyStroke(stroke: Stroke): void {
    this.strokes.push(stroke);
    const pts = stroke.points.length === 1 ? [stroke.points[0], stroke.points[0]] : stroke.points;
    for (let i = 0; i + 1 < pts.length; i++) {
      this.stampSegment(pts[i], pts[i + 1], stroke.radius, stroke.erase);
    }
  }

  private stampSegment(
    p0: [number, number],
    p1: [number, number],
    radius: number,
    erase: boolean,
  ): void {
    const [x0, y0] = p0;
    const [x1, y1] = p1;
    const minX = Math.max(0, Math.floor(Math.min(x0, x1) - radius - 1));
    const maxX = Math.min(this.width - 1, Math.ceil(Math.max(x0, x1) + radius + 1));
    const minY = Math.max(0, Math.floor(Math.min(y0, y1) - radius - 1));
    const maxY = Math.min(this.height - 1, Math.ceil(Math.max(y0, y1) + radius + 1));
    const vx = x1 - x0;
    const vy = y1 - y0;
    const len2 = Math.max(vx * vx + vy * vy, 1e-9);
    for (let y = minY; y <= maxY; y++) {
      for (let x = minX; x <= maxX; x++) {
        const px = x + 0.5;
        const py = y + 0.5;
        const t = Math.min(1, Math.max(0, ((px - x0) * vx + (py - y0) * vy) / len2));
        const dx = px - (x0 + t * vx);
        const dy = py - (y0 + t * vy);
        if (dx * dx + dy * dy <= radius * radius) {
          this.data[y * this.width + x] = erase ? 0 : 1;
        }
      }
    }
  }

  clear(): void {
    this.data.fill(0);
    this.strokes = [];
  }
}

const B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

function bytesToBase64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const a = bytes[i];
    const b = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const c = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += B64[a >> 2] + B64[((a & 3) << 4) | (b >> 4)];
    out += i + 1 < bytes.length ? B64[((b & 15) << 2) | (c >> 6)] : "=";
    out += i + 2 < bytes.length ? B64[c & 63] : "=";
  }
  return out;
}

function base64ToBytes(s: string): Uint8Array {
  const clean = s.replace(/=+$/, "");
  const out: number[] = [];
  let buffer = 0;
  let bits = 0;
  for (const ch of clean) {
    const v = B64.indexOf(ch);
    if (v < 0) throw new Error(`invalid base64 character ${ch}`);
    buffer = (buffer << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push((buffer >> bits) & 0xff);
    }
  }
  return new Uint8Array(out);
}

/** Pack a 0/1 mask into the wire encoding understood by the service. */
export function encodeMask(pixels: Uint8Array, width: number, height: number): string {
  if (pixels.length !== width * height) {
    throw new Error(`mask has ${pixels.length} pixels, expected ${width * height}`);
  }
  const bytes = new Uint8Array(Math.ceil((width * height) / 8));
  for (let i = 0; i < pixels.length; i++) {
    if (pixels[i]) bytes[i >> 3] |= 0x80 >> (i & 7);
  }
  return `bits:${width}:${height}:${bytesToBase64(bytes)}`;
}

export function decodeMask(encoded: string): { pixels: Uint8Array; width: number; height: number } {
  const m = /^bits:(\d+):(\d+):(.*)$/.exec(encoded);
  if (!m) throw new Error("not a packed-bits mask");
  const width = parseInt(m[1], 10);
  const height = parseInt(m[2], 10);
  const bytes = base64ToBytes(m[3]);
  const expected = Math.ceil((width * height) / 8);
  if (bytes.length !== expected) {
    throw new Error(`expected ${expected} mask bytes, got ${bytes.length}`);
  }
  const pixels = new Uint8Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    pixels[i] = (bytes[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return { pixels, width, height };
}
