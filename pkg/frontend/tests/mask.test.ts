import { describe, expect, it } from "vitest";
import { MaskState, decodeMask, encodeMask } from "../src/mask.js";

function randomMask(w: number, h: number, seed: number): Uint8Array {
  // deterministic LCG so failures are reproducible
  let state = seed >>> 0;
  const next = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
  const px = new Uint8Array(w * h);
  for (let i = 0; i < px.length; i++) px[i] = next() < 0.4 ? 1 : 0;
  return px;
}

describe("mask wire encoding", () => {
  it("round-trips random masks losslessly", () => {
    for (let trial = 0; trial < 60; trial++) {
      const w = 8 + (trial % 5) * 7; // includes widths not divisible by 8
      const h = 8 + ((trial * 3) % 4) * 9;
      const px = randomMask(w, h, trial + 1);
      const decoded = decodeMask(encodeMask(px, w, h));
      expect(decoded.width).toBe(w);
      expect(decoded.height).toBe(h);
      expect(Array.from(decoded.pixels)).toEqual(Array.from(px));
    }
  });

  it("matches the documented golden encoding", () => {
    // 4x2 mask rows [1,0,1,1] / [0,0,0,1] -> bits 10110001 -> byte 0xB1
    const px = new Uint8Array([1, 0, 1, 1, 0, 0, 0, 1]);
    expect(encodeMask(px, 4, 2)).toBe("bits:4:2:sQ==");
  });

  it("rejects wrong pixel counts and malformed strings", () => {
    expect(() => encodeMask(new Uint8Array(3), 2, 2)).toThrow(/pixels/);
    expect(() => decodeMask("nonsense")).toThrow(/packed-bits/);
    expect(() => decodeMask("bits:4:2:AAAA")).toThrow(/mask bytes/);
  });
});

describe("brush strokes", () => {
  it("stamps a disc for a single-point stroke", () => {
    const mask = new MaskState(16, 16);
    mask.applyStroke({ points: [[8, 8]], radius: 3, erase: false });
    expect(mask.at(8, 8)).toBe(true);
    expect(mask.at(8, 10)).toBe(true);
    expect(mask.at(8, 14)).toBe(false);
    expect(mask.isEmpty()).toBe(false);
  });

  it("paints along segments", () => {
    const mask = new MaskState(32, 32);
    mask.applyStroke({ points: [[4, 16], [28, 16]], radius: 2, erase: false });
    for (let x = 5; x <= 27; x++) expect(mask.at(x, 16)).toBe(true);
    expect(mask.at(16, 22)).toBe(false);
  });

  it("erase strokes clear painted pixels", () => {
    const mask = new MaskState(16, 16);
    mask.applyStroke({ points: [[8, 8]], radius: 4, erase: false });
    mask.applyStroke({ points: [[8, 8]], radius: 2, erase: true });
    expect(mask.at(8, 8)).toBe(false);
    expect(mask.at(8, 11)).toBe(true);
  });

  it("round-trips through the wire encoding", () => {
    const mask = new MaskState(16, 16);
    mask.applyStroke({ points: [[4, 4], [12, 12]], radius: 3, erase: false });
    const decoded = decodeMask(encodeMask(mask.pixels, 16, 16));
    expect(Array.from(decoded.pixels)).toEqual(Array.from(mask.pixels));
  });
});
