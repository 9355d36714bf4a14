import { describe, expect, it } from "vitest";

import { denseFlow } from "../src/flow.js";
import { shiftImage, texturedImage } from "./helpers.js";

function median(values: Float32Array | number[]): number {
  const sorted = Array.from(values).sort((a, b) => a - b);
  return sorted[Math.floor(sorted.length / 2)];
}

function interior(field: Float32Array, width: number, height: number, margin: number): number[] {
  const out: number[] = [];
  for (let y = margin; y < height - margin; y++) {
    for (let x = margin; x < width - margin; x++) {
      out.push(field[y * width + x]);
    }
  }
  return out;
}

describe("dense optical flow", () => {
  it("is exactly zero for identical frames", () => {
    const frame = texturedImage(1, 48, 40);
    const flow = denseFlow(frame, frame);
    expect(Math.max(...flow.u.map(Math.abs))).toBe(0);
    expect(Math.max(...flow.v.map(Math.abs))).toBe(0);
  });

  it("recovers a known translation", () => {
    const frame = texturedImage(2, 64, 64);
    for (const [dx, dy] of [
      [2, 1],
      [-1.5, 0.5],
      [0, 3],
    ]) {
      const moved = shiftImage(frame, dx, dy);
      const flow = denseFlow(frame, moved);
      const u = median(interior(flow.u, 64, 64, 12));
      const v = median(interior(flow.v, 64, 64, 12));
      expect(Math.abs(u - dx)).toBeLessThan(0.5);
      expect(Math.abs(v - dy)).toBeLessThan(0.5);
    }
  });

  it("rejects differently sized frames", () => {
    expect(() => denseFlow(texturedImage(3, 32, 32), texturedImage(3, 16, 16))).toThrow();
  });
});
