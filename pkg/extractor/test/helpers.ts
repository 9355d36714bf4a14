import * as fs from "node:fs";
import * as path from "node:path";

import { encodePgm, GrayImage, makeImage, sampleBilinear } from "../src/image.js";

export function seededRand(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 4294967296;
  };
}

/** Smooth random texture: seeded noise box-blurred twice. */
export function texturedImage(seed: number, width: number, height: number): GrayImage {
  const rand = seededRand(seed);
  let img = makeImage(width, height);
  for (let i = 0; i < img.data.length; i++) {
    img.data[i] = rand();
  }
  for (let pass = 0; pass < 2; pass++) {
    const blurred = makeImage(width, height);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        let acc = 0;
        let count = 0;
        for (let dy = -1; dy <= 1; dy++) {
          for (let dx = -1; dx <= 1; dx++) {
            const xx = x + dx;
            const yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= width || yy >= height) continue;
            acc += img.data[yy * width + xx];
            count++;
          }
        }
        blurred.data[y * width + x] = acc / count;
      }
    }
    img = blurred;
  }
  // stretch back to a strong contrast range after blurring
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of img.data) {
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  for (let i = 0; i < img.data.length; i++) {
    img.data[i] = 0.05 + (0.9 * (img.data[i] - lo)) / (hi - lo);
  }
  return img;
}

/** Dark background with bright filled rectangles (easy gradient blobs). */
export function blockScene(
  width: number,
  height: number,
  boxes: Array<[number, number, number, number]>,
): GrayImage {
  const img = makeImage(width, height);
  img.data.fill(0.05);
  for (const [bx, by, bw, bh] of boxes) {
    for (let y = by; y < by + bh; y++) {
      for (let x = bx; x < bx + bw; x++) {
        if (x >= 0 && y >= 0 && x < width && y < height) {
          img.data[y * width + x] = 0.95;
        }
      }
    }
  }
  return img;
}

/** frame2(x) = frame1(x - d): content moves by +d. */
export function shiftImage(img: GrayImage, dx: number, dy: number): GrayImage {
  const out = makeImage(img.width, img.height);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      out.data[y * img.width + x] = sampleBilinear(img, x - dx, y - dy);
    }
  }
  return out;
}

export function writeFramesDir(dir: string, frames: GrayImage[]): void {
  fs.mkdirSync(dir, { recursive: true });
  frames.forEach((frame, i) => {
    fs.writeFileSync(path.join(dir, `frame_${String(i).padStart(4, "0")}.pgm`), encodePgm(frame));
  });
}
