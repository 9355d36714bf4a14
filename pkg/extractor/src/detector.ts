/**
 * Deterministic gradient-blob object detector.
 *
 * Pretrained detector weights are not available offline, so objects are
 * proposed as connected components of strong image gradients; the
 * confidence of a blob is a high quantile of its normalized gradient
 * magnitudes, which crisp objects push toward 1. The interface matches
 * what a learned detector would provide.
 */

import { GrayImage } from "./image.js";

export interface Detection {
  x: number;
  y: number;
  w: number;
  h: number;
  confidence: number;
}

export interface DetectorOptions {
  /** Fraction of the peak gradient that counts as an edge pixel. */
  edgeThreshold: number;
  /** Minimum component size in pixels. */
  minArea: number;
  /** Padding added around each blob's tight box. */
  padding: number;
  /** Maximum number of detections kept (best confidences first). */
  maxDetections: number;
}

export const DEFAULT_DETECTOR_OPTIONS: DetectorOptions = {
  edgeThreshold: 0.2,
  minArea: 16,
  padding: 2,
  maxDetections: 32,
};

function gradientMagnitude(img: GrayImage): Float32Array {
  const { width, height, data } = img;
  const out = new Float32Array(width * height);
  const at = (x: number, y: number) =>
    data[Math.min(height - 1, Math.max(0, y)) * width + Math.min(width - 1, Math.max(0, x))];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const gx =
        at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1) -
        at(x - 1, y - 1) - 2 * at(x - 1, y) - at(x - 1, y + 1);
      const gy =
        at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1) -
        at(x - 1, y - 1) - 2 * at(x, y - 1) - at(x + 1, y - 1);
      out[y * width + x] = Math.hypot(gx, gy);
    }
  }
  return out;
}

export function detectObjects(
  img: GrayImage,
  confidence: number,
  options: DetectorOptions = DEFAULT_DETECTOR_OPTIONS,
): Detection[] {
  const { width, height } = img;
  const magnitude = gradientMagnitude(img);
  let peak = 0;
  for (const value of magnitude) peak = Math.max(peak, value);
  if (peak <= 0) {
    return [];
  }
  const mask = new Uint8Array(width * height);
  for (let i = 0; i < mask.length; i++) {
    mask[i] = magnitude[i] / peak >= options.edgeThreshold ? 1 : 0;
  }
  const detections: Detection[] = [];
  const queue = new Int32Array(width * height);
  for (let start = 0; start < mask.length; start++) {
    if (mask[start] !== 1) continue;
    // BFS over the 4-connected component
    let head = 0;
    let tail = 0;
    queue[tail++] = start;
    mask[start] = 2;
    const members: number[] = [];
    while (head < tail) {
      const idx = queue[head++];
      members.push(idx);
      const x = idx % width;
      const y = (idx - x) / width;
      for (const [dx, dy] of [[1, 0], [-1, 0], [0, 1], [0, -1]] as const) {
        const nx = x + dx;
        const ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const nidx = ny * width + nx;
        if (mask[nidx] === 1) {
          mask[nidx] = 2;
          queue[tail++] = nidx;
        }
      }
    }
    if (members.length < options.minArea) continue;
    let minX = width,
      minY = height,
      maxX = 0,
      maxY = 0;
    const strengths: number[] = [];
    for (const idx of members) {
      const x = idx % width;
      const y = (idx - x) / width;
      minX = Math.min(minX, x);
      minY = Math.min(minY, y);
      maxX = Math.max(maxX, x);
      maxY = Math.max(maxY, y);
      strengths.push(magnitude[idx] / peak);
    }
    strengths.sort((a, b) => a - b);
    const p90 = strengths[Math.min(strengths.length - 1, Math.floor(0.9 * strengths.length))];
    const x0 = Math.max(0, minX - options.padding);
    const y0 = Math.max(0, minY - options.padding);
    const x1 = Math.min(width, maxX + 1 + options.padding);
    const y1 = Math.min(height, maxY + 1 + options.padding);
    detections.push({ x: x0, y: y0, w: x1 - x0, h: y1 - y0, confidence: p90 });
  }
  detections.sort((a, b) => b.confidence - a.confidence);
  const kept = detections
    .filter((d) => d.confidence >= confidence)
    .slice(0, options.maxDetections);
  // stable reading order for object id assignment
  kept.sort((a, b) => a.y - b.y || a.x - b.x || a.w - b.w || a.h - b.h);
  return kept;
}
