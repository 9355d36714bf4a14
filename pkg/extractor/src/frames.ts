/**
 * Frame-sequence videos.
 *
 * A "video" is a directory of PGM/PPM frames processed in filename order
 * (or a single image file, treated as a one-frame video). Codec decoding
 * is out of scope; real footage is expected to be pre-exported to frames.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { decodePnm, GrayImage } from "./image.js";

const FRAME_EXTENSIONS = new Set([".pgm", ".ppm", ".pnm"]);

export function listFramePaths(videoPath: string): string[] {
  let stat: fs.Stats;
  try {
    stat = fs.statSync(videoPath);
  } catch {
    throw new Error(`unreadable video: ${videoPath}`);
  }
  if (stat.isFile()) {
    return [videoPath];
  }
  const frames = fs
    .readdirSync(videoPath)
    .filter((name) => FRAME_EXTENSIONS.has(path.extname(name).toLowerCase()))
    .sort()
    .map((name) => path.join(videoPath, name));
  if (frames.length === 0) {
    throw new Error(`no PGM/PPM frames found in ${videoPath}`);
  }
  return frames;
}

export function loadFrames(videoPath: string, frameStride: number): GrayImage[] {
  const paths = listFramePaths(videoPath).filter((_, i) => i % frameStride === 0);
  const frames = paths.map((p) => decodePnm(fs.readFileSync(p)));
  const { width, height } = frames[0];
  for (const frame of frames) {
    if (frame.width !== width || frame.height !== height) {
      throw new Error(
        `inconsistent frame sizes: ${width}x${height} vs ${frame.width}x${frame.height}`,
      );
    }
  }
  return frames;
}
