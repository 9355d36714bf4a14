#!/usr/bin/env node
/**
 * Command line:
 *
 *   memvad-extract extract --video <frames-dir-or-image> --out <omf1>
 *       [--confidence 0.7] [--map-side 16] [--backbone tiny-gap-v1]
 *       [--stride 1]
 *
 * The video is a directory of PGM/PPM frames (or a single image file for
 * a one-frame video).
 */

import { pathToFileURL } from "node:url";

import { DEFAULT_CONFIG, ExtractConfig, extractVideo } from "./extract.js";
import { writeOmf1 } from "./omf1.js";

interface CliArgs {
  video: string;
  out: string;
  config: ExtractConfig;
}

export function parseArgs(argv: string[]): CliArgs {
  if (argv[0] !== "extract") {
    throw new Error(`unknown command ${argv[0] ?? "(none)"}; expected 'extract'`);
  }
  let video = "";
  let out = "";
  const config: ExtractConfig = { ...DEFAULT_CONFIG };
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`missing value for ${flag}`);
    }
    switch (flag) {
      case "--video":
        video = value;
        break;
      case "--out":
        out = value;
        break;
      case "--confidence":
        config.confidence = Number(value);
        break;
      case "--map-side":
        config.mapSide = Number(value);
        break;
      case "--backbone":
        config.backbone = value;
        break;
      case "--stride":
        config.frameStride = Number(value);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!video || !out) {
    throw new Error("both --video and --out are required");
  }
  return { video, out, config };
}

export function main(argv: string[]): number {
  try {
    const args = parseArgs(argv);
    const features = extractVideo(args.video, args.config);
    writeOmf1(features, args.out);
    console.log(
      `extract: ${features.records.length} objects over ${features.frameCount} frames ` +
        `(d_app=${features.dApp}, d_mo=${features.dMo}) -> ${args.out}`,
    );
    return 0;
  } catch (error) {
    console.error(`error: ${error instanceof Error ? error.message : error}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
