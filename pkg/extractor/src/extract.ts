/**
 * The extraction pipeline: frames -> detections -> appearance features
 * and per-object motion magnitude/angle maps -> one OMF1 file.
 */

import { detectObjects, Detection } from "./detector.js";
import { appearanceFeatures, BACKBONES } from "./features.js";
import { denseFlow, DEFAULT_FLOW_OPTIONS, FlowField } from "./flow.js";
import { loadFrames } from "./frames.js";
import { cropImage, GrayImage, resizeBilinear } from "./image.js";
import { ObjectRecord, VideoFeatures } from "./omf1.js";

export interface ExtractConfig {
  /** Detector confidence threshold in (0, 1). */
  confidence: number;
  /** Motion maps are mapSide x mapSide (d_mo = mapSide^2). */
  mapSide: number;
  /** Appearance backbone identifier. */
  backbone: string;
  /** Process every n-th frame. */
  frameStride: number;
}

export const DEFAULT_CONFIG: ExtractConfig = {
  confidence: 0.7,
  mapSide: 16,
  backbone: "tiny-gap-v1",
  frameStride: 1,
};

export function validateConfig(config: ExtractConfig): void {
  if (!(config.confidence > 0 && config.confidence < 1)) {
    throw new Error(`confidence must be in (0, 1), got ${config.confidence}`);
  }
  if (!Number.isInteger(config.mapSide) || config.mapSide < 4) {
    throw new Error(`map side must be an integer >= 4, got ${config.mapSide}`);
  }
  if (!Number.isInteger(config.frameStride) || config.frameStride < 1) {
    throw new Error(`frame stride must be an integer >= 1, got ${config.frameStride}`);
  }
  if (!(config.backbone in BACKBONES)) {
    throw new Error(`unknown appearance backbone: ${config.backbone}`);
  }
}

function motionMaps(
  flow: FlowField | null,
  detection: Detection,
  mapSide: number,
): { mag: Float32Array; ang: Float32Array } {
  const count = mapSide * mapSide;
  const mag = new Float32Array(count);
  const ang = new Float32Array(count);
  if (flow === null) {
    return { mag, ang }; // last frame: no forward flow exists
  }
  const x0 = Math.max(0, Math.floor(detection.x));
  const y0 = Math.max(0, Math.floor(detection.y));
  const x1 = Math.min(flow.width, Math.ceil(detection.x + detection.w));
  const y1 = Math.min(flow.height, Math.ceil(detection.y + detection.h));
  const cw = Math.max(1, x1 - x0);
  const ch = Math.max(1, y1 - y0);
  const cropU = new Float32Array(cw * ch);
  const cropV = new Float32Array(cw * ch);
  for (let y = 0; y < ch; y++) {
    for (let x = 0; x < cw; x++) {
      const src = (y0 + y) * flow.width + (x0 + x);
      cropU[y * cw + x] = flow.u[src];
      cropV[y * cw + x] = flow.v[src];
    }
  }
  const uImg: GrayImage = { width: cw, height: ch, data: cropU };
  const vImg: GrayImage = { width: cw, height: ch, data: cropV };
  const u = resizeBilinear(uImg, mapSide, mapSide).data;
  const v = resizeBilinear(vImg, mapSide, mapSide).data;
  for (let i = 0; i < count; i++) {
    mag[i] = Math.hypot(u[i], v[i]);
    // angle normalized from (-pi, pi] to [0, 1]
    ang[i] = Math.min(1, Math.max(0, (Math.atan2(v[i], u[i]) + Math.PI) / (2 * Math.PI)));
  }
  return { mag, ang };
}

export function extractVideo(videoPath: string, config: ExtractConfig = DEFAULT_CONFIG): VideoFeatures {
  validateConfig(config);
  const frames = loadFrames(videoPath, config.frameStride);
  const records: ObjectRecord[] = [];
  for (let index = 0; index < frames.length; index++) {
    const frame = frames[index];
    const detections = detectObjects(frame, config.confidence);
    if (detections.length === 0) {
      continue;
    }
    const flow =
      index + 1 < frames.length
        ? denseFlow(frame, frames[index + 1], DEFAULT_FLOW_OPTIONS)
        : null;
    detections.forEach((detection, objectId) => {
      const crop = cropImage(frame, detection.x, detection.y, detection.w, detection.h);
      const { mag, ang } = motionMaps(flow, detection, config.mapSide);
      records.push({
        frameIndex: index,
        objectId,
        bbox: [detection.x, detection.y, detection.w, detection.h],
        xApp: appearanceFeatures(crop, config.backbone),
        xMag: mag,
        xAng: ang,
      });
    });
  }
  return {
    dApp: BACKBONES[config.backbone].dApp,
    dMo: config.mapSide * config.mapSide,
    frameCount: frames.length,
    frameWidth: frames[0].width,
    frameHeight: frames[0].height,
    records,
  };
}
