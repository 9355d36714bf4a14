/**
 * OMF1 feature-file writer (and a reader used by the tests).
 *
 * Layout (little-endian): header = magic "OMF1", version u32 = 1,
 * d_app u32, d_mo u32, frame_count u32, frame_width u32, frame_height
 * u32, record_count u64; then per record: frame_index u32, object_id
 * u32, bbox 4 x f32, appearance d_app x f32, magnitude d_mo x f32,
 * angle d_mo x f32 (each angle entry in [0, 1]).
 */

import * as fs from "node:fs";

export const OMF1_MAGIC = "OMF1";
export const OMF1_VERSION = 1;
export const HEADER_SIZE = 36;

export interface ObjectRecord {
  frameIndex: number;
  objectId: number;
  bbox: [number, number, number, number];
  xApp: Float32Array;
  xMag: Float32Array;
  xAng: Float32Array;
}

export interface VideoFeatures {
  dApp: number;
  dMo: number;
  frameCount: number;
  frameWidth: number;
  frameHeight: number;
  records: ObjectRecord[];
}

export function recordSize(dApp: number, dMo: number): number {
  return 8 + 16 + 4 * (dApp + 2 * dMo);
}

export function encodeOmf1(video: VideoFeatures): Buffer {
  const { dApp, dMo } = video;
  const buffer = Buffer.alloc(HEADER_SIZE + video.records.length * recordSize(dApp, dMo));
  buffer.write(OMF1_MAGIC, 0, "ascii");
  buffer.writeUInt32LE(OMF1_VERSION, 4);
  buffer.writeUInt32LE(dApp, 8);
  buffer.writeUInt32LE(dMo, 12);
  buffer.writeUInt32LE(video.frameCount, 16);
  buffer.writeUInt32LE(video.frameWidth, 20);
  buffer.writeUInt32LE(video.frameHeight, 24);
  buffer.writeBigUInt64LE(BigInt(video.records.length), 28);
  let offset = HEADER_SIZE;
  for (const record of video.records) {
    if (record.xApp.length !== dApp || record.xMag.length !== dMo || record.xAng.length !== dMo) {
      throw new Error("record feature lengths do not match the header dimensions");
    }
    buffer.writeUInt32LE(record.frameIndex, offset);
    buffer.writeUInt32LE(record.objectId, offset + 4);
    offset += 8;
    for (const value of record.bbox) {
      buffer.writeFloatLE(value, offset);
      offset += 4;
    }
    for (const array of [record.xApp, record.xMag, record.xAng]) {
      for (const value of array) {
        buffer.writeFloatLE(value, offset);
        offset += 4;
      }
    }
  }
  return buffer;
}

export function writeOmf1(video: VideoFeatures, path: string): void {
  fs.writeFileSync(path, encodeOmf1(video));
}

export function readOmf1(path: string): VideoFeatures {
  const buffer = fs.readFileSync(path);
  if (buffer.length < HEADER_SIZE || buffer.subarray(0, 4).toString("ascii") !== OMF1_MAGIC) {
    throw new Error(`${path}: not an OMF1 file`);
  }
  if (buffer.readUInt32LE(4) !== OMF1_VERSION) {
    throw new Error(`${path}: unsupported version`);
  }
  const dApp = buffer.readUInt32LE(8);
  const dMo = buffer.readUInt32LE(12);
  const video: VideoFeatures = {
    dApp,
    dMo,
    frameCount: buffer.readUInt32LE(16),
    frameWidth: buffer.readUInt32LE(20),
    frameHeight: buffer.readUInt32LE(24),
    records: [],
  };
  const count = Number(buffer.readBigUInt64LE(28));
  const size = recordSize(dApp, dMo);
  if (buffer.length !== HEADER_SIZE + count * size) {
    throw new Error(`${path}: payload size mismatch`);
  }
  for (let r = 0; r < count; r++) {
    let offset = HEADER_SIZE + r * size;
    const frameIndex = buffer.readUInt32LE(offset);
    const objectId = buffer.readUInt32LE(offset + 4);
    offset += 8;
    const bbox: [number, number, number, number] = [0, 0, 0, 0];
    for (let i = 0; i < 4; i++) {
      bbox[i] = buffer.readFloatLE(offset);
      offset += 4;
    }
    const readArray = (n: number) => {
      const out = new Float32Array(n);
      for (let i = 0; i < n; i++) {
        out[i] = buffer.readFloatLE(offset);
        offset += 4;
      }
      return out;
    };
    video.records.push({
      frameIndex,
      objectId,
      bbox,
      xApp: readArray(dApp),
      xMag: readArray(dMo),
      xAng: readArray(dMo),
    });
  }
  return video;
}
