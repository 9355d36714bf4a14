/**
 * Appearance features: global-average-pooled output of a small fixed
 * convolutional backbone applied to the resized object crop.
 *
 * The backbone weights are generated from a fixed seed (no pretrained
 * weights are downloadable offline), so features are deterministic random
 * projections with local spatial structure rather than semantic CNN
 * features; they fill the same role and the same interface.
 */

import { GrayImage, resizeBilinear } from "./image.js";

export interface BackboneSpec {
  dApp: number;
  inputSide: number;
}

export const BACKBONES: Record<string, BackboneSpec> = {
  "tiny-gap-v1": { dApp: 64, inputSide: 32 },
};

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

interface ConvLayer {
  inChannels: number;
  outChannels: number;
  /** (out, in, 3, 3) weights, flattened. */
  weights: Float32Array;
}

function makeLayer(rand: () => number, inChannels: number, outChannels: number): ConvLayer {
  const fanIn = inChannels * 9;
  const bound = Math.sqrt(3 / fanIn);
  const weights = new Float32Array(outChannels * fanIn);
  for (let i = 0; i < weights.length; i++) {
    weights[i] = (2 * rand() - 1) * bound;
  }
  return { inChannels, outChannels, weights };
}

const layerCache = new Map<string, ConvLayer[]>();

function backboneLayers(name: string): ConvLayer[] {
  const cached = layerCache.get(name);
  if (cached) return cached;
  const spec = BACKBONES[name];
  if (!spec) {
    throw new Error(`unknown appearance backbone: ${name}`);
  }
  const rand = mulberry32(0x6d657661);
  const layers = [makeLayer(rand, 1, 8), makeLayer(rand, 8, spec.dApp)];
  layerCache.set(name, layers);
  return layers;
}

/** 3x3 convolution (zero padded) + ReLU over channel-major planes. */
function convRelu(
  planes: Float32Array[],
  side: number,
  layer: ConvLayer,
): Float32Array[] {
  const out: Float32Array[] = [];
  for (let o = 0; o < layer.outChannels; o++) {
    const plane = new Float32Array(side * side);
    for (let y = 0; y < side; y++) {
      for (let x = 0; x < side; x++) {
        let acc = 0;
        for (let c = 0; c < layer.inChannels; c++) {
          const src = planes[c];
          const wBase = (o * layer.inChannels + c) * 9;
          for (let ky = -1; ky <= 1; ky++) {
            const yy = y + ky;
            if (yy < 0 || yy >= side) continue;
            for (let kx = -1; kx <= 1; kx++) {
              const xx = x + kx;
              if (xx < 0 || xx >= side) continue;
              acc += layer.weights[wBase + (ky + 1) * 3 + (kx + 1)] * src[yy * side + xx];
            }
          }
        }
        plane[y * side + x] = acc > 0 ? acc : 0;
      }
    }
    out.push(plane);
  }
  return out;
}

function avgPool2(planes: Float32Array[], side: number): Float32Array[] {
  const half = side >> 1;
  return planes.map((plane) => {
    const out = new Float32Array(half * half);
    for (let y = 0; y < half; y++) {
      for (let x = 0; x < half; x++) {
        out[y * half + x] =
          (plane[2 * y * side + 2 * x] +
            plane[2 * y * side + 2 * x + 1] +
            plane[(2 * y + 1) * side + 2 * x] +
            plane[(2 * y + 1) * side + 2 * x + 1]) /
          4;
      }
    }
    return out;
  });
}

export function appearanceFeatures(crop: GrayImage, backbone: string): Float32Array {
  const spec = BACKBONES[backbone];
  if (!spec) {
    throw new Error(`unknown appearance backbone: ${backbone}`);
  }
  const layers = backboneLayers(backbone);
  const side = spec.inputSide;
  const resized = resizeBilinear(crop, side, side);
  let planes = [resized.data];
  let currentSide = side;
  planes = convRelu(planes, currentSide, layers[0]);
  planes = avgPool2(planes, currentSide);
  currentSide >>= 1;
  planes = convRelu(planes, currentSide, layers[1]);
  const out = new Float32Array(spec.dApp);
  const area = currentSide * currentSide;
  for (let c = 0; c < spec.dApp; c++) {
    let total = 0;
    for (let i = 0; i < area; i++) total += planes[c][i];
    out[c] = Math.fround(total / area);
  }
  return out;
}
