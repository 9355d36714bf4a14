/**
 * Dense optical flow via polynomial expansion (Farneback's method).
 *
 * Each image neighborhood is approximated by a quadratic polynomial
 * f(p) ~ p'Ap + b'p + c fitted under a Gaussian weight; for a pure
 * translation d between two frames the expansions satisfy
 * A d = -(b2 - b1)/2, which is solved per pixel after averaging the
 * normal equations over a Gaussian window. A coarse-to-fine pyramid with
 * warping handles displacements beyond the expansion neighborhood.
 *
 * Identical frames yield exactly zero flow: the right-hand side vanishes
 * everywhere and the regularized 2x2 solve returns zero.
 */

import { GrayImage, makeImage, resizeBilinear, sampleBilinear } from "./image.js";

export interface FlowField {
  width: number;
  height: number;
  /** Horizontal displacement in pixels, row-major. */
  u: Float32Array;
  /** Vertical displacement in pixels, row-major. */
  v: Float32Array;
}

export interface FlowOptions {
  /** Pyramid levels (1 = no pyramid). */
  levels: number;
  /** Gauss-Newton style refinement passes per level. */
  iterations: number;
  /** Std-dev of the polynomial expansion applicability. */
  polySigma: number;
  /** Std-dev of the window averaging the normal equations. */
  blurSigma: number;
}

export const DEFAULT_FLOW_OPTIONS: FlowOptions = {
  levels: 3,
  iterations: 2,
  polySigma: 1.5,
  blurSigma: 2.0,
};

interface PolyExpansion {
  // quadratic model per pixel: [c, cx, cy, cxx, cyy, cxy]
  cx: Float32Array;
  cy: Float32Array;
  cxx: Float32Array;
  cyy: Float32Array;
  cxy: Float32Array;
}

function gaussianKernel(sigma: number): { taps: Float64Array; radius: number } {
  const radius = Math.max(1, Math.ceil(3 * sigma));
  const taps = new Float64Array(2 * radius + 1);
  let total = 0;
  for (let i = -radius; i <= radius; i++) {
    const w = Math.exp(-(i * i) / (2 * sigma * sigma));
    taps[i + radius] = w;
    total += w;
  }
  for (let i = 0; i < taps.length; i++) taps[i] /= total;
  return { taps, radius };
}

function reflect(i: number, n: number): number {
  while (i < 0 || i >= n) {
    i = i < 0 ? -i - 1 : 2 * n - 1 - i;
  }
  return i;
}

/** Separable correlation with per-tap kernels along one axis. */
function correlate1d(
  src: Float32Array,
  width: number,
  height: number,
  taps: Float64Array,
  radius: number,
  horizontal: boolean,
): Float32Array {
  const out = new Float32Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      let acc = 0;
      for (let t = -radius; t <= radius; t++) {
        const xx = horizontal ? reflect(x + t, width) : x;
        const yy = horizontal ? y : reflect(y + t, height);
        acc += taps[t + radius] * src[yy * width + xx];
      }
      out[y * width + x] = acc;
    }
  }
  return out;
}

function invert6x6(g: Float64Array): Float64Array {
  // Gauss-Jordan with partial pivoting on an augmented [G | I] system.
  const n = 6;
  const a = new Float64Array(n * 2 * n);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) a[r * 2 * n + c] = g[r * n + c];
    a[r * 2 * n + n + r] = 1;
  }
  for (let col = 0; col < n; col++) {
    let pivot = col;
    for (let r = col + 1; r < n; r++) {
      if (Math.abs(a[r * 2 * n + col]) > Math.abs(a[pivot * 2 * n + col])) pivot = r;
    }
    if (Math.abs(a[pivot * 2 * n + col]) < 1e-12) {
      throw new Error("singular expansion Gram matrix");
    }
    if (pivot !== col) {
      for (let c = 0; c < 2 * n; c++) {
        const tmp = a[col * 2 * n + c];
        a[col * 2 * n + c] = a[pivot * 2 * n + c];
        a[pivot * 2 * n + c] = tmp;
      }
    }
    const diag = a[col * 2 * n + col];
    for (let c = 0; c < 2 * n; c++) a[col * 2 * n + c] /= diag;
    for (let r = 0; r < n; r++) {
      if (r === col) continue;
      const factor = a[r * 2 * n + col];
      if (factor === 0) continue;
      for (let c = 0; c < 2 * n; c++) a[r * 2 * n + c] -= factor * a[col * 2 * n + c];
    }
  }
  const inv = new Float64Array(n * n);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) inv[r * n + c] = a[r * 2 * n + n + c];
  }
  return inv;
}

function expansionGram(taps: Float64Array, radius: number): Float64Array {
  // G[i][j] = sum over the window of a(x,y) * B_i * B_j with basis
  // B = [1, x, y, x^2, y^2, xy]
  const g = new Float64Array(36);
  for (let y = -radius; y <= radius; y++) {
    for (let x = -radius; x <= radius; x++) {
      const a = taps[x + radius] * taps[y + radius];
      const basis = [1, x, y, x * x, y * y, x * y];
      for (let i = 0; i < 6; i++) {
        for (let j = 0; j < 6; j++) {
          g[i * 6 + j] += a * basis[i] * basis[j];
        }
      }
    }
  }
  return g;
}

function polyExpand(img: GrayImage, sigma: number): PolyExpansion {
  const { taps, radius } = gaussianKernel(sigma);
  const xTaps = new Float64Array(taps.length);
  const xxTaps = new Float64Array(taps.length);
  for (let i = -radius; i <= radius; i++) {
    xTaps[i + radius] = i * taps[i + radius];
    xxTaps[i + radius] = i * i * taps[i + radius];
  }
  const { width, height, data } = img;
  // row (horizontal) passes
  const r0 = correlate1d(data, width, height, taps, radius, true);
  const r1 = correlate1d(data, width, height, xTaps, radius, true);
  const r2 = correlate1d(data, width, height, xxTaps, radius, true);
  // column passes assemble the weighted moments
  const m00 = correlate1d(r0, width, height, taps, radius, false);
  const m10 = correlate1d(r1, width, height, taps, radius, false);
  const m01 = correlate1d(r0, width, height, xTaps, radius, false);
  const m20 = correlate1d(r2, width, height, taps, radius, false);
  const m02 = correlate1d(r0, width, height, xxTaps, radius, false);
  const m11 = correlate1d(r1, width, height, xTaps, radius, false);

  const inv = invert6x6(expansionGram(taps, radius));
  const n = width * height;
  const out: PolyExpansion = {
    cx: new Float32Array(n),
    cy: new Float32Array(n),
    cxx: new Float32Array(n),
    cyy: new Float32Array(n),
    cxy: new Float32Array(n),
  };
  for (let i = 0; i < n; i++) {
    const m = [m00[i], m10[i], m01[i], m20[i], m02[i], m11[i]];
    let cx = 0,
      cy = 0,
      cxx = 0,
      cyy = 0,
      cxy = 0;
    for (let j = 0; j < 6; j++) {
      cx += inv[1 * 6 + j] * m[j];
      cy += inv[2 * 6 + j] * m[j];
      cxx += inv[3 * 6 + j] * m[j];
      cyy += inv[4 * 6 + j] * m[j];
      cxy += inv[5 * 6 + j] * m[j];
    }
    out.cx[i] = cx;
    out.cy[i] = cy;
    out.cxx[i] = cxx;
    out.cyy[i] = cyy;
    out.cxy[i] = cxy;
  }
  return out;
}

function warpImage(img: GrayImage, flow: FlowField): GrayImage {
  const out = makeImage(img.width, img.height);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const i = y * img.width + x;
      out.data[i] = sampleBilinear(img, x + flow.u[i], y + flow.v[i]);
    }
  }
  return out;
}

function flowStep(
  prev: GrayImage,
  next: GrayImage,
  base: FlowField,
  options: FlowOptions,
): FlowField {
  const { width, height } = prev;
  const p1 = polyExpand(prev, options.polySigma);
  const p2 = polyExpand(next, options.polySigma);
  const n = width * height;
  // per-pixel normal equation entries of A d = db
  const g11 = new Float32Array(n);
  const g12 = new Float32Array(n);
  const g22 = new Float32Array(n);
  const h1 = new Float32Array(n);
  const h2 = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const a11 = (p1.cxx[i] + p2.cxx[i]) / 2;
    const a22 = (p1.cyy[i] + p2.cyy[i]) / 2;
    const a12 = (p1.cxy[i] + p2.cxy[i]) / 4; // A off-diagonal is cxy/2
    const db1 = -(p2.cx[i] - p1.cx[i]) / 2;
    const db2 = -(p2.cy[i] - p1.cy[i]) / 2;
    g11[i] = a11 * a11 + a12 * a12;
    g12[i] = a11 * a12 + a12 * a22;
    g22[i] = a12 * a12 + a22 * a22;
    h1[i] = a11 * db1 + a12 * db2;
    h2[i] = a12 * db1 + a22 * db2;
  }
  const { taps, radius } = gaussianKernel(options.blurSigma);
  const blur = (arr: Float32Array) =>
    correlate1d(
      correlate1d(arr, width, height, taps, radius, true),
      width,
      height,
      taps,
      radius,
      false,
    );
  const s11 = blur(g11);
  const s12 = blur(g12);
  const s22 = blur(g22);
  const t1 = blur(h1);
  const t2 = blur(h2);
  const out: FlowField = {
    width,
    height,
    u: new Float32Array(n),
    v: new Float32Array(n),
  };
  for (let i = 0; i < n; i++) {
    // Tikhonov damping proportional to the local signal scale, so weak
    // textures stay solvable; the absolute floor only guards 0/0 (and
    // keeps identical frames at exactly zero flow).
    const damp = 5e-4 * (s11[i] + s22[i]) + 1e-30;
    const a11 = s11[i] + damp;
    const a22 = s22[i] + damp;
    const det = a11 * a22 - s12[i] * s12[i];
    const du = (a22 * t1[i] - s12[i] * t2[i]) / det;
    const dv = (a11 * t2[i] - s12[i] * t1[i]) / det;
    out.u[i] = base.u[i] + du;
    out.v[i] = base.v[i] + dv;
  }
  return out;
}

function zeroFlow(width: number, height: number): FlowField {
  return {
    width,
    height,
    u: new Float32Array(width * height),
    v: new Float32Array(width * height),
  };
}

function upsampleFlow(flow: FlowField, width: number, height: number): FlowField {
  const scaleX = width / flow.width;
  const scaleY = height / flow.height;
  const uImg: GrayImage = { width: flow.width, height: flow.height, data: flow.u };
  const vImg: GrayImage = { width: flow.width, height: flow.height, data: flow.v };
  const u = resizeBilinear(uImg, width, height).data;
  const v = resizeBilinear(vImg, width, height).data;
  for (let i = 0; i < u.length; i++) {
    u[i] *= scaleX;
    v[i] *= scaleY;
  }
  return { width, height, u, v };
}

function downscale(img: GrayImage): GrayImage {
  return resizeBilinear(
    img,
    Math.max(8, Math.round(img.width / 2)),
    Math.max(8, Math.round(img.height / 2)),
  );
}

/** Dense flow from prev to next, in pixels at full resolution. */
export function denseFlow(
  prev: GrayImage,
  next: GrayImage,
  options: FlowOptions = DEFAULT_FLOW_OPTIONS,
): FlowField {
  if (prev.width !== next.width || prev.height !== next.height) {
    throw new Error("flow requires equally sized frames");
  }
  const pyramidPrev: GrayImage[] = [prev];
  const pyramidNext: GrayImage[] = [next];
  for (let level = 1; level < options.levels; level++) {
    const p = pyramidPrev[level - 1];
    if (Math.min(p.width, p.height) <= 16) break;
    pyramidPrev.push(downscale(p));
    pyramidNext.push(downscale(pyramidNext[level - 1]));
  }
  let flow = zeroFlow(
    pyramidPrev[pyramidPrev.length - 1].width,
    pyramidPrev[pyramidPrev.length - 1].height,
  );
  for (let level = pyramidPrev.length - 1; level >= 0; level--) {
    const p = pyramidPrev[level];
    const q = pyramidNext[level];
    if (flow.width !== p.width || flow.height !== p.height) {
      flow = upsampleFlow(flow, p.width, p.height);
    }
    for (let iter = 0; iter < options.iterations; iter++) {
      const warped = warpImage(q, flow);
      flow = flowStep(p, warped, flow, options);
    }
  }
  return flow;
}
