/**
 * Grayscale float images and binary PNM (P5/P6) parsing.
 *
 * Pixel values are kept in [0, 1]; color frames are converted with the
 * Rec.601 luma weights.
 */

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major pixels in [0, 1]. */
  data: Float32Array;
}

export function makeImage(width: number, height: number): GrayImage {
  return { width, height, data: new Float32Array(width * height) };
}

/** Parse a binary PGM (P5) or PPM (P6) buffer. */
export function decodePnm(buffer: Buffer): GrayImage {
  const magic = buffer.subarray(0, 2).toString("ascii");
  if (magic !== "P5" && magic !== "P6") {
    throw new Error(`unsupported image format (expected P5/P6, got ${magic})`);
  }
  let offset = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    // skip whitespace and '#' comment lines between header fields
    while (offset < buffer.length && /\s/.test(String.fromCharCode(buffer[offset]))) {
      offset++;
    }
    if (buffer[offset] === 0x23) {
      while (offset < buffer.length && buffer[offset] !== 0x0a) offset++;
      continue;
    }
    let start = offset;
    while (offset < buffer.length && !/\s/.test(String.fromCharCode(buffer[offset]))) {
      offset++;
    }
    fields.push(parseInt(buffer.subarray(start, offset).toString("ascii"), 10));
  }
  offset++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0) || !(maxval > 0 && maxval < 65536)) {
    throw new Error(`bad PNM header: ${width}x${height} maxval=${maxval}`);
  }
  const channels = magic === "P6" ? 3 : 1;
  const bytesPerSample = maxval > 255 ? 2 : 1;
  const expected = width * height * channels * bytesPerSample;
  if (buffer.length - offset < expected) {
    throw new Error(`truncated PNM payload (${buffer.length - offset} < ${expected})`);
  }
  const img = makeImage(width, height);
  const read =
    bytesPerSample === 1
      ? (pos: number) => buffer[pos]
      : (pos: number) => buffer.readUInt16BE(pos);
  for (let i = 0; i < width * height; i++) {
    const base = offset + i * channels * bytesPerSample;
    let value: number;
    if (channels === 1) {
      value = read(base);
    } else {
      const r = read(base);
      const g = read(base + bytesPerSample);
      const b = read(base + 2 * bytesPerSample);
      value = 0.299 * r + 0.587 * g + 0.114 * b;
    }
    img.data[i] = value / maxval;
  }
  return img;
}

/** Encode a grayscale image as binary PGM (P5), used by the tests. */
export function encodePgm(img: GrayImage): Buffer {
  const header = Buffer.from(`P5\n${img.width} ${img.height}\n255\n`, "ascii");
  const body = Buffer.alloc(img.width * img.height);
  for (let i = 0; i < img.data.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(img.data[i] * 255)));
  }
  return Buffer.concat([header, body]);
}

function samplePixel(img: GrayImage, x: number, y: number): number {
  const xi = Math.min(img.width - 1, Math.max(0, x));
  const yi = Math.min(img.height - 1, Math.max(0, y));
  return img.data[yi * img.width + xi];
}

/** Bilinear sample at a fractional position, clamped at the borders. */
export function sampleBilinear(img: GrayImage, x: number, y: number): number {
  const x0 = Math.floor(x);
  const y0 = Math.floor(y);
  const fx = x - x0;
  const fy = y - y0;
  const v00 = samplePixel(img, x0, y0);
  const v10 = samplePixel(img, x0 + 1, y0);
  const v01 = samplePixel(img, x0, y0 + 1);
  const v11 = samplePixel(img, x0 + 1, y0 + 1);
  return (
    v00 * (1 - fx) * (1 - fy) +
    v10 * fx * (1 - fy) +
    v01 * (1 - fx) * fy +
    v11 * fx * fy
  );
}

/** Bilinear resize; degenerate 1-pixel sources replicate. */
export function resizeBilinear(img: GrayImage, width: number, height: number): GrayImage {
  const out = makeImage(width, height);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const srcX = (x + 0.5) * sx - 0.5;
      const srcY = (y + 0.5) * sy - 0.5;
      out.data[y * width + x] = sampleBilinear(img, srcX, srcY);
    }
  }
  return out;
}

/** Crop a rectangle (clamped to the image) into a new image. */
export function cropImage(
  img: GrayImage,
  x: number,
  y: number,
  w: number,
  h: number,
): GrayImage {
  const x0 = Math.max(0, Math.floor(x));
  const y0 = Math.max(0, Math.floor(y));
  const x1 = Math.min(img.width, Math.ceil(x + w));
  const y1 = Math.min(img.height, Math.ceil(y + h));
  const cw = Math.max(1, x1 - x0);
  const ch = Math.max(1, y1 - y0);
  const out = makeImage(cw, ch);
  for (let yy = 0; yy < ch; yy++) {
    for (let xx = 0; xx < cw; xx++) {
      out.data[yy * cw + xx] = samplePixel(img, x0 + xx, y0 + yy);
    }
  }
  return out;
}
