/**
 * Run-length mask decoding and overlay rasterization.
 *
 * Masks travel as {size: [height, width], counts: [...]} with column-major
 * traversal and the first run counting zeros (a leading 0 encodes a mask
 * that starts with foreground). Decoding must agree pixel-exactly with the
 * backend's decoder; the shared golden fixtures pin that down.
 */
import type { RleMask } from './types';

/** Decode to a column-major Uint8Array of 0/1 (index = x * height + y). */
export function decodeRle(rle: RleMask): Uint8Array {
  const [height, width] = rle.size;
  const total = width * height;
  const mask = new Uint8Array(total);
  let idx = 0;
  let value = 0;
  for (const count of rle.counts) {
    if (count < 0 || !Number.isInteger(count)) {
      throw new Error(`bad run length ${count}`);
    }
    if (idx + count > total) {
      throw new Error(`runs overflow ${width}x${height} mask`);
    }
    if (value) {
      mask.fill(1, idx, idx + count);
    }
    idx += count;
    value = 1 - value;
  }
  if (idx !== total) {
    throw new Error(`runs sum to ${idx}, expected ${total}`);
  }
  return mask;
}

export function maskArea(rle: RleMask): number {
  let area = 0;
  for (let i = 1; i < rle.counts.length; i += 2) {
    area += rle.counts[i] ?? 0;
  }
  return area;
}

export interface OverlayColor {
  r: number;
  g: number;
  b: number;
  /** 0..255 */
  a: number;
}

export const DEFAULT_OVERLAY: OverlayColor = { r: 59, g: 130, b: 246, a: 153 };

/**
 * Rasterize a decoded column-major mask into row-major RGBA bytes suitable
 * for ImageData. Background pixels stay fully transparent.
 */
export function maskToRgba(
  mask: Uint8Array,
  width: number,
  height: number,
  color: OverlayColor = DEFAULT_OVERLAY,
): Uint8ClampedArray<ArrayBuffer> {
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (mask[x * height + y]) {
        const o = (y * width + x) * 4;
        rgba[o] = color.r;
        rgba[o + 1] = color.g;
        rgba[o + 2] = color.b;
        rgba[o + 3] = color.a;
      }
    }
  }
  return rgba;
}

/** Paint the mask overlay onto a canvas sized to the image grid. */
export function drawMaskOverlay(
  canvas: HTMLCanvasElement,
  rle: RleMask,
  color: OverlayColor = DEFAULT_OVERLAY,
): void {
  const [height, width] = rle.size;
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext('2d');
  if (!ctx) {
    throw new Error('2d canvas context unavailable');
  }
  const rgba = maskToRgba(decodeRle(rle), width, height, color);
  ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
}
