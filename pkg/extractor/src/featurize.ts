/**
 * Embedding models. Everything here must run offline and produce the
 * same bytes on every machine, so the built-in featurizers are closed
 * arithmetic over pixels and characters. Requesting a pretrained
 * backbone raises an environment error instead of silently substituting
 * a different model; downstream metrics would be meaningless if the
 * backbone id in the pack header did not match the weights that
 * produced the features.
 *
 * Embeddings are emitted unnormalized. The consumer L2-normalizes at
 * load time, so every embedding must have a nonzero norm: the image
 * featurizer offsets channel values by one (a pure black crop still
 * lands away from the origin) and the text encoder reserves its last
 * component for the token count.
 */

import { EnvironmentError, ValidationError } from "./errors.js";
import type { Box } from "./fpk.js";
import type { Image } from "./png.js";

export interface ImageFeaturizer {
  id: string;
  dim: number;
  embedCrop(image: Image, box: Box): Float32Array;
}

export interface TextEncoder {
  id: string;
  dim: number;
  embed(text: string): Float32Array;
}

const GRID = 4;

/**
 * 4x4 grid of local color moments: per cell the mean of (r+1)/256,
 * (g+1)/256, (b+1)/256 and the standard deviation of luminance.
 */
function gridMoments(image: Image, box: Box): Float32Array {
  let x0 = Math.max(0, Math.floor(box[0]));
  let y0 = Math.max(0, Math.floor(box[1]));
  const x1 = Math.min(image.width, Math.ceil(box[2]));
  const y1 = Math.min(image.height, Math.ceil(box[3]));
  if (x0 >= x1) x0 = x1 - 1;
  if (y0 >= y1) y0 = y1 - 1;
  if (x0 < 0 || y0 < 0) throw new ValidationError(`box [${box.join(", ")}] lies outside the image`);
  const w = x1 - x0;
  const h = y1 - y0;
  const out = new Float32Array(GRID * GRID * 4);
  for (let gy = 0; gy < GRID; gy++) {
    for (let gx = 0; gx < GRID; gx++) {
      let cx0 = x0 + Math.floor((gx * w) / GRID);
      let cy0 = y0 + Math.floor((gy * h) / GRID);
      const cx1 = Math.min(x1, Math.max(cx0 + 1, x0 + Math.floor(((gx + 1) * w) / GRID)));
      const cy1 = Math.min(y1, Math.max(cy0 + 1, y0 + Math.floor(((gy + 1) * h) / GRID)));
      cx0 = Math.min(cx0, cx1 - 1);
      cy0 = Math.min(cy0, cy1 - 1);
      let sr = 0;
      let sg = 0;
      let sb = 0;
      let sl = 0;
      let sll = 0;
      let n = 0;
      for (let y = cy0; y < cy1; y++) {
        for (let x = cx0; x < cx1; x++) {
          const p = (y * image.width + x) * 4;
          const r = image.pixels[p];
          const g = image.pixels[p + 1];
          const b = image.pixels[p + 2];
          sr += r + 1;
          sg += g + 1;
          sb += b + 1;
          const luma = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
          sl += luma;
          sll += luma * luma;
          n++;
        }
      }
      const cell = (gy * GRID + gx) * 4;
      out[cell] = sr / (256 * n);
      out[cell + 1] = sg / (256 * n);
      out[cell + 2] = sb / (256 * n);
      out[cell + 3] = Math.sqrt(Math.max(0, sll / n - (sl / n) ** 2));
    }
  }
  return out;
}

function fnv1a(a: number, b: number): number {
  let hash = 0x811c9dc5;
  for (const c of [a, b]) {
    hash ^= c;
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash;
}

/**
 * Signed character-bigram hashing into 63 bins, scaled by the inverse
 * square root of the bigram count; the final component carries the
 * token count so no name embeds to zero.
 */
function hashedBigrams(dim: number, text: string): Float32Array {
  const tokens = text.toLowerCase().split(/\s+/).filter((t) => t.length > 0);
  if (tokens.length === 0) throw new ValidationError(`cannot encode blank text ${JSON.stringify(text)}`);
  const out = new Float32Array(dim);
  let total = 0;
  for (const token of tokens) {
    const padded = `^${token}$`;
    for (let i = 0; i + 1 < padded.length; i++) {
      const hash = fnv1a(padded.charCodeAt(i), padded.charCodeAt(i + 1));
      const sign = hash & 0x10000 ? 1 : -1;
      out[hash % (dim - 1)] += sign;
      total++;
    }
  }
  const scale = 1 / Math.sqrt(total);
  for (let i = 0; i < dim - 1; i++) out[i] *= scale;
  out[dim - 1] = tokens.length;
  return out;
}

const IMAGE_FEATURIZERS: Record<string, ImageFeaturizer> = {
  "grid-moments-v1": { id: "grid-moments-v1", dim: GRID * GRID * 4, embedCrop: gridMoments },
};

const TEXT_ENCODERS: Record<string, TextEncoder> = {
  "hashed-bigrams-v1": { id: "hashed-bigrams-v1", dim: 64, embed: (t) => hashedBigrams(64, t) },
};

export const OFFLINE_IMAGE_FEATURIZERS = Object.keys(IMAGE_FEATURIZERS);
export const OFFLINE_TEXT_ENCODERS = Object.keys(TEXT_ENCODERS);

export function imageFeaturizer(id: string): ImageFeaturizer {
  const f = IMAGE_FEATURIZERS[id];
  if (f === undefined) {
    throw new EnvironmentError(
      `backbone ${JSON.stringify(id)} is not available in this environment ` +
        `(no pretrained weights can be fetched here); offline options: ${OFFLINE_IMAGE_FEATURIZERS.join(", ")}`,
    );
  }
  return f;
}

export function textEncoder(id: string): TextEncoder {
  const e = TEXT_ENCODERS[id];
  if (e === undefined) {
    throw new EnvironmentError(
      `text encoder ${JSON.stringify(id)} is not available in this environment ` +
        `(no pretrained weights can be fetched here); offline options: ${OFFLINE_TEXT_ENCODERS.join(", ")}`,
    );
  }
  return e;
}
