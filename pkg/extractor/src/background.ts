/**
 * Background crop sampling: uniform random boxes that stay clear of
 * every annotation. A crop is accepted when its IoU with each
 * annotated box is below 0.3, so background embeddings carry scene
 * context rather than cut-off objects.
 */

import seedrandom from "seedrandom";

import type { Box } from "./fpk.js";

export type Rng = () => number;

export const BACKGROUND_IOU_LIMIT = 0.3;

const ATTEMPTS_PER_CROP = 40;

export function makeRng(seed: string): Rng {
  return seedrandom(seed);
}

export function iou(a: Box, b: Box): number {
  const ix = Math.max(0, Math.min(a[2], b[2]) - Math.max(a[0], b[0]));
  const iy = Math.max(0, Math.min(a[3], b[3]) - Math.max(a[1], b[1]));
  const inter = ix * iy;
  if (inter === 0) return 0;
  const areaA = (a[2] - a[0]) * (a[3] - a[1]);
  const areaB = (b[2] - b[0]) * (b[3] - b[1]);
  return inter / (areaA + areaB - inter);
}

function randInt(rng: Rng, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

/**
 * Draw up to `count` integer-coordinate crops inside a width x height
 * image, each with IoU below the limit against every keep-out box.
 * Returns fewer when the image is too small or too crowded to place
 * them within the attempt budget.
 */
export function sampleBackgroundBoxes(width: number, height: number, keepOut: Box[], count: number, rng: Rng): Box[] {
  const short = Math.min(width, height);
  const minSide = Math.max(2, Math.floor(short / 8));
  const maxSide = Math.max(minSide, Math.floor(short / 2));
  if (short < 2 || count <= 0) return [];
  const crops: Box[] = [];
  let budget = count * ATTEMPTS_PER_CROP;
  while (crops.length < count && budget > 0) {
    budget--;
    const w = randInt(rng, minSide, maxSide);
    const h = randInt(rng, minSide, maxSide);
    if (w > width || h > height) continue;
    const x0 = randInt(rng, 0, width - w);
    const y0 = randInt(rng, 0, height - h);
    const box: Box = [x0, y0, x0 + w, y0 + h];
    if (keepOut.every((k) => iou(box, k) < BACKGROUND_IOU_LIMIT)) crops.push(box);
  }
  return crops;
}
