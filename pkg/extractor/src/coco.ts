/**
 * COCO-style annotation parsing.
 *
 * The accepted shape is the common interchange subset: top-level
 * images / annotations / categories arrays, boxes as [x, y, w, h] in
 * pixels. Class indices are assigned by ascending category id so the
 * mapping is reproducible regardless of array order.
 */

import { readFileSync } from "node:fs";

import { ValidationError } from "./errors.js";
import type { Box } from "./fpk.js";

export interface Annotation {
  classIndex: number;
  box: Box;
}

export interface AnnotatedImage {
  /** Stringified COCO image id, used as the pack image_id. */
  id: string;
  fileName: string;
  width: number;
  height: number;
  annotations: Annotation[];
}

export interface Dataset {
  classNames: string[];
  images: AnnotatedImage[];
}

function asArray(value: unknown, key: string, source: string): any[] {
  if (!Array.isArray(value)) throw new ValidationError(`${source}: ${JSON.stringify(key)} must be an array`);
  return value;
}

function positiveInt(value: unknown, what: string, source: string): number {
  if (typeof value !== "number" || !Number.isInteger(value) || value <= 0) {
    throw new ValidationError(`${source}: ${what} must be a positive integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

export function parseDataset(json: unknown, source = "<json>"): Dataset {
  if (typeof json !== "object" || json === null) throw new ValidationError(`${source}: annotation root must be an object`);
  const root = json as Record<string, unknown>;
  for (const key of ["images", "annotations", "categories"]) {
    if (!(key in root)) throw new ValidationError(`${source}: missing ${JSON.stringify(key)}`);
  }
  const rawImages = asArray(root.images, "images", source);
  const rawAnnotations = asArray(root.annotations, "annotations", source);
  const rawCategories = asArray(root.categories, "categories", source);
  if (rawImages.length === 0) throw new ValidationError(`${source}: annotation file lists no images`);
  if (rawAnnotations.length === 0) throw new ValidationError(`${source}: annotation file contains no annotations`);
  if (rawCategories.length === 0) throw new ValidationError(`${source}: annotation file lists no categories`);

  const categories = [...rawCategories].sort((a, b) => a.id - b.id);
  const classIndexById = new Map<number, number>();
  const classNames: string[] = [];
  categories.forEach((c, i) => {
    const id = positiveInt(c?.id, "category id", source);
    if (typeof c.name !== "string" || c.name.length === 0) {
      throw new ValidationError(`${source}: category ${id} has no name`);
    }
    if (classIndexById.has(id)) throw new ValidationError(`${source}: duplicate category id ${id}`);
    classIndexById.set(id, i);
    classNames.push(c.name);
  });

  const imageById = new Map<number, AnnotatedImage>();
  const images: AnnotatedImage[] = [];
  for (const entry of rawImages) {
    const id = positiveInt(entry?.id, "image id", source);
    if (imageById.has(id)) throw new ValidationError(`${source}: duplicate image id ${id}`);
    if (typeof entry.file_name !== "string" || entry.file_name.length === 0) {
      throw new ValidationError(`${source}: image ${id} has no file_name`);
    }
    const image: AnnotatedImage = {
      id: String(id),
      fileName: entry.file_name,
      width: positiveInt(entry.width, `image ${id} width`, source),
      height: positiveInt(entry.height, `image ${id} height`, source),
      annotations: [],
    };
    imageById.set(id, image);
    images.push(image);
  }

  for (const entry of rawAnnotations) {
    const id = positiveInt(entry?.id, "annotation id", source);
    const image = imageById.get(entry.image_id);
    if (image === undefined) throw new ValidationError(`${source}: annotation ${id} references unknown image ${entry.image_id}`);
    const classIndex = classIndexById.get(entry.category_id);
    if (classIndex === undefined) {
      throw new ValidationError(`${source}: annotation ${id} references unknown category ${entry.category_id}`);
    }
    const bbox = entry.bbox;
    if (!Array.isArray(bbox) || bbox.length !== 4 || bbox.some((v: unknown) => typeof v !== "number" || !Number.isFinite(v))) {
      throw new ValidationError(`${source}: annotation ${id} bbox must be [x, y, w, h]`);
    }
    const [x, y, w, h] = bbox as number[];
    const x0 = Math.max(0, x);
    const y0 = Math.max(0, y);
    const x1 = Math.min(image.width, x + w);
    const y1 = Math.min(image.height, y + h);
    if (!(x0 < x1 && y0 < y1)) {
      throw new ValidationError(`${source}: annotation ${id} box [${bbox.join(", ")}] is empty within image ${image.id}`);
    }
    image.annotations.push({ classIndex, box: [x0, y0, x1, y1] });
  }

  return { classNames, images };
}

export function loadDataset(path: string): Dataset {
  let json: unknown;
  try {
    json = JSON.parse(readFileSync(path, "utf-8"));
  } catch (e) {
    throw new ValidationError(`${path}: cannot parse annotation file (${e})`);
  }
  return parseDataset(json, path);
}
