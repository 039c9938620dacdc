/**
 * Feature-pack binary format (FPK1).
 *
 * Layout, byte for byte:
 *
 *     magic          4 bytes      "FPK1"
 *     header_len     uint32 LE
 *     header         header_len bytes of UTF-8 JSON with keys
 *                    dataset_id, dim, class_names, record_count,
 *                    records: [{role, class_index?, image_id, box?}, ...]
 *     payload        record_count * dim little-endian float32, row-major
 *
 * Embeddings are stored unnormalized; the consumer normalizes at load
 * time. Zero and non-finite rows are therefore rejected here, before
 * they can poison a downstream load.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { FormatError, ValidationError } from "./errors.js";

export const MAGIC = "FPK1";

export const ROLE_OBJECT = "object";
export const ROLE_BACKGROUND = "background";

/** Corner box, x0 < x1 and y0 < y1, in image pixel coordinates. */
export type Box = [number, number, number, number];

export interface PackRecord {
  role: typeof ROLE_OBJECT | typeof ROLE_BACKGROUND;
  imageId: string;
  classIndex?: number;
  box?: Box;
}

export interface FeaturePack {
  datasetId: string;
  dim: number;
  classNames: string[];
  records: PackRecord[];
  /** records.length * dim values, row-major. */
  matrix: Float32Array;
  /** Identifier of the model that produced the embeddings, if any. */
  backbone?: string;
}

/** JSON with object keys sorted recursively, no whitespace. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value === "string" || typeof value === "boolean") {
    return JSON.stringify(value);
  }
  if (typeof value === "number") {
    if (!Number.isFinite(value)) throw new ValidationError(`non-finite number ${value} in header`);
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
    return `{${entries.map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`).join(",")}}`;
  }
  throw new ValidationError(`cannot serialize ${typeof value} in header`);
}

function validateBox(box: Box, row: number): void {
  if (box.length !== 4 || box.some((v) => !Number.isFinite(v))) {
    throw new ValidationError(`record ${row}: box must have 4 finite coordinates`);
  }
  const [x0, y0, x1, y1] = box;
  if (!(x0 < x1 && y0 < y1)) {
    throw new ValidationError(`record ${row}: degenerate box [${box.join(", ")}]`);
  }
}

function validatePack(pack: FeaturePack): void {
  if (pack.dim <= 0 || !Number.isInteger(pack.dim)) {
    throw new ValidationError(`dim must be a positive integer, got ${pack.dim}`);
  }
  if (pack.matrix.length !== pack.records.length * pack.dim) {
    throw new ValidationError(
      `${pack.records.length} records of dim ${pack.dim} need ${pack.records.length * pack.dim} values, got ${pack.matrix.length}`,
    );
  }
  const nClasses = pack.classNames.length;
  pack.records.forEach((r, i) => {
    if (r.role !== ROLE_OBJECT && r.role !== ROLE_BACKGROUND) {
      throw new ValidationError(`record ${i}: unknown role ${JSON.stringify(r.role)}`);
    }
    if (r.role === ROLE_OBJECT) {
      if (r.classIndex === undefined || !Number.isInteger(r.classIndex) || r.classIndex < 0 || r.classIndex >= nClasses) {
        throw new ValidationError(`record ${i}: class index ${r.classIndex} not in [0, ${nClasses})`);
      }
    } else if (r.classIndex !== undefined) {
      throw new ValidationError(`record ${i}: background record carries a class index`);
    }
    if (r.box !== undefined) validateBox(r.box, i);
  });
  for (let i = 0; i < pack.records.length; i++) {
    let sq = 0;
    for (let j = 0; j < pack.dim; j++) {
      const v = pack.matrix[i * pack.dim + j];
      if (!Number.isFinite(v)) throw new ValidationError(`record ${i}: embedding contains a non-finite value`);
      sq += v * v;
    }
    if (sq === 0) throw new ValidationError(`record ${i}: zero embedding cannot be L2-normalized downstream`);
  }
}

/** Serialize a pack to the FPK1 byte layout. */
export function encodeFeaturePack(pack: FeaturePack): Buffer {
  validatePack(pack);
  const header: Record<string, unknown> = {
    dataset_id: pack.datasetId,
    dim: pack.dim,
    class_names: pack.classNames,
    record_count: pack.records.length,
    records: pack.records.map((r) => ({
      role: r.role,
      image_id: r.imageId,
      class_index: r.classIndex,
      box: r.box === undefined ? undefined : Array.from(r.box),
    })),
  };
  if (pack.backbone !== undefined) header.backbone = pack.backbone;
  const headerBytes = Buffer.from(canonicalJson(header), "utf-8");
  const prefix = Buffer.alloc(8);
  prefix.write(MAGIC, 0, "ascii");
  prefix.writeUInt32LE(headerBytes.length, 4);
  const payload = Buffer.alloc(pack.matrix.length * 4);
  for (let i = 0; i < pack.matrix.length; i++) payload.writeFloatLE(pack.matrix[i], i * 4);
  return Buffer.concat([prefix, headerBytes, payload]);
}

export function writeFeaturePack(path: string, pack: FeaturePack): void {
  writeFileSync(path, encodeFeaturePack(pack));
}

/** Parse FPK1 bytes back into a pack. Used for round-trip checks. */
export function decodeFeaturePack(blob: Buffer, source = "<bytes>"): FeaturePack {
  if (blob.length < 8 || blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new FormatError(`${source}: not a feature pack (bad magic)`);
  }
  const headerLen = blob.readUInt32LE(4);
  if (8 + headerLen > blob.length) throw new FormatError(`${source}: truncated header`);
  let header: any;
  try {
    header = JSON.parse(blob.toString("utf-8", 8, 8 + headerLen));
  } catch (e) {
    throw new FormatError(`${source}: header is not valid JSON (${e})`);
  }
  for (const key of ["dataset_id", "dim", "class_names", "record_count", "records"]) {
    if (!(key in header)) throw new FormatError(`${source}: header missing ${JSON.stringify(key)}`);
  }
  const dim: number = header.dim;
  const count: number = header.record_count;
  if (!Number.isInteger(dim) || dim <= 0) throw new ValidationError(`${source}: dim must be a positive integer`);
  if (!Number.isInteger(count) || count < 0 || count !== header.records.length) {
    throw new ValidationError(`${source}: record_count ${count} does not match ${header.records.length} records`);
  }
  const payload = blob.subarray(8 + headerLen);
  if (payload.length !== count * dim * 4) {
    throw new FormatError(`${source}: payload holds ${payload.length} bytes, expected ${count * dim * 4}`);
  }
  const matrix = new Float32Array(count * dim);
  for (let i = 0; i < matrix.length; i++) matrix[i] = payload.readFloatLE(i * 4);
  const records: PackRecord[] = header.records.map((r: any) => ({
    role: r.role,
    imageId: r.image_id,
    classIndex: r.class_index === undefined || r.class_index === null ? undefined : r.class_index,
    box: r.box === undefined || r.box === null ? undefined : (r.box as Box),
  }));
  const pack: FeaturePack = {
    datasetId: header.dataset_id,
    dim,
    classNames: header.class_names,
    records,
    matrix,
    backbone: header.backbone,
  };
  validatePack(pack);
  return pack;
}

export function readFeaturePack(path: string): FeaturePack {
  return decodeFeaturePack(readFileSync(path), path);
}
