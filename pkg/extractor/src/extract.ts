/**
 * The two extraction operations: annotated images to an instance
 * feature pack, and class names to a text feature pack.
 *
 * Images are embedded in parallel, but rows land in the pack in
 * annotation-file order and the file is written once at the end, so a
 * run is reproducible regardless of scheduling. Each image draws its
 * background crops from an RNG seeded by (job seed, image position,
 * image id), never from a shared stream.
 */

import { createHash } from "node:crypto";
import { readFile } from "node:fs/promises";
import { writeFileSync } from "node:fs";
import { basename, join } from "node:path";

import pLimit from "p-limit";

import { makeRng, sampleBackgroundBoxes } from "./background.js";
import { loadDataset, type AnnotatedImage } from "./coco.js";
import { EnvironmentError, ValidationError } from "./errors.js";
import { imageFeaturizer, textEncoder } from "./featurize.js";
import { encodeFeaturePack, ROLE_BACKGROUND, ROLE_OBJECT, type FeaturePack, type PackRecord } from "./fpk.js";
import { decodePng } from "./png.js";

const IMAGE_CONCURRENCY = 4;

export interface ExtractionJob {
  /** Directory the annotation file_name entries are relative to. */
  datasetRoot: string;
  /** COCO-style JSON annotation file. */
  annotationFile: string;
  /** Image featurizer id, recorded in the pack header. */
  backbone: string;
  /** Feature-pack file to write. */
  outputPath: string;
  /** Background crops sampled per readable image. */
  backgroundPerImage: number;
  /** Background sampling seed. */
  seed?: number;
  /** Pack dataset id; defaults to the annotation file basename. */
  datasetId?: string;
}

export interface SkippedImage {
  fileName: string;
  reason: string;
}

export interface ExtractionResult {
  outputPath: string;
  manifestPath: string;
  datasetId: string;
  recordCount: number;
  objectCount: number;
  backgroundCount: number;
  skipped: SkippedImage[];
  warnings: string[];
}

interface ImageRows {
  records: PackRecord[];
  vectors: Float32Array[];
  skipped?: SkippedImage;
}

function writeManifest(path: string, manifest: Record<string, unknown>): void {
  writeFileSync(path, JSON.stringify(manifest, null, 2) + "\n");
}

function sha256(blob: Buffer): string {
  return createHash("sha256").update(blob).digest("hex");
}

async function embedImage(
  job: ExtractionJob,
  image: AnnotatedImage,
  position: number,
  embedCrop: (img: import("./png.js").Image, box: import("./fpk.js").Box) => Float32Array,
): Promise<ImageRows> {
  let decoded: import("./png.js").Image;
  try {
    decoded = decodePng(await readFile(join(job.datasetRoot, image.fileName)), image.fileName);
  } catch (e) {
    if (e instanceof ValidationError || e instanceof EnvironmentError) throw e;
    const reason = e instanceof Error ? e.message : String(e);
    return { records: [], vectors: [], skipped: { fileName: image.fileName, reason } };
  }
  const records: PackRecord[] = [];
  const vectors: Float32Array[] = [];
  for (const ann of image.annotations) {
    records.push({ role: ROLE_OBJECT, imageId: image.id, classIndex: ann.classIndex, box: ann.box });
    vectors.push(embedCrop(decoded, ann.box));
  }
  const rng = makeRng(`${job.seed ?? 0}:${position}:${image.id}`);
  const keepOut = image.annotations.map((a) => a.box);
  for (const box of sampleBackgroundBoxes(decoded.width, decoded.height, keepOut, job.backgroundPerImage, rng)) {
    records.push({ role: ROLE_BACKGROUND, imageId: image.id, box });
    vectors.push(embedCrop(decoded, box));
  }
  return { records, vectors };
}

/**
 * Embed every annotated box plus sampled background crops into a
 * feature pack. Unreadable images are skipped with a warning and a
 * manifest entry; an annotation file with no annotations is an error.
 */
export async function extractInstances(job: ExtractionJob): Promise<ExtractionResult> {
  if (!Number.isInteger(job.backgroundPerImage) || job.backgroundPerImage < 0) {
    throw new ValidationError(`background crops per image must be a non-negative integer, got ${job.backgroundPerImage}`);
  }
  const featurizer = imageFeaturizer(job.backbone);
  const dataset = loadDataset(job.annotationFile);
  const datasetId = job.datasetId ?? basename(job.annotationFile).replace(/\.json$/, "");

  const limit = pLimit(IMAGE_CONCURRENCY);
  const perImage = await Promise.all(
    dataset.images.map((image, position) => limit(() => embedImage(job, image, position, featurizer.embedCrop))),
  );

  const records: PackRecord[] = [];
  const vectors: Float32Array[] = [];
  const skipped: SkippedImage[] = [];
  for (const rows of perImage) {
    if (rows.skipped !== undefined) skipped.push(rows.skipped);
    records.push(...rows.records);
    vectors.push(...rows.vectors);
  }
  const objectCount = records.filter((r) => r.role === ROLE_OBJECT).length;
  if (objectCount === 0) {
    throw new ValidationError(`no object instances extracted (${skipped.length} of ${dataset.images.length} images unreadable)`);
  }

  const matrix = new Float32Array(records.length * featurizer.dim);
  vectors.forEach((v, i) => matrix.set(v, i * featurizer.dim));
  const pack: FeaturePack = {
    datasetId,
    dim: featurizer.dim,
    classNames: dataset.classNames,
    records,
    matrix,
    backbone: job.backbone,
  };
  const blob = encodeFeaturePack(pack);
  writeFileSync(job.outputPath, blob);

  const manifestPath = job.outputPath + ".manifest.json";
  writeManifest(manifestPath, {
    kind: "extraction-manifest",
    dataset_id: datasetId,
    backbone: job.backbone,
    seed: job.seed ?? 0,
    background_per_image: job.backgroundPerImage,
    classes: dataset.classNames,
    images: {
      total: dataset.images.length,
      processed: dataset.images.length - skipped.length,
      skipped: skipped.map((s) => ({ file_name: s.fileName, reason: s.reason })),
    },
    records: { object: objectCount, background: records.length - objectCount, total: records.length },
    output: basename(job.outputPath),
    output_sha256: sha256(blob),
  });

  return {
    outputPath: job.outputPath,
    manifestPath,
    datasetId,
    recordCount: records.length,
    objectCount,
    backgroundCount: records.length - objectCount,
    skipped,
    warnings: skipped.map((s) => `skipped ${s.fileName}: ${s.reason}`),
  };
}

export interface TextJob {
  classNames: string[];
  /** Text encoder id, recorded in the pack header. */
  encoder: string;
  outputPath: string;
  datasetId?: string;
}

export interface TextResult {
  outputPath: string;
  manifestPath: string;
  datasetId: string;
  recordCount: number;
  dim: number;
  /** True when inter-class variance cannot be computed downstream. */
  singleClass: boolean;
  warnings: string[];
}

/**
 * Encode class names into an N x D text feature pack, one row per
 * class. A single-class pack is still written but flagged, since
 * inter-class variance needs at least two classes.
 */
export function extractClassTexts(job: TextJob): TextResult {
  if (job.classNames.length === 0) throw new ValidationError("class name list is empty");
  const seen = new Set<string>();
  for (const name of job.classNames) {
    if (name.trim().length === 0) throw new ValidationError("class names must be non-blank");
    if (seen.has(name)) throw new ValidationError(`duplicate class name ${JSON.stringify(name)}`);
    seen.add(name);
  }
  const encoder = textEncoder(job.encoder);
  const datasetId = job.datasetId ?? "class-texts";

  const records: PackRecord[] = job.classNames.map((name, i) => ({
    role: ROLE_OBJECT,
    imageId: `text:${name}`,
    classIndex: i,
  }));
  const matrix = new Float32Array(records.length * encoder.dim);
  job.classNames.forEach((name, i) => matrix.set(encoder.embed(name), i * encoder.dim));

  const pack: FeaturePack = {
    datasetId,
    dim: encoder.dim,
    classNames: [...job.classNames],
    records,
    matrix,
    backbone: job.encoder,
  };
  const blob = encodeFeaturePack(pack);
  writeFileSync(job.outputPath, blob);

  const singleClass = job.classNames.length === 1;
  const manifestPath = job.outputPath + ".manifest.json";
  writeManifest(manifestPath, {
    kind: "text-pack-manifest",
    dataset_id: datasetId,
    encoder: job.encoder,
    classes: [...job.classNames],
    records: records.length,
    dim: encoder.dim,
    icv_applicable: !singleClass,
    output: basename(job.outputPath),
    output_sha256: sha256(blob),
  });

  return {
    outputPath: job.outputPath,
    manifestPath,
    datasetId,
    recordCount: records.length,
    dim: encoder.dim,
    singleClass,
    warnings: singleClass ? ["single-class pack: inter-class variance is not applicable"] : [],
  };
}
