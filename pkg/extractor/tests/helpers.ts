/** Fixture builders shared by the test modules. */

import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { crc32, deflateSync } from "node:zlib";

export interface RawImage {
  width: number;
  height: number;
  /** RGBA row-major, width * height * 4 bytes. */
  pixels: Uint8Array;
}

export function makeImage(width: number, height: number, fn: (x: number, y: number) => [number, number, number, number]): RawImage {
  const pixels = new Uint8Array(width * height * 4);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b, a] = fn(x, y);
      const p = (y * width + x) * 4;
      pixels[p] = r;
      pixels[p + 1] = g;
      pixels[p + 2] = b;
      pixels[p + 3] = a;
    }
  }
  return { width, height, pixels };
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(data.length, 0);
  head.write(type, 4, "ascii");
  const body = Buffer.concat([head.subarray(4), data]);
  const tail = Buffer.alloc(4);
  tail.writeUInt32BE(crc32(body), 0);
  return Buffer.concat([head.subarray(0, 4), body, tail]);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

/**
 * Encode an image as a valid PNG. colorType 0 (gray), 2 (RGB) or
 * 6 (RGBA); filters picks the per-row scanline filter (default all 0).
 */
export function encodePng(image: RawImage, colorType: 0 | 2 | 6 = 6, filters?: number[]): Buffer {
  const channels = colorType === 0 ? 1 : colorType === 2 ? 3 : 4;
  const stride = image.width * channels;
  const raw = Buffer.alloc(stride * image.height);
  for (let i = 0; i < image.width * image.height; i++) {
    const p = i * 4;
    if (colorType === 0) {
      raw[i] = image.pixels[p];
    } else {
      raw[i * channels] = image.pixels[p];
      raw[i * channels + 1] = image.pixels[p + 1];
      raw[i * channels + 2] = image.pixels[p + 2];
      if (colorType === 6) raw[i * channels + 3] = image.pixels[p + 3];
    }
  }

  const filtered = Buffer.alloc((stride + 1) * image.height);
  for (let y = 0; y < image.height; y++) {
    const filter = filters?.[y] ?? 0;
    filtered[y * (stride + 1)] = filter;
    for (let x = 0; x < stride; x++) {
      const v = raw[y * stride + x];
      const left = x >= channels ? raw[y * stride + x - channels] : 0;
      const up = y > 0 ? raw[(y - 1) * stride + x] : 0;
      const upLeft = y > 0 && x >= channels ? raw[(y - 1) * stride + x - channels] : 0;
      let out = v;
      if (filter === 1) out = v - left;
      else if (filter === 2) out = v - up;
      else if (filter === 3) out = v - ((left + up) >> 1);
      else if (filter === 4) out = v - paeth(left, up, upLeft);
      filtered[y * (stride + 1) + 1 + x] = out & 0xff;
    }
  }

  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(image.width, 0);
  ihdr.writeUInt32BE(image.height, 4);
  ihdr[8] = 8;
  ihdr[9] = colorType;
  const signature = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);
  return Buffer.concat([
    signature,
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(filtered)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export interface DatasetSpec {
  imageCount: number;
  boxesPerImage: number;
  imageSize?: number;
  categoryIds?: number[];
}

export interface BuiltDataset {
  root: string;
  annotationFile: string;
  fileNames: string[];
}

/**
 * Write a small COCO-style dataset into a fresh temp directory:
 * solid-tinted PNGs with non-overlapping annotation boxes cycling
 * through the categories.
 */
export function buildDataset(spec: DatasetSpec): BuiltDataset {
  const size = spec.imageSize ?? 32;
  const categoryIds = spec.categoryIds ?? [11, 5, 29];
  const root = mkdtempSync(join(tmpdir(), "extractor-ds-"));
  const images: object[] = [];
  const annotations: object[] = [];
  const fileNames: string[] = [];
  let annId = 1;
  for (let i = 0; i < spec.imageCount; i++) {
    const fileName = `img-${String(i).padStart(3, "0")}.png`;
    fileNames.push(fileName);
    const tint: [number, number, number, number] = [40 + i * 17, 80 + i * 9, 200 - i * 11, 255];
    const image = makeImage(size, size, (x, y) => [
      (tint[0] + x * 3) & 0xff,
      (tint[1] + y * 5) & 0xff,
      tint[2],
      255,
    ]);
    writeFileSync(join(root, fileName), encodePng(image, 2));
    images.push({ id: i + 1, file_name: fileName, width: size, height: size });
    for (let b = 0; b < spec.boxesPerImage; b++) {
      const side = Math.max(4, Math.floor(size / (spec.boxesPerImage + 1)));
      const x = (b * size) / spec.boxesPerImage;
      annotations.push({
        id: annId++,
        image_id: i + 1,
        category_id: categoryIds[(i + b) % categoryIds.length],
        bbox: [Math.floor(x), 2 + b, side, side],
      });
    }
  }
  const annotationFile = join(root, "annotations.json");
  writeFileSync(
    annotationFile,
    JSON.stringify({
      images,
      annotations,
      categories: categoryIds.map((id) => ({ id, name: `cls-${id}` })),
    }),
  );
  return { root, annotationFile, fileNames };
}
