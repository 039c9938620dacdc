/**
 * Minimal PNG reader for dataset images.
 *
 * Supports the subset detection datasets actually ship: 8-bit depth,
 * grayscale / RGB / RGBA color, no interlacing. Output is always RGBA
 * so downstream code has a single pixel layout.
 */

import { inflateSync } from "node:zlib";

import { FormatError } from "./errors.js";

const SIGNATURE = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);

export interface Image {
  width: number;
  height: number;
  /** width * height * 4 bytes, RGBA row-major. */
  pixels: Uint8Array;
}

const CHANNELS: Record<number, number> = { 0: 1, 2: 3, 6: 4 };

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

export function decodePng(blob: Buffer, source = "<bytes>"): Image {
  if (blob.length < SIGNATURE.length || !blob.subarray(0, 8).equals(SIGNATURE)) {
    throw new FormatError(`${source}: not a PNG file`);
  }
  let width = 0;
  let height = 0;
  let colorType = -1;
  const idat: Buffer[] = [];
  let offset = 8;
  let sawEnd = false;
  while (offset + 8 <= blob.length && !sawEnd) {
    const length = blob.readUInt32BE(offset);
    const type = blob.toString("ascii", offset + 4, offset + 8);
    const dataStart = offset + 8;
    if (dataStart + length + 4 > blob.length) throw new FormatError(`${source}: truncated ${type} chunk`);
    const data = blob.subarray(dataStart, dataStart + length);
    if (type === "IHDR") {
      if (length !== 13) throw new FormatError(`${source}: IHDR must be 13 bytes`);
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      const bitDepth = data[8];
      colorType = data[9];
      const interlace = data[12];
      if (bitDepth !== 8) throw new FormatError(`${source}: unsupported bit depth ${bitDepth}`);
      if (!(colorType in CHANNELS)) throw new FormatError(`${source}: unsupported color type ${colorType}`);
      if (interlace !== 0) throw new FormatError(`${source}: interlaced PNG is not supported`);
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      sawEnd = true;
    }
    offset = dataStart + length + 4;
  }
  if (width <= 0 || height <= 0 || colorType < 0) throw new FormatError(`${source}: missing IHDR`);
  if (!sawEnd) throw new FormatError(`${source}: missing IEND`);
  if (idat.length === 0) throw new FormatError(`${source}: no image data`);

  let raw: Buffer;
  try {
    raw = inflateSync(Buffer.concat(idat));
  } catch (e) {
    throw new FormatError(`${source}: corrupt image data (${e})`);
  }
  const channels = CHANNELS[colorType];
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new FormatError(`${source}: decompressed to ${raw.length} bytes, expected ${(stride + 1) * height}`);
  }

  const recon = Buffer.alloc(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const out = y * stride;
    const prior = out - stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? recon[out + x - channels] : 0;
      const up = y > 0 ? recon[prior + x] : 0;
      const upLeft = y > 0 && x >= channels ? recon[prior + x - channels] : 0;
      let v = line[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          v += left;
          break;
        case 2:
          v += up;
          break;
        case 3:
          v += (left + up) >> 1;
          break;
        case 4:
          v += paeth(left, up, upLeft);
          break;
        default:
          throw new FormatError(`${source}: unknown scanline filter ${filter}`);
      }
      recon[out + x] = v & 0xff;
    }
  }

  const pixels = new Uint8Array(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const s = i * channels;
    if (colorType === 0) {
      pixels[i * 4] = recon[s];
      pixels[i * 4 + 1] = recon[s];
      pixels[i * 4 + 2] = recon[s];
      pixels[i * 4 + 3] = 255;
    } else {
      pixels[i * 4] = recon[s];
      pixels[i * 4 + 1] = recon[s + 1];
      pixels[i * 4 + 2] = recon[s + 2];
      pixels[i * 4 + 3] = colorType === 6 ? recon[s + 3] : 255;
    }
  }
  return { width, height, pixels };
}
