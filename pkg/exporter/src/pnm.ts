/**
 * Binary PNM writers matching the engine's canonical form:
 * header "P6\n{w} {h}\n255\n" (or P5), then raw bytes row-major.
 */
import { FormatError } from "./errors.js";

export interface RgbImage {
  width: number;
  height: number;
  /** RGB interleaved, 3 bytes per pixel. */
  pixels: Uint8Array;
}

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array;
}

function checkDims(width: number, height: number): void {
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new FormatError(`bad image dimensions ${width}x${height}`);
  }
}

export function encodePpm(image: RgbImage): Buffer {
  checkDims(image.width, image.height);
  if (image.pixels.length !== image.width * image.height * 3) {
    throw new FormatError(
      `PPM wants ${image.width * image.height * 3} bytes, got ${image.pixels.length}`,
    );
  }
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}

export function encodePgm(image: GrayImage): Buffer {
  checkDims(image.width, image.height);
  if (image.pixels.length !== image.width * image.height) {
    throw new FormatError(
      `PGM wants ${image.width * image.height} bytes, got ${image.pixels.length}`,
    );
  }
  const header = Buffer.from(`P5\n${image.width} ${image.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}

/** Parse a binary PNM written in the canonical form above (test helper). */
export function decodePnm(blob: Buffer): { magic: string; image: RgbImage | GrayImage } {
  const magic = blob.subarray(0, 2).toString("ascii");
  if (magic !== "P5" && magic !== "P6") {
    throw new FormatError(`not a binary PNM (magic ${JSON.stringify(magic)})`);
  }
  // header = magic, whitespace, width, height, maxval, one whitespace byte
  const text = blob.subarray(0, 64).toString("latin1");
  const m = /^P[56]\s+(\d+)\s+(\d+)\s+(\d+)\s/.exec(text);
  if (!m) throw new FormatError("unparsable PNM header");
  const width = parseInt(m[1], 10);
  const height = parseInt(m[2], 10);
  if (parseInt(m[3], 10) !== 255) throw new FormatError(`maxval ${m[3]} not supported`);
  const bytes = width * height * (magic === "P6" ? 3 : 1);
  const start = m[0].length;
  if (blob.length !== start + bytes) {
    throw new FormatError(`payload is ${blob.length - start} bytes, expected ${bytes}`);
  }
  const pixels = new Uint8Array(blob.subarray(start));
  return { magic, image: { width, height, pixels } };
}
