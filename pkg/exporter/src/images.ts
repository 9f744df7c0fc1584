/**
 * PNG -> PNM dataset conversion.
 *
 * Scenes become P6 PPM with the u8 samples copied through untouched
 * (grayscale replicates to three channels; an alpha channel must be
 * fully opaque or the drop would lose data). Ground-truth masks, spotted
 * by a filename suffix, become P5 PGM binarized to 0/255: a color mask
 * pixel is road when it equals the road color exactly, a grayscale mask
 * pixel when its value is 128 or more.
 *
 * Only 8-bit sample depths convert; deeper sources are an error, not a
 * rescale. Palette images are fine at any index width because palette
 * entries are already 8-bit.
 */
import { readFileSync, writeFileSync, readdirSync, mkdirSync } from "fs";
import { join, basename } from "path";
import { PNG } from "pngjs";
import { FormatError } from "./errors.js";
import { encodePpm, encodePgm } from "./pnm.js";

export interface ConvertOptions {
  /** Filename-stem suffix marking ground-truth masks. Default "_gt". */
  maskSuffix?: string;
  /** RGB triple meaning "road" in color masks. Default magenta 255,0,255. */
  roadColor?: [number, number, number];
}

export interface ConvertedImage {
  /** Output filename (source stem plus .ppm or .pgm). */
  name: string;
  kind: "scene" | "mask";
  width: number;
  height: number;
  bytes: Buffer;
}

const PALETTE = 3;

interface DecodedPng {
  width: number;
  height: number;
  depth: number;
  colorType: number;
  /** RGBA, 4 bytes per pixel (pngjs normal form). */
  data: Buffer;
}

function decodePng(name: string, blob: Buffer): DecodedPng {
  let png: PNG;
  try {
    png = PNG.sync.read(blob);
  } catch (err) {
    throw new FormatError(`${name}: ${(err as Error).message}`);
  }
  const meta = png as unknown as DecodedPng;
  if (meta.depth !== 8 && meta.colorType !== PALETTE) {
    throw new FormatError(`${name}: ${meta.depth}-bit samples; only 8-bit sources convert`);
  }
  return {
    width: png.width,
    height: png.height,
    depth: meta.depth,
    colorType: meta.colorType,
    data: png.data,
  };
}

function isGrayscale(colorType: number): boolean {
  return colorType === 0 || colorType === 4;
}

export function convertPng(
  filename: string,
  blob: Buffer,
  options: ConvertOptions = {},
): ConvertedImage {
  const maskSuffix = options.maskSuffix ?? "_gt";
  const roadColor = options.roadColor ?? [255, 0, 255];
  const stem = basename(filename).replace(/\.png$/i, "");
  const png = decodePng(filename, blob);
  const count = png.width * png.height;

  if (stem.endsWith(maskSuffix)) {
    const pixels = new Uint8Array(count);
    if (isGrayscale(png.colorType)) {
      for (let i = 0; i < count; i++) pixels[i] = png.data[i * 4] >= 128 ? 255 : 0;
    } else {
      for (let i = 0; i < count; i++) {
        const road =
          png.data[i * 4] === roadColor[0] &&
          png.data[i * 4 + 1] === roadColor[1] &&
          png.data[i * 4 + 2] === roadColor[2];
        pixels[i] = road ? 255 : 0;
      }
    }
    return {
      name: `${stem}.pgm`,
      kind: "mask",
      width: png.width,
      height: png.height,
      bytes: encodePgm({ width: png.width, height: png.height, pixels }),
    };
  }

  for (let i = 0; i < count; i++) {
    if (png.data[i * 4 + 3] !== 255) {
      throw new FormatError(
        `${filename}: pixel ${i} has alpha ${png.data[i * 4 + 3]}; ` +
          `dropping a live alpha channel would lose data`,
      );
    }
  }
  const pixels = new Uint8Array(count * 3);
  for (let i = 0; i < count; i++) {
    pixels[i * 3] = png.data[i * 4];
    pixels[i * 3 + 1] = png.data[i * 4 + 1];
    pixels[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return {
    name: `${stem}.ppm`,
    kind: "scene",
    width: png.width,
    height: png.height,
    bytes: encodePpm({ width: png.width, height: png.height, pixels }),
  };
}

export interface ConvertReport {
  written: { src: string; dst: string; kind: "scene" | "mask" }[];
}

/** Convert every top-level *.png in srcDir; names carry over, stems intact. */
export function convertImages(
  srcDir: string,
  dstDir: string,
  options: ConvertOptions = {},
): ConvertReport {
  const names = readdirSync(srcDir, { withFileTypes: true })
    .filter((e) => e.isFile() && /\.png$/i.test(e.name))
    .map((e) => e.name)
    .sort();
  mkdirSync(dstDir, { recursive: true });
  const written: ConvertReport["written"] = [];
  for (const name of names) {
    const out = convertPng(name, readFileSync(join(srcDir, name)), options);
    const dst = join(dstDir, out.name);
    writeFileSync(dst, out.bytes);
    written.push({ src: join(srcDir, name), dst, kind: out.kind });
  }
  return { written };
}
