#!/usr/bin/env node
/**
 * roadnet-export: offline converter from training artifacts to the
 * engine's on-disk formats.
 *
 *   export    HDF5 checkpoint -> weight container (+ manifest record)
 *   manifest  graph document  -> editable default manifest
 *   convert   PNG directory   -> PPM scenes and binarized PGM masks
 *
 * Exit codes: 0 done, 1 usage, 2 unreadable or malformed input,
 * 3 checkpoint does not satisfy the graph.
 */
import { readFileSync, writeFileSync, realpathSync } from "fs";
import { pathToFileURL } from "url";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { ExportError, FormatError } from "./errors.js";
import { exportCheckpoint } from "./exportckpt.js";
import { parseGraphDoc, layerNeeds } from "./graphdoc.js";
import { defaultManifest, parseManifest, DEFAULT_BN_EPSILON } from "./manifest.js";
import { convertImages } from "./images.js";

class UsageError extends Error {}

function readJson(path: string, what: string): unknown {
  const text = readFileSync(path, "utf-8");
  try {
    return JSON.parse(text);
  } catch (err) {
    throw new FormatError(`${what} ${path} is not valid JSON: ${(err as Error).message}`);
  }
}

function parseRoadColor(text: string): [number, number, number] {
  const parts = text.split(",").map((p) => Number(p.trim()));
  if (parts.length !== 3 || parts.some((v) => !Number.isInteger(v) || v < 0 || v > 255)) {
    throw new UsageError(`--road-color wants three bytes like 255,0,255; got ${JSON.stringify(text)}`);
  }
  return [parts[0], parts[1], parts[2]];
}

function checkEpsilon(value: number): number {
  if (!(value > 0) || !Number.isFinite(value)) {
    throw new UsageError(`--epsilon must be a positive number, got ${value}`);
  }
  return value;
}

async function cmdExport(args: {
  ckpt: string;
  graph: string;
  out: string;
  manifest?: string;
  epsilon: number;
}): Promise<void> {
  const graphDoc = readJson(args.graph, "graph document");
  const manifest = args.manifest
    ? parseManifest(readJson(args.manifest, "manifest"))
    : undefined;
  const result = await exportCheckpoint({
    ckptPath: args.ckpt,
    graphDoc,
    manifest,
    epsilon: checkEpsilon(args.epsilon),
  });
  writeFileSync(args.out, result.container);
  const recordPath = `${args.out}.manifest.json`;
  writeFileSync(recordPath, JSON.stringify(result.manifest, null, 2) + "\n");
  const layers = Object.keys(result.manifest.layers).length;
  const mb = (result.container.length / 1e6).toFixed(2);
  console.log(
    `wrote ${args.out}: ${result.tensorNames.length} tensors from ${layers} layers, ${mb} MB`,
  );
  console.log(`manifest record: ${recordPath}`);
}

function cmdManifest(args: { graph: string; out: string; epsilon: number }): void {
  const doc = parseGraphDoc(readJson(args.graph, "graph document"));
  const manifest = defaultManifest(layerNeeds(doc), checkEpsilon(args.epsilon));
  writeFileSync(args.out, JSON.stringify(manifest, null, 2) + "\n");
  console.log(`wrote ${args.out}: ${Object.keys(manifest.layers).length} layer mappings`);
}

function cmdConvert(args: {
  src: string;
  dst: string;
  maskSuffix: string;
  roadColor: string;
}): void {
  const report = convertImages(args.src, args.dst, {
    maskSuffix: args.maskSuffix,
    roadColor: parseRoadColor(args.roadColor),
  });
  for (const row of report.written) {
    console.log(`${row.kind.padEnd(5)} ${row.src} -> ${row.dst}`);
  }
  console.log(`${report.written.length} files converted`);
}

export async function main(argv: string[]): Promise<number> {
  const parser = yargs(argv)
    .scriptName("roadnet-export")
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      throw err ?? new UsageError(msg);
    })
    .command(
      "export",
      "convert an HDF5 checkpoint into a weight container",
      (y) =>
        y
          .option("ckpt", { type: "string", demandOption: true, describe: "HDF5 checkpoint path" })
          .option("graph", { type: "string", demandOption: true, describe: "graph JSON the weights must satisfy" })
          .option("out", { type: "string", demandOption: true, describe: "container file to write" })
          .option("manifest", { type: "string", describe: "layer-name mapping (default: identity naming)" })
          .option("epsilon", { type: "number", default: DEFAULT_BN_EPSILON, describe: "batch-norm epsilon for the default manifest" }),
      async (a) => cmdExport(a as never),
    )
    .command(
      "manifest",
      "write the default layer mapping for a graph, ready to edit",
      (y) =>
        y
          .option("graph", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("epsilon", { type: "number", default: DEFAULT_BN_EPSILON }),
      (a) => cmdManifest(a as never),
    )
    .command(
      "convert",
      "convert a directory of PNGs to PPM scenes and PGM masks",
      (y) =>
        y
          .option("src", { type: "string", demandOption: true })
          .option("dst", { type: "string", demandOption: true })
          .option("mask-suffix", { type: "string", default: "_gt", describe: "stem suffix marking ground-truth masks" })
          .option("road-color", { type: "string", default: "255,0,255", describe: "RGB bytes meaning road in color masks" }),
      (a) => cmdConvert(a as never),
    )
    .demandCommand(1, "pick a command: export, manifest or convert")
    .help();

  try {
    await parser.parseAsync();
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`usage error: ${err.message}`);
      return 1;
    }
    if (err instanceof ExportError) {
      console.error(`export error: ${err.message}`);
      return 3;
    }
    if (err instanceof FormatError) {
      console.error(`format error: ${err.message}`);
      return 2;
    }
    const code = (err as NodeJS.ErrnoException).code;
    if (code === "ENOENT" || code === "EISDIR" || code === "EACCES" || code === "ENOTDIR") {
      console.error(`file error: ${(err as Error).message}`);
      return 2;
    }
    throw err;
  }
}

const isDirectRun = (() => {
  if (process.argv[1] === undefined) return false;
  try {
    return import.meta.url === pathToFileURL(realpathSync(process.argv[1])).href;
  } catch {
    return false;
  }
})();
if (isDirectRun) {
  process.exit(await main(hideBin(process.argv)));
}
