/**
 * HDF5 checkpoint reader. Walks every group and collects float datasets,
 * keyed the way Keras lays out `save_weights` files: the dataset's
 * immediate parent group is the layer, the dataset's own name (minus a
 * trailing ":0" variable suffix) is the role, e.g.
 *
 *     /res1_conv1/res1_conv1/kernel:0   -> layer "res1_conv1", role "kernel"
 *     /res1_conv1_bn/.../gamma:0        -> layer "res1_conv1_bn", role "gamma"
 */
import { openSync, readSync, closeSync } from "fs";
import h5wasm from "h5wasm/node";
import { FormatError } from "./errors.js";

export interface CheckpointTensor {
  /** Full HDF5 path, for error messages. */
  path: string;
  shape: number[];
  data: Float32Array;
}

export interface CheckpointLayer {
  name: string;
  /** role -> tensor, e.g. "kernel", "bias", "gamma", "moving_variance". */
  tensors: Map<string, CheckpointTensor>;
}

const HDF5_SIGNATURE = Buffer.from([0x89, 0x48, 0x44, 0x46, 0x0d, 0x0a, 0x1a, 0x0a]);

function sniffSignature(path: string): void {
  const head = Buffer.alloc(8);
  let fd: number;
  try {
    fd = openSync(path, "r");
  } catch (err) {
    throw new FormatError(`cannot open checkpoint ${path}: ${(err as Error).message}`);
  }
  try {
    const n = readSync(fd, head, 0, 8, 0);
    if (n < 8 || !head.equals(HDF5_SIGNATURE)) {
      throw new FormatError(`${path} is not an HDF5 file`);
    }
  } finally {
    closeSync(fd);
  }
}

function roleOf(datasetName: string): string {
  return datasetName.replace(/:\d+$/, "");
}

export async function readCheckpoint(path: string): Promise<Map<string, CheckpointLayer>> {
  sniffSignature(path);
  await h5wasm.ready;
  const file = new h5wasm.File(path, "r");
  try {
    const layers = new Map<string, CheckpointLayer>();
    walk(file, "", layers);
    return layers;
  } finally {
    file.close();
  }
}

interface GroupLike {
  keys(): string[];
  get(name: string): unknown;
}

function walk(group: GroupLike, prefix: string, layers: Map<string, CheckpointLayer>): void {
  for (const key of group.keys()) {
    const child = group.get(key) as GroupLike | DatasetLike;
    const childPath = `${prefix}/${key}`;
    if (isDataset(child)) {
      recordDataset(child, key, prefix, childPath, layers);
    } else if (typeof (child as GroupLike).keys === "function") {
      walk(child as GroupLike, childPath, layers);
    }
  }
}

interface DatasetLike {
  shape: number[];
  dtype: string | object;
  value: unknown;
}

function isDataset(obj: unknown): obj is DatasetLike {
  return !!obj && typeof obj === "object" && "shape" in obj && "dtype" in obj && !("keys" in obj);
}

function recordDataset(
  ds: DatasetLike,
  key: string,
  parentPath: string,
  fullPath: string,
  layers: Map<string, CheckpointLayer>,
): void {
  const dtype = typeof ds.dtype === "string" ? ds.dtype : "";
  // h5wasm reports struct-style codes: "<f" f32, "<d" f64, "<i" i32, "A.." strings.
  // Weights are floats; skip integer bookkeeping and string datasets.
  if (!["<f", "<d", ">f", ">d"].includes(dtype)) return;
  const layerName = parentPath.split("/").filter(Boolean).pop() ?? key;
  const role = roleOf(key);
  let layer = layers.get(layerName);
  if (!layer) {
    layer = { name: layerName, tensors: new Map() };
    layers.set(layerName, layer);
  }
  const existing = layer.tensors.get(role);
  if (existing) {
    throw new FormatError(
      `checkpoint has two "${role}" tensors for layer "${layerName}": ` +
        `${existing.path} and ${fullPath}`,
    );
  }
  const raw = ds.value as Float32Array | Float64Array;
  const data = raw instanceof Float32Array ? raw : Float32Array.from(raw as Float64Array);
  layer.tensors.set(role, { path: fullPath, shape: [...ds.shape], data });
}
