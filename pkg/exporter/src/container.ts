/**
 * Weight container codec, byte-compatible with the engine's loader.
 *
 * Layout (all integers little-endian):
 *
 *     magic "RNRT" | version u32 | tensor_count u32
 *     per tensor:
 *         name_len u16 | name UTF-8 | dtype u8 (0=f32, 1=i8, 2=i16) |
 *         scale_exp i8 | ndim u8 | dims u32 * ndim | payload (row-major LE)
 *
 * The writer emits tensors in insertion order, so callers that add tensors
 * deterministically get byte-identical files on every run.
 */
import { FormatError } from "./errors.js";

export type TensorData = Float32Array | Int8Array | Int16Array;

export interface TensorEntry {
  name: string;
  shape: number[];
  data: TensorData;
  scaleExp: number;
}

const MAGIC = Buffer.from("RNRT", "ascii");
const CONTAINER_VERSION = 1;

function dtypeCode(data: TensorData): number {
  if (data instanceof Float32Array) return 0;
  if (data instanceof Int8Array) return 1;
  if (data instanceof Int16Array) return 2;
  throw new FormatError(`unsupported tensor data type ${(data as object).constructor.name}`);
}

function elementCount(shape: number[]): number {
  let n = 1;
  for (const d of shape) {
    if (!Number.isInteger(d) || d < 0 || d > 0xffffffff) {
      throw new FormatError(`bad dimension ${d} in shape [${shape.join(", ")}]`);
    }
    n *= d;
  }
  return n;
}

export function encodeContainer(entries: TensorEntry[]): Buffer {
  const seen = new Set<string>();
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(8);
  header.writeUInt32LE(CONTAINER_VERSION, 0);
  header.writeUInt32LE(entries.length, 4);
  chunks.push(MAGIC, header);

  for (const entry of entries) {
    if (!entry.name) throw new FormatError("tensor names must be non-empty");
    if (seen.has(entry.name)) {
      throw new FormatError(`tensor ${JSON.stringify(entry.name)} already present`);
    }
    seen.add(entry.name);
    const nameBytes = Buffer.from(entry.name, "utf-8");
    if (nameBytes.length > 0xffff) {
      throw new FormatError(`tensor name too long (${nameBytes.length} bytes)`);
    }
    if (!Number.isInteger(entry.scaleExp) || entry.scaleExp < -128 || entry.scaleExp > 127) {
      throw new FormatError(
        `tensor ${JSON.stringify(entry.name)}: scale_exp ${entry.scaleExp} not an i8`,
      );
    }
    if (elementCount(entry.shape) !== entry.data.length) {
      throw new FormatError(
        `tensor ${JSON.stringify(entry.name)}: shape [${entry.shape.join(", ")}] ` +
          `holds ${elementCount(entry.shape)} values, data has ${entry.data.length}`,
      );
    }
    const head = Buffer.alloc(2 + nameBytes.length + 3 + 4 * entry.shape.length);
    let off = 0;
    off = head.writeUInt16LE(nameBytes.length, off);
    off += nameBytes.copy(head, off);
    off = head.writeUInt8(dtypeCode(entry.data), off);
    off = head.writeInt8(entry.scaleExp, off);
    off = head.writeUInt8(entry.shape.length, off);
    for (const d of entry.shape) off = head.writeUInt32LE(d, off);
    chunks.push(head, payloadBytes(entry.data));
  }
  return Buffer.concat(chunks);
}

// TypedArray views carry the platform's byte order; Node only runs
// little-endian in practice, but write explicitly so the format is the
// contract, not the host.
function payloadBytes(data: TensorData): Buffer {
  if (data instanceof Int8Array) {
    return Buffer.from(data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength));
  }
  const out = Buffer.alloc(data.byteLength);
  if (data instanceof Float32Array) {
    for (let i = 0; i < data.length; i++) out.writeFloatLE(data[i], i * 4);
  } else {
    for (let i = 0; i < data.length; i++) out.writeInt16LE(data[i], i * 2);
  }
  return out;
}

export function decodeContainer(blob: Buffer): TensorEntry[] {
  let off = 0;
  const take = (n: number, what: string): Buffer => {
    if (off + n > blob.length) {
      throw new FormatError(`file ends inside ${what} (need ${n} bytes at offset ${off})`);
    }
    const piece = blob.subarray(off, off + n);
    off += n;
    return piece;
  };

  if (!take(4, "magic").equals(MAGIC)) {
    throw new FormatError("not a weight container (bad magic)");
  }
  const version = take(4, "version").readUInt32LE(0);
  if (version !== CONTAINER_VERSION) {
    throw new FormatError(`unsupported container version ${version}`);
  }
  const count = take(4, "tensor count").readUInt32LE(0);
  const entries: TensorEntry[] = [];
  const seen = new Set<string>();
  for (let i = 0; i < count; i++) {
    const nameLen = take(2, "name length").readUInt16LE(0);
    const name = take(nameLen, "name").toString("utf-8");
    if (seen.has(name)) throw new FormatError(`duplicate tensor ${JSON.stringify(name)}`);
    seen.add(name);
    const code = take(1, "dtype").readUInt8(0);
    const scaleExp = take(1, "scale_exp").readInt8(0);
    const ndim = take(1, "ndim").readUInt8(0);
    const shape: number[] = [];
    for (let d = 0; d < ndim; d++) shape.push(take(4, "dims").readUInt32LE(0));
    const n = elementCount(shape);
    let data: TensorData;
    if (code === 0) {
      const raw = take(n * 4, `payload of ${name}`);
      data = new Float32Array(n);
      for (let k = 0; k < n; k++) data[k] = raw.readFloatLE(k * 4);
    } else if (code === 1) {
      const raw = take(n, `payload of ${name}`);
      data = new Int8Array(raw.buffer.slice(raw.byteOffset, raw.byteOffset + n));
    } else if (code === 2) {
      const raw = take(n * 2, `payload of ${name}`);
      data = new Int16Array(n);
      for (let k = 0; k < n; k++) data[k] = raw.readInt16LE(k * 2);
    } else {
      throw new FormatError(`tensor ${JSON.stringify(name)}: unknown dtype code ${code}`);
    }
    entries.push({ name, shape, data, scaleExp });
  }
  if (off !== blob.length) {
    throw new FormatError(`${blob.length - off} trailing bytes after last tensor`);
  }
  return entries;
}
