/**
 * Checkpoint -> weight container conversion.
 *
 * Convolution kernels pass through unchanged (the checkpoint's HWIO layout
 * is the engine's layout). Batch norms fold to the engine's per-channel
 * affine form:
 *
 *     scale = gamma / sqrt(variance + epsilon)
 *     shift = beta - mean * scale
 *
 * computed per channel in double precision and rounded once to float32.
 */
import { ExportError } from "./errors.js";
import { encodeContainer, TensorEntry } from "./container.js";
import { parseGraphDoc, layerNeeds, ConvNeed, BatchNormNeed } from "./graphdoc.js";
import { readCheckpoint, CheckpointLayer, CheckpointTensor } from "./checkpoint.js";
import {
  defaultManifest,
  resolveManifest,
  ExportManifest,
  DEFAULT_BN_EPSILON,
} from "./manifest.js";

export interface FoldedBatchNorm {
  scale: Float32Array;
  shift: Float32Array;
}

export function foldBatchNorm(
  gamma: Float32Array,
  beta: Float32Array,
  mean: Float32Array,
  variance: Float32Array,
  epsilon: number,
): FoldedBatchNorm {
  const n = gamma.length;
  if (beta.length !== n || mean.length !== n || variance.length !== n) {
    throw new ExportError(
      `batch norm tensors disagree on channel count: ` +
        `gamma ${gamma.length}, beta ${beta.length}, mean ${mean.length}, variance ${variance.length}`,
    );
  }
  const scale = new Float32Array(n);
  const shift = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const s = gamma[i] / Math.sqrt(variance[i] + epsilon);
    scale[i] = Math.fround(s);
    shift[i] = Math.fround(beta[i] - mean[i] * scale[i]);
  }
  return { scale, shift };
}

export interface ExportOptions {
  ckptPath: string;
  /** Parsed graph JSON (the engine's "rnrt-graph" document). */
  graphDoc: unknown;
  /** Explicit manifest; omitted means identity naming. */
  manifest?: ExportManifest;
  /** BN epsilon for the derived default manifest. */
  epsilon?: number;
}

export interface ExportResult {
  container: Buffer;
  /** The manifest actually applied; written next to the container as a record. */
  manifest: ExportManifest;
  tensorNames: string[];
}

export async function exportCheckpoint(opts: ExportOptions): Promise<ExportResult> {
  const doc = parseGraphDoc(opts.graphDoc);
  const needs = layerNeeds(doc);
  const manifest = opts.manifest ?? defaultManifest(needs, opts.epsilon ?? DEFAULT_BN_EPSILON);
  const resolved = resolveManifest(manifest, needs);
  const checkpoint = await readCheckpoint(opts.ckptPath);

  const wanted = new Set<string>();
  for (const src of resolved.values()) {
    if (src.kind === "conv") {
      wanted.add(src.kernelLayer);
      if (src.biasLayer) wanted.add(src.biasLayer);
    } else {
      wanted.add(src.layer);
    }
  }
  const missing = [...wanted].filter((name) => !checkpoint.has(name));
  const silenced = new Set(manifest.ignore);
  const extra = [...checkpoint.keys()].filter((name) => !wanted.has(name) && !silenced.has(name));
  if (missing.length || extra.length) {
    throw ExportError.layerMismatch(missing, extra);
  }

  const entries: TensorEntry[] = [];
  for (const need of needs) {
    const src = resolved.get(need.node)!;
    if (need.kind === "conv" && src.kind === "conv") {
      entries.push(...convEntries(need, src.kernelLayer, src.biasLayer, checkpoint));
    } else if (need.kind === "batchnorm" && src.kind === "batchnorm") {
      entries.push(...bnEntries(need, checkpoint.get(src.layer)!, manifest.bn_epsilon));
    }
  }
  return {
    container: encodeContainer(entries),
    manifest,
    tensorNames: entries.map((e) => e.name),
  };
}

function pickTensor(layer: CheckpointLayer, roles: string[], node: string): CheckpointTensor {
  for (const role of roles) {
    const t = layer.tensors.get(role);
    if (t) return t;
  }
  const have = [...layer.tensors.keys()].sort().join(", ") || "none";
  throw new ExportError(
    `layer "${layer.name}" (for node "${node}") has no ${roles[0]} tensor; found: ${have}`,
  );
}

function shapesEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((d, i) => d === b[i]);
}

function convEntries(
  need: ConvNeed,
  kernelLayer: string,
  biasLayer: string | undefined,
  checkpoint: Map<string, CheckpointLayer>,
): TensorEntry[] {
  const layer = checkpoint.get(kernelLayer)!;
  const kernel = pickTensor(layer, ["kernel", "depthwise_kernel"], need.node);
  const k = need.kernel;
  let shape = kernel.shape;
  let data = kernel.data;
  if (need.mode === "depthwise") {
    // frameworks store depthwise kernels as (k, k, c, 1); the engine wants (k, k, c)
    if (shapesEqual(shape, [k, k, need.inChannels, 1])) shape = [k, k, need.inChannels];
    if (!shapesEqual(shape, [k, k, need.inChannels])) {
      throw new ExportError(
        `node "${need.node}": depthwise kernel from "${kernelLayer}" has shape ` +
          `[${kernel.shape.join(", ")}], expected [${k}, ${k}, ${need.inChannels}]`,
      );
    }
  } else if (!shapesEqual(shape, [k, k, need.inChannels, need.outChannels])) {
    throw new ExportError(
      `node "${need.node}": kernel from "${kernelLayer}" has shape ` +
        `[${kernel.shape.join(", ")}], expected [${k}, ${k}, ${need.inChannels}, ${need.outChannels}]`,
    );
  }
  const out: TensorEntry[] = [
    { name: `${need.node}.weight`, shape, data: Float32Array.from(data), scaleExp: 0 },
  ];
  if (need.hasBias) {
    const bias = pickTensor(checkpoint.get(biasLayer!)!, ["bias"], need.node);
    if (!shapesEqual(bias.shape, [need.outChannels])) {
      throw new ExportError(
        `node "${need.node}": bias from "${biasLayer}" has shape ` +
          `[${bias.shape.join(", ")}], expected [${need.outChannels}]`,
      );
    }
    out.push({
      name: `${need.node}.bias`,
      shape: bias.shape,
      data: Float32Array.from(bias.data),
      scaleExp: 0,
    });
  }
  return out;
}

function bnEntries(
  need: BatchNormNeed,
  layer: CheckpointLayer,
  epsilon: number,
): TensorEntry[] {
  const gamma = pickTensor(layer, ["gamma"], need.node);
  const beta = pickTensor(layer, ["beta"], need.node);
  const mean = pickTensor(layer, ["moving_mean"], need.node);
  const variance = pickTensor(layer, ["moving_variance"], need.node);
  for (const [what, t] of [
    ["gamma", gamma],
    ["beta", beta],
    ["moving_mean", mean],
    ["moving_variance", variance],
  ] as const) {
    if (!shapesEqual(t.shape, [need.channels])) {
      throw new ExportError(
        `node "${need.node}": ${what} from "${layer.name}" has shape ` +
          `[${t.shape.join(", ")}], expected [${need.channels}]`,
      );
    }
  }
  const folded = foldBatchNorm(gamma.data, beta.data, mean.data, variance.data, epsilon);
  return [
    { name: `${need.node}.scale`, shape: [need.channels], data: folded.scale, scaleExp: 0 },
    { name: `${need.node}.shift`, shape: [need.channels], data: folded.shift, scaleExp: 0 },
  ];
}
