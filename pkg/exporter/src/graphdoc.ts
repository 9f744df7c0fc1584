/**
 * Reader for the engine's graph JSON ("rnrt-graph" version 1), plus the
 * weight inventory an export must cover: convolutions want
 * `<node>.weight` (and `<node>.bias` when flagged), batch norms want
 * `<node>.scale` and `<node>.shift`.
 */
import { z } from "zod";
import { FormatError } from "./errors.js";

const nodeSchema = z
  .object({
    name: z.string().min(1),
    kind: z.string(),
    inputs: z.array(z.string()),
    kernel: z.number().int().optional(),
    out_channels: z.number().int().optional(),
    stride: z.number().int().optional(),
    dilation: z.number().int().optional(),
    mode: z.string().optional(),
    has_bias: z.boolean().optional(),
    scale: z.number().optional(),
  })
  .passthrough();

const graphDocSchema = z
  .object({
    format: z.literal("rnrt-graph"),
    version: z.literal(1),
    inputs: z
      .array(z.object({ name: z.string().min(1), dims: z.array(z.number().int()).length(3) }).passthrough())
      .min(1),
    outputs: z.array(z.string()).min(1),
    nodes: z.array(nodeSchema),
  })
  .passthrough();

export type GraphNode = z.infer<typeof nodeSchema>;
export type GraphDoc = z.infer<typeof graphDocSchema>;

export function parseGraphDoc(json: unknown): GraphDoc {
  const parsed = graphDocSchema.safeParse(json);
  if (!parsed.success) {
    const issue = parsed.error.issues[0];
    throw new FormatError(`not a graph document: ${issue.path.join(".")}: ${issue.message}`);
  }
  return parsed.data;
}

export interface ConvNeed {
  kind: "conv";
  node: string;
  kernel: number;
  inChannels: number;
  outChannels: number;
  mode: string;
  hasBias: boolean;
}

export interface BatchNormNeed {
  kind: "batchnorm";
  node: string;
  channels: number;
}

export type LayerNeed = ConvNeed | BatchNormNeed;

const PASSTHROUGH = new Set(["ReLU", "Sigmoid", "GlobalAvgPool", "BilinearResize", "BatchNorm"]);

/**
 * Channel count per value name. Spatial dims are the engine's business;
 * channels alone pin every weight shape this tool has to produce.
 */
function inferChannels(doc: GraphDoc): Map<string, number> {
  const channels = new Map<string, number>();
  for (const port of doc.inputs) channels.set(port.name, port.dims[2]);

  const pending = [...doc.nodes];
  while (pending.length) {
    const before = pending.length;
    for (let i = 0; i < pending.length; ) {
      const node = pending[i];
      const ins = node.inputs.map((ref) => channels.get(ref));
      if (ins.some((c) => c === undefined)) {
        i++;
        continue;
      }
      channels.set(node.name, nodeChannels(node, ins as number[]));
      pending.splice(i, 1);
    }
    if (pending.length === before) {
      const stuck = pending.map((n) => n.name).sort();
      throw new FormatError(`graph has unresolvable node inputs: ${stuck.join(", ")}`);
    }
  }
  return channels;
}

function nodeChannels(node: GraphNode, ins: number[]): number {
  if (node.kind === "Conv2D") {
    // out_channels omitted marks a depthwise conv: channels pass through
    return node.out_channels ?? ins[0];
  }
  if (PASSTHROUGH.has(node.kind)) return ins[0];
  if (node.kind === "ElemAdd" || node.kind === "ElemMul") return ins[0];
  if (node.kind === "Concat") return ins.reduce((a, b) => a + b, 0);
  throw new FormatError(`node ${JSON.stringify(node.name)}: unknown kind ${JSON.stringify(node.kind)}`);
}

/** Weight-bearing nodes in document order. */
export function layerNeeds(doc: GraphDoc): LayerNeed[] {
  const channels = inferChannels(doc);
  const needs: LayerNeed[] = [];
  for (const node of doc.nodes) {
    if (node.kind === "Conv2D") {
      if (node.kernel === undefined) {
        throw new FormatError(`conv ${JSON.stringify(node.name)} has no kernel size`);
      }
      const inC = channels.get(node.inputs[0]);
      if (inC === undefined) throw new FormatError(`conv ${JSON.stringify(node.name)} has no input`);
      needs.push({
        kind: "conv",
        node: node.name,
        kernel: node.kernel,
        inChannels: inC,
        outChannels: node.out_channels ?? inC,
        mode: node.mode ?? "standard",
        hasBias: node.has_bias ?? false,
      });
    } else if (node.kind === "BatchNorm") {
      const c = channels.get(node.inputs[0]);
      if (c === undefined) throw new FormatError(`batchnorm ${JSON.stringify(node.name)} has no input`);
      needs.push({ kind: "batchnorm", node: node.name, channels: c });
    }
  }
  return needs;
}

/** Container tensor names a layer produces, in container order. */
export function tensorNamesFor(need: LayerNeed): string[] {
  if (need.kind === "conv") {
    return need.hasBias ? [`${need.node}.weight`, `${need.node}.bias`] : [`${need.node}.weight`];
  }
  return [`${need.node}.scale`, `${need.node}.shift`];
}
