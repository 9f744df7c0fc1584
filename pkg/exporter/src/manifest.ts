/**
 * Export manifest: which framework layer feeds which container tensors,
 * plus the two conversion constants that are policy rather than data
 * (batch-norm epsilon, resize convention). The file is plain JSON so a
 * user can edit the layer mapping when their training code named things
 * differently; `ignore` silences checkpoint layers nothing consumes.
 */
import { z } from "zod";
import { ExportError, FormatError } from "./errors.js";
import { LayerNeed, tensorNamesFor } from "./graphdoc.js";

export const DEFAULT_BN_EPSILON = 1e-3;

export const BILINEAR_NOTE =
  "resizes sample at half-pixel centers with edge clamping, same as the engine; no convention delta";

const convLayerSchema = z.object({
  kind: z.literal("conv"),
  tensors: z
    .object({ kernel: z.string().min(1), bias: z.string().min(1).optional() })
    .strict(),
});

const bnLayerSchema = z.object({
  kind: z.literal("batchnorm"),
  tensors: z.object({ scale: z.string().min(1), shift: z.string().min(1) }).strict(),
});

const manifestSchema = z.object({
  format: z.literal("rnrt-export-manifest"),
  version: z.literal(1),
  bn_epsilon: z.number().positive(),
  bilinear_note: z.string(),
  layers: z.record(z.discriminatedUnion("kind", [convLayerSchema, bnLayerSchema])),
  ignore: z.array(z.string()).default([]),
});

export type ManifestLayer = z.infer<typeof convLayerSchema> | z.infer<typeof bnLayerSchema>;
export type ExportManifest = z.infer<typeof manifestSchema>;

export function parseManifest(json: unknown): ExportManifest {
  const parsed = manifestSchema.safeParse(json);
  if (!parsed.success) {
    const issue = parsed.error.issues[0];
    throw new FormatError(`not an export manifest: ${issue.path.join(".")}: ${issue.message}`);
  }
  return parsed.data;
}

/** Identity mapping: framework layers named exactly like graph nodes. */
export function defaultManifest(
  needs: LayerNeed[],
  epsilon: number = DEFAULT_BN_EPSILON,
): ExportManifest {
  const layers: Record<string, ManifestLayer> = {};
  for (const need of needs) {
    if (need.kind === "conv") {
      layers[need.node] = {
        kind: "conv",
        tensors: {
          kernel: `${need.node}.weight`,
          ...(need.hasBias ? { bias: `${need.node}.bias` } : {}),
        },
      };
    } else {
      layers[need.node] = {
        kind: "batchnorm",
        tensors: { scale: `${need.node}.scale`, shift: `${need.node}.shift` },
      };
    }
  }
  return {
    format: "rnrt-export-manifest",
    version: 1,
    bn_epsilon: epsilon,
    bilinear_note: BILINEAR_NOTE,
    layers,
    ignore: [],
  };
}

export type ResolvedSources =
  | { kind: "conv"; kernelLayer: string; biasLayer?: string }
  | { kind: "batchnorm"; layer: string };

/**
 * Check the exactly-once invariant and resolve each graph node to the
 * framework layer(s) feeding it. Throws when a required tensor is
 * unmapped, mapped twice, or the mapping targets a tensor no node wants.
 */
export function resolveManifest(
  manifest: ExportManifest,
  needs: LayerNeed[],
): Map<string, ResolvedSources> {
  const producer = new Map<string, { layer: string; key: string; kind: string }>();
  for (const [layerName, entry] of Object.entries(manifest.layers)) {
    for (const [key, target] of Object.entries(entry.tensors)) {
      const prev = producer.get(target);
      if (prev) {
        throw new ExportError(
          `tensor ${JSON.stringify(target)} mapped twice: ` +
            `by layers "${prev.layer}" and "${layerName}"`,
        );
      }
      producer.set(target, { layer: layerName, key, kind: entry.kind });
    }
  }

  const required = new Set<string>();
  for (const need of needs) for (const t of tensorNamesFor(need)) required.add(t);
  const unmapped = [...required].filter((t) => !producer.has(t));
  const surplus = [...producer.keys()].filter((t) => !required.has(t));
  if (unmapped.length || surplus.length) {
    const parts: string[] = [];
    if (unmapped.length) parts.push(`manifest maps no source for: ${unmapped.sort().join(", ")}`);
    if (surplus.length) {
      parts.push(`manifest maps tensors the graph never uses: ${surplus.sort().join(", ")}`);
    }
    throw new ExportError(parts.join("; "));
  }

  const resolved = new Map<string, ResolvedSources>();
  for (const need of needs) {
    if (need.kind === "conv") {
      const kernelSrc = producer.get(`${need.node}.weight`)!;
      if (kernelSrc.kind !== "conv" || kernelSrc.key !== "kernel") {
        throw new ExportError(
          `tensor "${need.node}.weight" must come from a conv kernel, ` +
            `got ${kernelSrc.kind}/${kernelSrc.key} of layer "${kernelSrc.layer}"`,
        );
      }
      let biasLayer: string | undefined;
      if (need.hasBias) {
        const biasSrc = producer.get(`${need.node}.bias`)!;
        if (biasSrc.kind !== "conv" || biasSrc.key !== "bias") {
          throw new ExportError(
            `tensor "${need.node}.bias" must come from a conv bias, ` +
              `got ${biasSrc.kind}/${biasSrc.key} of layer "${biasSrc.layer}"`,
          );
        }
        biasLayer = biasSrc.layer;
      }
      resolved.set(need.node, { kind: "conv", kernelLayer: kernelSrc.layer, biasLayer });
    } else {
      const scaleSrc = producer.get(`${need.node}.scale`)!;
      const shiftSrc = producer.get(`${need.node}.shift`)!;
      if (scaleSrc.kind !== "batchnorm" || shiftSrc.kind !== "batchnorm") {
        throw new ExportError(`node "${need.node}" needs a batchnorm source layer`);
      }
      if (scaleSrc.layer !== shiftSrc.layer) {
        throw new ExportError(
          `node "${need.node}": scale comes from "${scaleSrc.layer}" but shift ` +
            `from "${shiftSrc.layer}"; both must fold from one batch norm`,
        );
      }
      resolved.set(need.node, { kind: "batchnorm", layer: scaleSrc.layer });
    }
  }
  return resolved;
}
