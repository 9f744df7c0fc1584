export { FormatError, ExportError } from "./errors.js";
export { encodeContainer, decodeContainer } from "./container.js";
export type { TensorEntry, TensorData } from "./container.js";
export { parseGraphDoc, layerNeeds, tensorNamesFor } from "./graphdoc.js";
export type { GraphDoc, LayerNeed, ConvNeed, BatchNormNeed } from "./graphdoc.js";
export { readCheckpoint } from "./checkpoint.js";
export type { CheckpointLayer, CheckpointTensor } from "./checkpoint.js";
export {
  defaultManifest,
  parseManifest,
  resolveManifest,
  DEFAULT_BN_EPSILON,
  BILINEAR_NOTE,
} from "./manifest.js";
export type { ExportManifest, ManifestLayer } from "./manifest.js";
export { exportCheckpoint, foldBatchNorm } from "./exportckpt.js";
export type { ExportOptions, ExportResult, FoldedBatchNorm } from "./exportckpt.js";
export { encodePpm, encodePgm, decodePnm } from "./pnm.js";
export type { RgbImage, GrayImage } from "./pnm.js";
export { convertPng, convertImages } from "./images.js";
export type { ConvertOptions, ConvertedImage, ConvertReport } from "./images.js";
