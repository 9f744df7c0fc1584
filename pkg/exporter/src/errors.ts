/** Malformed bytes or documents: bad container, bad PNG, bad manifest JSON. */
export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

/**
 * Semantic export failure. `missing` holds graph-required layers the
 * checkpoint lacks, `extra` holds checkpoint layers nothing consumes;
 * both are sorted so messages are stable.
 */
export class ExportError extends Error {
  readonly missing: string[];
  readonly extra: string[];

  constructor(message: string, missing: string[] = [], extra: string[] = []) {
    super(message);
    this.name = "ExportError";
    this.missing = [...missing].sort();
    this.extra = [...extra].sort();
  }

  static layerMismatch(missing: string[], extra: string[]): ExportError {
    const parts: string[] = [];
    if (missing.length) {
      parts.push(`checkpoint is missing layers: ${[...missing].sort().join(", ")}`);
    }
    if (extra.length) {
      parts.push(`checkpoint has unused layers: ${[...extra].sort().join(", ")}`);
    }
    return new ExportError(parts.join("; "), missing, extra);
  }
}
