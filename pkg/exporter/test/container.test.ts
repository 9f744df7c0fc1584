import { describe, expect, it } from "vitest";
import { readFileSync } from "fs";
import { fileURLToPath } from "url";
import { encodeContainer, decodeContainer, TensorEntry, TensorData } from "../src/container.js";
import { FormatError } from "../src/errors.js";

const fix = (name: string) => fileURLToPath(new URL(`../fixtures/${name}`, import.meta.url));

interface SampleDoc {
  name: string;
  dtype: string;
  scale_exp: number;
  shape: number[];
  values: number[];
}

function sampleEntries(): TensorEntry[] {
  const doc: SampleDoc[] = JSON.parse(readFileSync(fix("sample.json"), "utf-8"));
  return doc.map((t) => {
    let data: TensorData;
    if (t.dtype === "float32") data = Float32Array.from(t.values);
    else if (t.dtype === "int8") data = Int8Array.from(t.values);
    else if (t.dtype === "int16") data = Int16Array.from(t.values);
    else throw new Error(`fixture dtype ${t.dtype}`);
    return { name: t.name, shape: t.shape, data, scaleExp: t.scale_exp };
  });
}

describe("container byte compatibility with the engine", () => {
  it("encodes the sample tensors to the engine's exact bytes", () => {
    const theirs = readFileSync(fix("sample.rnrt"));
    const ours = encodeContainer(sampleEntries());
    expect(ours.equals(theirs)).toBe(true);
  });

  it("decodes the engine-written sample back to the same values", () => {
    const entries = decodeContainer(readFileSync(fix("sample.rnrt")));
    const expected = sampleEntries();
    expect(entries.length).toBe(expected.length);
    for (let i = 0; i < entries.length; i++) {
      expect(entries[i].name).toBe(expected[i].name);
      expect(entries[i].shape).toEqual(expected[i].shape);
      expect(entries[i].scaleExp).toBe(expected[i].scaleExp);
      expect(Array.from(entries[i].data)).toEqual(Array.from(expected[i].data));
    }
  });
});

describe("container round trip", () => {
  it("write then read preserves all three dtypes", () => {
    const entries: TensorEntry[] = [
      { name: "a", shape: [2, 2], data: Float32Array.from([0.5, -1.25, 3e-40, 1e30]), scaleExp: 0 },
      { name: "b.q", shape: [3], data: Int8Array.from([-128, 0, 127]), scaleExp: -7 },
      { name: "c.q", shape: [1, 2], data: Int16Array.from([-32768, 32767]), scaleExp: 5 },
      { name: "empty", shape: [0], data: new Float32Array(0), scaleExp: 0 },
    ];
    const back = decodeContainer(encodeContainer(entries));
    expect(back.length).toBe(4);
    for (let i = 0; i < entries.length; i++) {
      expect(back[i].name).toBe(entries[i].name);
      expect(back[i].shape).toEqual(entries[i].shape);
      expect(back[i].scaleExp).toBe(entries[i].scaleExp);
      expect(Array.from(back[i].data)).toEqual(Array.from(entries[i].data));
    }
  });

  it("an empty container is exactly the 12-byte header", () => {
    const blob = encodeContainer([]);
    expect(blob.length).toBe(12);
    expect(decodeContainer(blob)).toEqual([]);
  });
});

describe("container guards", () => {
  const one: TensorEntry = { name: "t", shape: [1], data: Float32Array.from([1]), scaleExp: 0 };

  it("rejects duplicate and empty names", () => {
    expect(() => encodeContainer([one, { ...one }])).toThrow(FormatError);
    expect(() => encodeContainer([{ ...one, name: "" }])).toThrow(FormatError);
  });

  it("rejects scale_exp outside i8 and shape/data mismatch", () => {
    expect(() => encodeContainer([{ ...one, scaleExp: 128 }])).toThrow(/scale_exp/);
    expect(() => encodeContainer([{ ...one, shape: [2] }])).toThrow(/holds 2 values/);
  });

  it("rejects bad magic, truncation and trailing bytes", () => {
    const good = encodeContainer([one]);
    expect(() => decodeContainer(Buffer.from("WHAT" + "\0".repeat(8)))).toThrow(/magic/);
    expect(() => decodeContainer(good.subarray(0, good.length - 2))).toThrow(/ends inside/);
    expect(() => decodeContainer(Buffer.concat([good, Buffer.from([0])]))).toThrow(/trailing/);
  });
});
