import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  decodeTensor,
  encodeTensor,
  readTensor,
  Tensor,
  TensorFormatError,
  writeTensor,
} from "./tensorfile.js";

describe("tensor files", () => {
  it("round-trips every dtype", () => {
    const cases: Tensor[] = [
      { dtype: "f32", shape: [2, 3], data: Float32Array.from([1, -2.5, 3e-8, 0, 7, 1e12]) },
      { dtype: "u8", shape: [4], data: Uint8Array.from([0, 1, 255, 128]) },
      { dtype: "i32", shape: [2, 2], data: Int32Array.from([-7, 0, 123456, -2147483648]) },
    ];
    for (const t of cases) {
      const back = decodeTensor(encodeTensor(t));
      expect(back.dtype).toBe(t.dtype);
      expect(back.shape).toEqual(t.shape);
      expect(Array.from(back.data)).toEqual(Array.from(t.data));
    }
  });

  it("writes a canonical header", () => {
    const buf = encodeTensor({ dtype: "u8", shape: [1, 2], data: Uint8Array.from([3, 4]) });
    expect(buf.toString("ascii", 0, 8)).toBe("TNSR0001");
    const hlen = buf.readUInt32LE(8);
    expect(buf.toString("utf-8", 12, 12 + hlen)).toBe(
      '{"dtype":"u8","order":"row-major","shape":[1,2]}',
    );
  });

  it("is byte-stable across writes", () => {
    const t: Tensor = { dtype: "f32", shape: [3], data: Float32Array.from([1, 2, 3]) };
    expect(encodeTensor(t).equals(encodeTensor(t))).toBe(true);
  });

  it("round-trips through the filesystem", () => {
    const dir = mkdtempSync(join(tmpdir(), "tf-"));
    const t: Tensor = { dtype: "i32", shape: [2, 3], data: Int32Array.from([1, 2, 3, 4, 5, 6]) };
    writeTensor(join(dir, "a.tf"), t);
    expect(Array.from(readTensor(join(dir, "a.tf")).data)).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it("rejects malformed files", () => {
    expect(() => decodeTensor(Buffer.from("NOPE"))).toThrow(TensorFormatError);
    const good = encodeTensor({ dtype: "u8", shape: [2], data: Uint8Array.from([1, 2]) });
    expect(() => decodeTensor(good.subarray(0, good.length - 1))).toThrow(/payload/);
    const badHeader = Buffer.concat([good.subarray(0, 12), Buffer.from("{oops")]);
    badHeader.writeUInt32LE(5, 8);
    expect(() => decodeTensor(badHeader)).toThrow(/header/);
  });

  it("rejects data/shape mismatches on encode", () => {
    expect(() =>
      encodeTensor({ dtype: "u8", shape: [3], data: Uint8Array.from([1]) }),
    ).toThrow(/shape product/);
  });

  it("rejects unsupported dtypes on decode", () => {
    const dir = mkdtempSync(join(tmpdir(), "tf-"));
    const header = Buffer.from('{"dtype":"f64","order":"row-major","shape":[1]}');
    const head = Buffer.alloc(12);
    head.write("TNSR0001", 0, "ascii");
    head.writeUInt32LE(header.length, 8);
    writeFileSync(join(dir, "bad.tf"), Buffer.concat([head, header, Buffer.alloc(8)]));
    expect(() => readTensor(join(dir, "bad.tf"))).toThrow(/bad header fields/);
  });
});
