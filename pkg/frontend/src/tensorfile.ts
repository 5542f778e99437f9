/**
 * Bit-exact binary tensor files.
 *
 * Layout: 8-byte magic "TNSR0001", little-endian u32 header length, JSON
 * header {"dtype":"f32"|"u8"|"i32","order":"row-major","shape":[...]} with
 * sorted keys and no whitespace, then the raw little-endian row-major
 * payload. The header bytes are canonical so identical tensors produce
 * identical files.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const MAGIC = "TNSR0001";

export type Dtype = "f32" | "u8" | "i32";

export interface Tensor {
  dtype: Dtype;
  shape: number[];
  /** Row-major values; Float32Array for f32, Uint8Array for u8, Int32Array for i32. */
  data: Float32Array | Uint8Array | Int32Array;
}

const ITEM_SIZE: Record<Dtype, number> = { f32: 4, u8: 1, i32: 4 };

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function headerBytes(dtype: Dtype, shape: number[]): Buffer {
  // Keys sorted, compact separators: the canonical form shared with readers.
  return Buffer.from(
    `{"dtype":"${dtype}","order":"row-major","shape":[${shape.join(",")}]}`,
    "utf-8",
  );
}

export function encodeTensor(t: Tensor): Buffer {
  const n = elementCount(t.shape);
  if (t.data.length !== n) {
    throw new Error(`tensor data length ${t.data.length} != shape product ${n}`);
  }
  const header = headerBytes(t.dtype, t.shape);
  const payload = Buffer.alloc(n * ITEM_SIZE[t.dtype]);
  if (t.dtype === "f32") {
    const d = t.data as Float32Array;
    for (let i = 0; i < n; i++) payload.writeFloatLE(d[i]!, i * 4);
  } else if (t.dtype === "i32") {
    const d = t.data as Int32Array;
    for (let i = 0; i < n; i++) payload.writeInt32LE(d[i]!, i * 4);
  } else {
    payload.set(t.data as Uint8Array);
  }
  const head = Buffer.alloc(12);
  head.write(MAGIC, 0, "ascii");
  head.writeUInt32LE(header.length, 8);
  return Buffer.concat([head, header, payload]);
}

export function writeTensor(path: string, t: Tensor): void {
  writeFileSync(path, encodeTensor(t));
}

export class TensorFormatError extends Error {}

export function decodeTensor(buf: Buffer, name = "<buffer>"): Tensor {
  if (buf.length < 12 || buf.toString("ascii", 0, 8) !== MAGIC) {
    throw new TensorFormatError(`${name}: bad magic`);
  }
  const hlen = buf.readUInt32LE(8);
  if (buf.length < 12 + hlen) {
    throw new TensorFormatError(`${name}: truncated header`);
  }
  let header: unknown;
  try {
    header = JSON.parse(buf.toString("utf-8", 12, 12 + hlen));
  } catch (exc) {
    throw new TensorFormatError(`${name}: unreadable header (${exc})`);
  }
  const h = header as { dtype?: unknown; shape?: unknown };
  const dtype = h.dtype as Dtype;
  const shape = h.shape;
  if (
    !(dtype in ITEM_SIZE) ||
    !Array.isArray(shape) ||
    !shape.every((v) => Number.isInteger(v) && v >= 0)
  ) {
    throw new TensorFormatError(`${name}: bad header fields ${JSON.stringify(header)}`);
  }
  const n = elementCount(shape as number[]);
  const expected = n * ITEM_SIZE[dtype];
  const payload = buf.subarray(12 + hlen);
  if (payload.length !== expected) {
    throw new TensorFormatError(
      `${name}: payload ${payload.length} bytes, expected ${expected}`,
    );
  }
  let data: Tensor["data"];
  if (dtype === "f32") {
    const d = new Float32Array(n);
    for (let i = 0; i < n; i++) d[i] = payload.readFloatLE(i * 4);
    data = d;
  } else if (dtype === "i32") {
    const d = new Int32Array(n);
    for (let i = 0; i < n; i++) d[i] = payload.readInt32LE(i * 4);
    data = d;
  } else {
    data = Uint8Array.from(payload);
  }
  return { dtype, shape: shape as number[], data };
}

export function readTensor(path: string): Tensor {
  return decodeTensor(readFileSync(path), path);
}

/** Parse only the header of a tensor file; used by layout validation. */
export function peekTensorHeader(path: string): { dtype: Dtype; shape: number[] } {
  const t = decodeTensor(readFileSync(path), path);
  return { dtype: t.dtype, shape: t.shape };
}
