/** Binary PGM (P5) reading — the interchange format of the upstream tools. */

import { readFileSync } from "node:fs";

export interface PgmImage {
  width: number;
  height: number;
  maxval: number;
  /** Row-major samples; 16-bit PGMs are big-endian per the format. */
  data: Uint16Array;
}

export class PgmFormatError extends Error {}

export function decodePgm(buf: Buffer, name = "<buffer>"): PgmImage {
  // Header: "P5", whitespace-separated width, height, maxval; '#' comments.
  if (buf.length < 2 || buf.toString("ascii", 0, 2) !== "P5") {
    throw new PgmFormatError(`${name}: not a P5 PGM`);
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    if (pos >= buf.length) throw new PgmFormatError(`${name}: truncated header`);
    const c = buf[pos]!;
    if (c === 0x23) {
      // comment to end of line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      pos++;
    } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
      pos++;
    } else {
      let end = pos;
      while (end < buf.length && buf[end]! >= 0x30 && buf[end]! <= 0x39) end++;
      if (end === pos) throw new PgmFormatError(`${name}: bad header token`);
      fields.push(Number(buf.toString("ascii", pos, end)));
      pos = end;
    }
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields as [number, number, number];
  if (maxval <= 0 || maxval > 65535) {
    throw new PgmFormatError(`${name}: maxval ${maxval} out of range`);
  }
  const n = width * height;
  const wide = maxval > 255;
  const expected = n * (wide ? 2 : 1);
  const payload = buf.subarray(pos);
  if (payload.length !== expected) {
    throw new PgmFormatError(
      `${name}: payload ${payload.length} bytes, expected ${expected}`,
    );
  }
  const data = new Uint16Array(n);
  if (wide) {
    for (let i = 0; i < n; i++) data[i] = payload.readUInt16BE(i * 2);
  } else {
    for (let i = 0; i < n; i++) data[i] = payload[i]!;
  }
  return { width, height, maxval, data };
}

export function readPgm(path: string): PgmImage {
  return decodePgm(readFileSync(path), path);
}
