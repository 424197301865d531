/**
 * Reader/writer for the CGT1 flat binary tensor format produced by the
 * cgkoop pipeline: magic "CGT1", u32 LE rank, rank x u64 LE dims, then a
 * row-major float64 LE payload.  Bit-exact round trips are a contract:
 * the test suite compares re-serialized bytes against the fixture corpus.
 */

import { readFileSync, writeFileSync } from "node:fs";

export interface Tensor {
  dims: number[];
  data: Float64Array;
}

const MAGIC = "CGT1";

export function decodeCgt(buf: Buffer): Tensor {
  if (buf.length < 8 || buf.toString("latin1", 0, 4) !== MAGIC) {
    throw new Error("not a CGT1 tensor (bad magic)");
  }
  const rank = buf.readUInt32LE(4);
  const dims: number[] = [];
  let offset = 8;
  for (let i = 0; i < rank; i++) {
    const dim = buf.readBigUInt64LE(offset);
    if (dim > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new Error(`dimension ${i} too large: ${dim}`);
    }
    dims.push(Number(dim));
    offset += 8;
  }
  const count = dims.reduce((a, b) => a * b, 1);
  if (buf.length !== offset + 8 * count) {
    throw new Error(
      `payload size mismatch: expected ${8 * count} bytes, got ${buf.length - offset}`,
    );
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = buf.readDoubleLE(offset + 8 * i);
  }
  return { dims, data };
}

export function encodeCgt(tensor: Tensor): Buffer {
  const count = tensor.dims.reduce((a, b) => a * b, 1);
  if (count !== tensor.data.length) {
    throw new Error("dims do not match data length");
  }
  const buf = Buffer.alloc(8 + 8 * tensor.dims.length + 8 * count);
  buf.write(MAGIC, 0, "latin1");
  buf.writeUInt32LE(tensor.dims.length, 4);
  let offset = 8;
  for (const dim of tensor.dims) {
    buf.writeBigUInt64LE(BigInt(dim), offset);
    offset += 8;
  }
  for (let i = 0; i < count; i++) {
    buf.writeDoubleLE(tensor.data[i], offset + 8 * i);
  }
  return buf;
}

export function readCgt(path: string): Tensor {
  return decodeCgt(readFileSync(path));
}

export function writeCgt(path: string, tensor: Tensor): void {
  writeFileSync(path, encodeCgt(tensor));
}

/** Row-major element lookup for rank-2/3 tensors. */
export function at(t: Tensor, ...index: number[]): number {
  if (index.length !== t.dims.length) {
    throw new Error(`rank ${t.dims.length} tensor indexed with ${index.length}`);
  }
  let flat = 0;
  for (let i = 0; i < index.length; i++) {
    if (index[i] < 0 || index[i] >= t.dims[i]) {
      throw new Error(`index ${index[i]} out of range for axis ${i}`);
    }
    flat = flat * t.dims[i] + index[i];
  }
  return t.data[flat];
}
