/**
 * Minimal reader for .npz archives as numpy writes them: a ZIP container of
 * uncompressed (STORED) .npy members. Enough to pull dense arrays across the
 * process boundary without copying through JSON.
 */

import { PosekitError } from "./errors.js";

export interface NpyArray {
  dtype: string;
  shape: number[];
  /** Raw little-endian buffer of the array body, C-order. */
  data: Buffer;
}

const LOCAL_HEADER_SIG = 0x04034b50;

function parseNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || buf.toString("latin1", 1, 6) !== "NUMPY") {
    throw new PosekitError("not an .npy member");
  }
  const major = buf.readUInt8(6);
  const headerLen = major === 1 ? buf.readUInt16LE(8) : buf.readUInt32LE(8);
  const headerStart = major === 1 ? 10 : 12;
  const header = buf.toString("latin1", headerStart, headerStart + headerLen);
  const descr = /'descr':\s*'([^']+)'/.exec(header);
  const order = /'fortran_order':\s*(True|False)/.exec(header);
  const shapeMatch = /'shape':\s*\(([^)]*)\)/.exec(header);
  if (!descr || !order || !shapeMatch) {
    throw new PosekitError(`unparseable .npy header: ${header}`);
  }
  if (order[1] === "True") {
    throw new PosekitError("fortran-order arrays are not supported");
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));
  return { dtype: descr[1], shape, data: buf.subarray(headerStart + headerLen) };
}

/** Parse every STORED member of an npz archive into named arrays. */
export function readNpz(archive: Buffer): Map<string, NpyArray> {
  const out = new Map<string, NpyArray>();
  let pos = 0;
  while (pos + 30 <= archive.length && archive.readUInt32LE(pos) === LOCAL_HEADER_SIG) {
    const method = archive.readUInt16LE(pos + 8);
    const compSize = archive.readUInt32LE(pos + 18);
    const nameLen = archive.readUInt16LE(pos + 26);
    const extraLen = archive.readUInt16LE(pos + 28);
    const name = archive.toString("utf-8", pos + 30, pos + 30 + nameLen);
    const dataStart = pos + 30 + nameLen + extraLen;
    if (method !== 0) {
      throw new PosekitError(`npz member ${name} is compressed; expected STORED`);
    }
    const body = archive.subarray(dataStart, dataStart + compSize);
    out.set(name.replace(/\.npy$/, ""), parseNpy(body));
    pos = dataStart + compSize;
  }
  if (out.size === 0) {
    throw new PosekitError("no ZIP members found");
  }
  return out;
}

/** Copy into a fresh, zero-offset buffer: zip member bodies are unaligned. */
function aligned(a: NpyArray): ArrayBuffer {
  const bytes = new Uint8Array(a.data.byteLength);
  bytes.set(a.data);
  return bytes.buffer;
}

export function asFloat32(a: NpyArray): Float32Array {
  if (a.dtype !== "<f4") {
    throw new PosekitError(`expected <f4, got ${a.dtype}`);
  }
  return new Float32Array(aligned(a));
}

export function asInt64Values(a: NpyArray): number[] {
  if (a.dtype !== "<i8") {
    throw new PosekitError(`expected <i8, got ${a.dtype}`);
  }
  return Array.from(new BigInt64Array(aligned(a)), (v) => Number(v));
}

export function asBool(a: NpyArray): boolean {
  if (a.dtype !== "|b1") {
    throw new PosekitError(`expected |b1, got ${a.dtype}`);
  }
  return a.data.readUInt8(0) !== 0;
}
