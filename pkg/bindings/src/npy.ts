/**
 * Minimal NPY (format version 1.0) reader/writer for dense little-endian
 * arrays. Zero-copy where the payload alignment allows a typed-array view;
 * otherwise the bytes are copied once.
 */

export type NumericArray = Float32Array | Float64Array | Uint8Array | Uint16Array;

export interface NpyArray<T extends NumericArray = NumericArray> {
  data: T;
  shape: number[];
}

const MAGIC = Buffer.from("\x93NUMPY", "latin1");

const DESCR_TO_CTOR: Record<string, new (b: ArrayBuffer, o?: number, n?: number) => NumericArray> = {
  "<f4": Float32Array,
  "<f8": Float64Array,
  "|u1": Uint8Array,
  "<u2": Uint16Array,
};

const CTOR_TO_DESCR = new Map<Function, string>([
  [Float32Array, "<f4"],
  [Float64Array, "<f8"],
  [Uint8Array, "|u1"],
  [Uint16Array, "<u2"],
]);

export function readNpy(buf: Buffer): NpyArray {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error("not an NPY file (bad magic)");
  }
  const major = buf[6];
  if (major !== 1) throw new Error(`unsupported NPY version ${major}`);
  const headerLen = buf.readUInt16LE(8);
  const header = buf.subarray(10, 10 + headerLen).toString("latin1");

  const descr = /'descr'\s*:\s*'([^']+)'/.exec(header)?.[1];
  const fortran = /'fortran_order'\s*:\s*(True|False)/.exec(header)?.[1];
  const shapeText = /'shape'\s*:\s*\(([^)]*)\)/.exec(header)?.[1];
  if (!descr || !fortran || shapeText === undefined) {
    throw new Error(`malformed NPY header: ${header.trim()}`);
  }
  if (fortran === "True") throw new Error("fortran-order NPY not supported");
  const ctor = DESCR_TO_CTOR[descr];
  if (!ctor) throw new Error(`unsupported dtype ${descr}; expected one of ${Object.keys(DESCR_TO_CTOR)}`);

  const shape = shapeText
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));
  const count = shape.reduce((a, b) => a * b, 1);
  const start = 10 + headerLen;
  const bytes = (ctor as unknown as { BYTES_PER_ELEMENT?: number }).BYTES_PER_ELEMENT ?? 8;

  const offset = buf.byteOffset + start;
  let data: NumericArray;
  if (offset % bytes === 0 && !(buf.buffer instanceof SharedArrayBuffer)) {
    data = new ctor(buf.buffer, offset, count); // zero-copy view
  } else {
    const copy = Buffer.alloc(count * bytes);
    buf.copy(copy, 0, start, start + count * bytes);
    data = new ctor(copy.buffer, 0, count);
  }
  return { data, shape };
}

export function writeNpy(array: NumericArray, shape: number[]): Buffer {
  const descr = CTOR_TO_DESCR.get(array.constructor);
  if (!descr) throw new Error("unsupported typed array for NPY output");
  const count = shape.reduce((a, b) => a * b, 1);
  if (count !== array.length) {
    throw new Error(`shape (${shape}) does not match length ${array.length}`);
  }
  const shapeText = shape.length === 1 ? `(${shape[0]},)` : `(${shape.join(", ")})`;
  let header = `{'descr': '${descr}', 'fortran_order': False, 'shape': ${shapeText}, }`;
  const unpadded = 10 + header.length + 1;
  header += " ".repeat((64 - (unpadded % 64)) % 64) + "\n";

  const head = Buffer.alloc(10 + header.length);
  MAGIC.copy(head, 0);
  head[6] = 1;
  head[7] = 0;
  head.writeUInt16LE(header.length, 8);
  head.write(header, 10, "latin1");
  const payload = Buffer.from(array.buffer, array.byteOffset, array.byteLength);
  return Buffer.concat([head, payload]);
}
