/**
 * Minimal pickle reader for benchmark feature archives.
 *
 * Supports the stream subset that CPython (protocols 2 through 5) emits
 * for plain containers of numbers, strings, bytes, and 1-D/2-D numpy
 * arrays: exactly what the public MMEA feature archives contain.  Any
 * construct outside that subset raises PickleError naming the opcode or
 * global symbol instead of guessing.
 */

export class PickleError extends Error {}

export interface NdArray {
  shape: number[];
  dtype: string;
  data: Float64Array;
}

export function isNdArray(value: unknown): value is NdArray {
  return (
    typeof value === "object" &&
    value !== null &&
    "shape" in value &&
    "dtype" in value &&
    (value as NdArray).data instanceof Float64Array
  );
}

// reduce/build intermediates
interface Global {
  kind: "global";
  id: string;
}
interface ArrayStub {
  kind: "array-stub";
  array?: NdArray;
}
interface DType {
  kind: "dtype";
  descr: string;
  byteorder: string;
}

const RECONSTRUCT = new Set([
  "numpy.core.multiarray._reconstruct",
  "numpy._core.multiarray._reconstruct",
]);
const SCALAR = new Set([
  "numpy.core.multiarray.scalar",
  "numpy._core.multiarray.scalar",
]);
const NDARRAY = new Set(["numpy.ndarray", "numpy._core.multiarray.ndarray"]);

function isGlobal(v: unknown, ids: Set<string>): boolean {
  return typeof v === "object" && v !== null && (v as Global).kind === "global" && ids.has((v as Global).id);
}

interface ElementType {
  bytes: number;
  read: (view: DataView, offset: number, little: boolean) => number;
}

// widths and readers for the dtype descriptors the archives use
const ELEMENT_TYPES: Record<string, ElementType> = {
  f4: { bytes: 4, read: (v, o, le) => v.getFloat32(o, le) },
  f8: { bytes: 8, read: (v, o, le) => v.getFloat64(o, le) },
  i1: { bytes: 1, read: (v, o) => v.getInt8(o) },
  u1: { bytes: 1, read: (v, o) => v.getUint8(o) },
  b1: { bytes: 1, read: (v, o) => v.getUint8(o) },
  i2: { bytes: 2, read: (v, o, le) => v.getInt16(o, le) },
  u2: { bytes: 2, read: (v, o, le) => v.getUint16(o, le) },
  i4: { bytes: 4, read: (v, o, le) => v.getInt32(o, le) },
  u4: { bytes: 4, read: (v, o, le) => v.getUint32(o, le) },
  i8: {
    bytes: 8,
    read: (v, o, le) => {
      const big = v.getBigInt64(o, le);
      if (big > BigInt(Number.MAX_SAFE_INTEGER) || big < -BigInt(Number.MAX_SAFE_INTEGER)) {
        throw new PickleError(`int64 value ${big} exceeds the safe number range`);
      }
      return Number(big);
    },
  },
};

function decodeElements(dtype: DType, raw: Uint8Array, count: number): Float64Array {
  const spec = ELEMENT_TYPES[dtype.descr];
  if (spec === undefined) {
    throw new PickleError(`unsupported array dtype ${JSON.stringify(dtype.descr)}`);
  }
  if (raw.byteLength !== count * spec.bytes) {
    throw new PickleError(
      `array payload is ${raw.byteLength} bytes, expected ${count * spec.bytes} for dtype ${dtype.descr}`,
    );
  }
  const little = dtype.byteorder !== ">";
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = spec.read(view, i * spec.bytes, little);
  }
  return out;
}

class Reader {
  private pos = 0;
  constructor(private readonly buf: Buffer) {}

  done(): boolean {
    return this.pos >= this.buf.length;
  }

  u8(): number {
    if (this.pos + 1 > this.buf.length) throw new PickleError("truncated stream");
    return this.buf.readUInt8(this.pos++);
  }

  bytes(n: number): Uint8Array {
    if (this.pos + n > this.buf.length) throw new PickleError("truncated stream");
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u16(): number {
    const b = this.bytes(2);
    return b[0]! | (b[1]! << 8);
  }

  u32(): number {
    const b = this.bytes(4);
    return (b[0]! | (b[1]! << 8) | (b[2]! << 16)) + b[3]! * 0x1000000;
  }

  i32(): number {
    const v = this.u32();
    return v >= 0x80000000 ? v - 0x100000000 : v;
  }

  u64(): number {
    const lo = this.u32();
    const hi = this.u32();
    if (hi >= 0x200000) throw new PickleError("64-bit length exceeds the safe number range");
    return hi * 0x100000000 + lo;
  }

  f64be(): number {
    const b = this.bytes(8);
    return new DataView(b.buffer, b.byteOffset, 8).getFloat64(0, false);
  }

  line(): string {
    const end = this.buf.indexOf(0x0a, this.pos);
    if (end < 0) throw new PickleError("unterminated text line");
    const s = this.buf.toString("latin1", this.pos, end);
    this.pos = end + 1;
    return s;
  }

  utf8(n: number): string {
    return Buffer.from(this.bytes(n)).toString("utf8");
  }
}

// little-endian two's complement, as written by LONG1/LONG4
function decodeLong(raw: Uint8Array): number {
  if (raw.length === 0) return 0;
  let value = 0n;
  for (let i = raw.length - 1; i >= 0; i--) {
    value = (value << 8n) | BigInt(raw[i]!);
  }
  if (raw[raw.length - 1]! >= 0x80) {
    value -= 1n << BigInt(8 * raw.length);
  }
  if (value > BigInt(Number.MAX_SAFE_INTEGER) || value < -BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new PickleError(`integer ${value} exceeds the safe number range`);
  }
  return Number(value);
}

export function loadPickle(buf: Buffer): unknown {
  const r = new Reader(buf);
  const stack: unknown[] = [];
  const marks: number[] = [];
  const memo = new Map<number, unknown>();

  const pop = (): unknown => {
    if (stack.length === 0) throw new PickleError("stack underflow");
    return stack.pop();
  };
  const popMark = (): unknown[] => {
    const mark = marks.pop();
    if (mark === undefined) throw new PickleError("no open mark");
    return stack.splice(mark);
  };
  const memoGet = (idx: number): unknown => {
    if (!memo.has(idx)) throw new PickleError(`memo slot ${idx} never filled`);
    return memo.get(idx);
  };

  const reduce = (callable: unknown, args: unknown[]): unknown => {
    if (typeof callable !== "object" || callable === null || (callable as Global).kind !== "global") {
      throw new PickleError("REDUCE on a non-global callable");
    }
    const id = (callable as Global).id;
    if (RECONSTRUCT.has(id)) {
      const stub: ArrayStub = { kind: "array-stub" };
      return stub;
    }
    if (id === "numpy.dtype") {
      if (typeof args[0] !== "string") throw new PickleError("numpy.dtype without a descriptor string");
      let descr = args[0];
      let byteorder = "=";
      if (descr.length > 0 && "<>|=".includes(descr[0]!)) {
        byteorder = descr[0]!;
        descr = descr.slice(1);
      }
      const dtype: DType = { kind: "dtype", descr, byteorder };
      return dtype;
    }
    if (SCALAR.has(id)) {
      const [dtype, raw] = args;
      if (
        typeof dtype !== "object" || dtype === null || (dtype as DType).kind !== "dtype" ||
        !(raw instanceof Uint8Array)
      ) {
        throw new PickleError("malformed numpy scalar");
      }
      return decodeElements(dtype as DType, raw, 1)[0];
    }
    if (id === "collections.OrderedDict") {
      return new Map<unknown, unknown>();
    }
    if (id === "numpy.core.numeric._frombuffer" || id === "numpy._core.numeric._frombuffer") {
      // protocol 5 arrays arrive fully formed, no BUILD step
      const [data, dtype, shape, order] = args;
      if (
        !(data instanceof Uint8Array) ||
        typeof dtype !== "object" || dtype === null || (dtype as DType).kind !== "dtype" ||
        !Array.isArray(shape) || shape.some((d) => typeof d !== "number")
      ) {
        throw new PickleError("malformed _frombuffer arguments");
      }
      const dims = shape as number[];
      if (order === "F" && dims.length > 1) {
        throw new PickleError("fortran-ordered arrays are not supported");
      }
      const count = dims.reduce((a, b) => a * b, 1);
      const array: NdArray = {
        shape: dims,
        dtype: (dtype as DType).descr,
        data: decodeElements(dtype as DType, data, count),
      };
      return array;
    }
    if (id === "_codecs.encode") {
      // protocol 2 has no bytes opcode; bytes round-trip as latin-1 text
      const [text, encoding] = args;
      if (typeof text !== "string" || (encoding !== "latin1" && encoding !== "latin-1")) {
        throw new PickleError("unsupported _codecs.encode arguments");
      }
      return Uint8Array.from(Buffer.from(text, "latin1"));
    }
    throw new PickleError(`unsupported pickle global ${id}`);
  };

  const build = (obj: unknown, state: unknown): unknown => {
    if (typeof obj === "object" && obj !== null && (obj as ArrayStub).kind === "array-stub") {
      if (!Array.isArray(state) || state.length !== 5) {
        throw new PickleError("unexpected ndarray state layout");
      }
      const [, shape, dtype, fortran, data] = state as [unknown, unknown, DType, unknown, unknown];
      if (!Array.isArray(shape) || shape.some((d) => typeof d !== "number")) {
        throw new PickleError("ndarray shape is not a tuple of ints");
      }
      if (typeof dtype !== "object" || dtype === null || dtype.kind !== "dtype") {
        throw new PickleError("ndarray state carries no dtype");
      }
      const dims = shape as number[];
      const count = dims.reduce((a, b) => a * b, 1);
      if (fortran === true && dims.length > 1) {
        throw new PickleError("fortran-ordered arrays are not supported");
      }
      let values: Float64Array;
      if (data instanceof Uint8Array) {
        values = decodeElements(dtype, data, count);
      } else if (Array.isArray(data)) {
        // object arrays pickle their payload as a list
        if (data.some((v) => typeof v !== "number")) {
          throw new PickleError("ndarray list payload holds non-numbers");
        }
        values = Float64Array.from(data as number[]);
      } else {
        throw new PickleError("ndarray payload is neither bytes nor a list");
      }
      const array: NdArray = { shape: dims, dtype: dtype.descr, data: values };
      (obj as ArrayStub).array = array;
      return array;
    }
    if (typeof obj === "object" && obj !== null && (obj as DType).kind === "dtype") {
      if (Array.isArray(state) && typeof state[1] === "string") {
        (obj as DType).byteorder = state[1];
      }
      return obj;
    }
    if (obj instanceof Map && state instanceof Map) {
      for (const [k, v] of state) obj.set(k, v);
      return obj;
    }
    throw new PickleError("BUILD on an unsupported object");
  };

  // stubs get replaced by their BUILD result wherever they were stored
  const resolve = (v: unknown): unknown =>
    typeof v === "object" && v !== null && (v as ArrayStub).kind === "array-stub" && (v as ArrayStub).array
      ? (v as ArrayStub).array
      : v;

  for (;;) {
    if (r.done()) throw new PickleError("stream ended before STOP");
    const op = r.u8();
    switch (op) {
      case 0x80: // PROTO
        r.u8();
        break;
      case 0x95: // FRAME
        r.u64();
        break;
      case 0x2e: { // STOP
        const result = pop();
        return deepResolve(resolve(result));
      }
      case 0x28: // MARK
        marks.push(stack.length);
        break;
      case 0x30: // POP
        pop();
        break;
      case 0x32: // DUP
        stack.push(stack[stack.length - 1]);
        break;
      case 0x4e: // NONE
        stack.push(null);
        break;
      case 0x88: // NEWTRUE
        stack.push(true);
        break;
      case 0x89: // NEWFALSE
        stack.push(false);
        break;
      case 0x4a: // BININT
        stack.push(r.i32());
        break;
      case 0x4b: // BININT1
        stack.push(r.u8());
        break;
      case 0x4d: // BININT2
        stack.push(r.u16());
        break;
      case 0x8a: // LONG1
        stack.push(decodeLong(r.bytes(r.u8())));
        break;
      case 0x8b: // LONG4
        stack.push(decodeLong(r.bytes(r.u32())));
        break;
      case 0x47: // BINFLOAT
        stack.push(r.f64be());
        break;
      case 0x43: // SHORT_BINBYTES
        stack.push(r.bytes(r.u8()));
        break;
      case 0x42: // BINBYTES
        stack.push(r.bytes(r.u32()));
        break;
      case 0x8e: // BINBYTES8
        stack.push(r.bytes(r.u64()));
        break;
      case 0x96: // BYTEARRAY8
        stack.push(r.bytes(r.u64()));
        break;
      case 0x8c: // SHORT_BINUNICODE
        stack.push(r.utf8(r.u8()));
        break;
      case 0x58: // BINUNICODE
        stack.push(r.utf8(r.u32()));
        break;
      case 0x8d: // BINUNICODE8
        stack.push(r.utf8(r.u64()));
        break;
      case 0x5d: // EMPTY_LIST
        stack.push([]);
        break;
      case 0x61: { // APPEND
        const item = pop();
        const list = stack[stack.length - 1];
        if (!Array.isArray(list)) throw new PickleError("APPEND to a non-list");
        list.push(resolve(item));
        break;
      }
      case 0x65: { // APPENDS
        const items = popMark();
        const list = stack[stack.length - 1];
        if (!Array.isArray(list)) throw new PickleError("APPENDS to a non-list");
        for (const item of items) list.push(resolve(item));
        break;
      }
      case 0x7d: // EMPTY_DICT
        stack.push(new Map<unknown, unknown>());
        break;
      case 0x73: { // SETITEM
        const value = pop();
        const key = pop();
        const dict = stack[stack.length - 1];
        if (!(dict instanceof Map)) throw new PickleError("SETITEM on a non-dict");
        dict.set(resolve(key), resolve(value));
        break;
      }
      case 0x75: { // SETITEMS
        const items = popMark();
        const dict = stack[stack.length - 1];
        if (!(dict instanceof Map)) throw new PickleError("SETITEMS on a non-dict");
        for (let i = 0; i + 1 < items.length; i += 2) {
          dict.set(resolve(items[i]), resolve(items[i + 1]));
        }
        break;
      }
      case 0x8f: // EMPTY_SET
        stack.push(new Set<unknown>());
        break;
      case 0x90: { // ADDITEMS
        const items = popMark();
        const set = stack[stack.length - 1];
        if (!(set instanceof Set)) throw new PickleError("ADDITEMS to a non-set");
        for (const item of items) set.add(resolve(item));
        break;
      }
      case 0x29: // EMPTY_TUPLE
        stack.push([]);
        break;
      case 0x85: // TUPLE1
        stack.push([pop()]);
        break;
      case 0x86: { // TUPLE2
        const b = pop();
        const a = pop();
        stack.push([a, b]);
        break;
      }
      case 0x87: { // TUPLE3
        const c = pop();
        const b = pop();
        const a = pop();
        stack.push([a, b, c]);
        break;
      }
      case 0x74: // TUPLE
        stack.push(popMark());
        break;
      case 0x71: // BINPUT
        memo.set(r.u8(), stack[stack.length - 1]);
        break;
      case 0x72: // LONG_BINPUT
        memo.set(r.u32(), stack[stack.length - 1]);
        break;
      case 0x94: // MEMOIZE
        memo.set(memo.size, stack[stack.length - 1]);
        break;
      case 0x68: // BINGET
        stack.push(resolve(memoGet(r.u8())));
        break;
      case 0x6a: // LONG_BINGET
        stack.push(resolve(memoGet(r.u32())));
        break;
      case 0x63: { // GLOBAL
        const module = r.line();
        const name = r.line();
        const g: Global = { kind: "global", id: `${module}.${name}` };
        stack.push(g);
        break;
      }
      case 0x93: { // STACK_GLOBAL
        const name = pop();
        const module = pop();
        if (typeof module !== "string" || typeof name !== "string") {
          throw new PickleError("STACK_GLOBAL with non-string parts");
        }
        const g: Global = { kind: "global", id: `${module}.${name}` };
        stack.push(g);
        break;
      }
      case 0x52: { // REDUCE
        const args = pop();
        const callable = pop();
        if (!Array.isArray(args)) throw new PickleError("REDUCE args are not a tuple");
        stack.push(reduce(callable, args));
        break;
      }
      case 0x81: { // NEWOBJ
        const args = pop();
        const cls = pop();
        if (!Array.isArray(args)) throw new PickleError("NEWOBJ args are not a tuple");
        if (isGlobal(cls, NDARRAY)) {
          const stub: ArrayStub = { kind: "array-stub" };
          stack.push(stub);
          break;
        }
        stack.push(reduce(cls, args));
        break;
      }
      case 0x62: { // BUILD
        const state = pop();
        const obj = pop();
        stack.push(build(obj, state));
        break;
      }
      default:
        throw new PickleError(`unsupported pickle opcode 0x${op.toString(16).padStart(2, "0")}`);
    }
  }
}

// containers may hold stubs that were only completed by a later BUILD
function deepResolve(value: unknown): unknown {
  if (typeof value === "object" && value !== null && (value as ArrayStub).kind === "array-stub") {
    const stub = value as ArrayStub;
    if (!stub.array) throw new PickleError("ndarray was never given its state");
    return stub.array;
  }
  if (Array.isArray(value)) {
    for (let i = 0; i < value.length; i++) value[i] = deepResolve(value[i]);
    return value;
  }
  if (value instanceof Map) {
    for (const [k, v] of value) value.set(k, deepResolve(v));
    return value;
  }
  return value;
}
