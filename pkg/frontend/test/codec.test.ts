import { describe, expect, it } from "vitest";
import { packF64, packI32, unpackBytes } from "../src/index.js";

describe("array codecs", () => {
  it("round-trips float64 payloads", () => {
    const data = new Float64Array([0.5, 1.25, -3.75, 1e-12, 0, 9.5]);
    const payload = packF64(data, 2, 3);
    expect(payload.shape).toEqual([2, 3]);
    const back = new Float64Array(unpackBytes(payload.b64).buffer);
    expect(Array.from(back)).toEqual(Array.from(data));
  });

  it("round-trips int32 payloads", () => {
    const data = new Int32Array([0, 1, -1, 2147483647, -2147483648, 42]);
    const payload = packI32(data, 3, 2);
    const back = new Int32Array(unpackBytes(payload.b64).buffer);
    expect(Array.from(back)).toEqual(Array.from(data));
  });

  it("respects views into a larger buffer", () => {
    const backing = new Int32Array([9, 9, 5, 6, 7, 8, 9, 9]);
    const view = backing.subarray(2, 6);
    const payload = packI32(view, 2, 2);
    const back = new Int32Array(unpackBytes(payload.b64).buffer);
    expect(Array.from(back)).toEqual([5, 6, 7, 8]);
  });

  it("rejects payloads that do not fit the declared shape", () => {
    expect(() => packF64(new Float64Array(5), 2, 3)).toThrow(RangeError);
    expect(() => packI32(new Int32Array(4), 1, 3)).toThrow(RangeError);
  });
});
