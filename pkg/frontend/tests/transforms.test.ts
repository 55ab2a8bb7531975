import { describe, expect, it } from "vitest";
import * as THREE from "three";

import { matrixToParams, packParams, paramsToMatrix, roundTripError, unpackParams } from "../src/transforms.js";

const UNIT_CUBE = [0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 1];

function rotationZ(angle: number): number[] {
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  return [c, -s, 0, s, c, 0, 0, 0, 1];
}

describe("wire format transforms", () => {
  it("unit cube maps to the identity transform", () => {
    const m = paramsToMatrix(UNIT_CUBE);
    expect(m.elements).toEqual(new THREE.Matrix4().elements);
  });

  it("pack/unpack are inverses", () => {
    const params = [0.1, -0.2, 0.3, 0.5, 0.25, 0.75, ...rotationZ(0.4)];
    const packed = packParams(unpackParams(params));
    packed.forEach((x, i) => expect(x).toBeCloseTo(params[i], 12));
  });

  it("matrix round trip stays tight for rotated boxes", () => {
    const params = [0.05, 0.1, -0.07, 0.4, 0.2, 0.6, ...rotationZ(Math.PI / 5)];
    expect(roundTripError(params)).toBeLessThan(1e-6);
  });

  it("server orientation lands in the matrix rows unchanged", () => {
    const params = [0, 0, 0, 1, 1, 1, ...rotationZ(Math.PI / 2)];
    const { rotation } = unpackParams(params);
    const e = rotation.elements; // column-major
    expect(e[0]).toBeCloseTo(0, 12); // R[0][0]
    expect(e[1]).toBeCloseTo(1, 12); // R[1][0]
    expect(e[3]).toBeCloseTo(-1, 12); // R[0][1]
  });

  it("rejects malformed vectors", () => {
    expect(() => unpackParams([1, 2, 3])).toThrow(/15/);
  });
});
