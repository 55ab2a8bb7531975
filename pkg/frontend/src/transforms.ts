/**
 * Pure math bridging the wire format (15 floats: center, sides, row-major
 * orientation) and three.js object transforms. Orientation matrices from the
 * server are treated as ground truth: decomposition back to 15 floats reads
 * the matrix elements directly instead of round-tripping through quaternions.
 */
import * as THREE from "three";

export interface BoxParams {
  center: THREE.Vector3;
  sides: THREE.Vector3;
  rotation: THREE.Matrix3;
}

export function unpackParams(params: number[]): BoxParams {
  if (params.length !== 15) throw new Error(`expected 15 params, got ${params.length}`);
  const center = new THREE.Vector3(params[0], params[1], params[2]);
  const sides = new THREE.Vector3(params[3], params[4], params[5]);
  const rotation = new THREE.Matrix3();
  // wire order is row-major; Matrix3.set takes row-major arguments
  rotation.set(
    params[6], params[7], params[8],
    params[9], params[10], params[11],
    params[12], params[13], params[14],
  );
  return { center, sides, rotation };
}

export function packParams(box: BoxParams): number[] {
  const e = box.rotation.elements; // column-major storage
  return [
    box.center.x, box.center.y, box.center.z,
    box.sides.x, box.sides.y, box.sides.z,
    e[0], e[3], e[6],
    e[1], e[4], e[7],
    e[2], e[5], e[8],
  ];
}

/** Object-space transform for a unit BoxGeometry: translate * rotate * scale. */
export function paramsToMatrix(params: number[]): THREE.Matrix4 {
  const { center, sides, rotation } = unpackParams(params);
  const m = new THREE.Matrix4();
  m.setFromMatrix3(rotation);
  m.scale(sides);
  m.setPosition(center);
  return m;
}

/** Read a mesh's world transform back into wire params (unit-geometry meshes). */
export function matrixToParams(matrix: THREE.Matrix4): number[] {
  const position = new THREE.Vector3();
  const quaternion = new THREE.Quaternion();
  const scale = new THREE.Vector3();
  matrix.decompose(position, quaternion, scale);
  const rot3 = new THREE.Matrix3().setFromMatrix4(new THREE.Matrix4().makeRotationFromQuaternion(quaternion));
  return packParams({ center: position, sides: scale, rotation: rot3 });
}

export function roundTripError(params: number[]): number {
  const back = matrixToParams(paramsToMatrix(params));
  let worst = 0;
  for (let i = 0; i < 15; i++) worst = Math.max(worst, Math.abs(back[i] - params[i]));
  return worst;
}
