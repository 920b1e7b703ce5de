// Canvas <-> voxel coordinate mapping. Slices are rendered row-major with a
// uniform zoom factor; voxels map to the centers of their screen cells so
// the round trip voxel -> screen -> voxel is exact at any zoom.

import type { Axis, Triple } from "./api.js";

export interface SliceGeometry {
  axis: Axis;
  index: number; // slice position along the axis
  rows: number;
  cols: number;
  zoom: number; // canvas pixels per voxel
}

// rows/cols of the 2D slice for each axis, in (z, y, x) volume order
export function sliceShape(axis: Axis, dims: Triple): [number, number] {
  if (axis === "z") return [dims[1], dims[2]]; // rows y, cols x
  if (axis === "y") return [dims[0], dims[2]]; // rows z, cols x
  return [dims[0], dims[1]]; // rows z, cols y
}

export function canvasToPlane(
  px: number,
  py: number,
  geo: SliceGeometry,
): [number, number] | null {
  const row = Math.floor(py / geo.zoom);
  const col = Math.floor(px / geo.zoom);
  if (row < 0 || row >= geo.rows || col < 0 || col >= geo.cols) return null;
  return [row, col];
}

export function planeToCanvas(row: number, col: number, geo: SliceGeometry): [number, number] {
  return [(col + 0.5) * geo.zoom, (row + 0.5) * geo.zoom];
}

export function planeToVoxel(row: number, col: number, geo: SliceGeometry): Triple {
  if (geo.axis === "z") return [geo.index, row, col];
  if (geo.axis === "y") return [row, geo.index, col];
  return [row, col, geo.index];
}

export function voxelToPlane(voxel: Triple, geo: SliceGeometry): [number, number] | null {
  if (geo.axis === "z") {
    if (voxel[0] !== geo.index) return null;
    return [voxel[1], voxel[2]];
  }
  if (geo.axis === "y") {
    if (voxel[1] !== geo.index) return null;
    return [voxel[0], voxel[2]];
  }
  if (voxel[2] !== geo.index) return null;
  return [voxel[0], voxel[1]];
}

export function canvasToVoxel(px: number, py: number, geo: SliceGeometry): Triple | null {
  const plane = canvasToPlane(px, py, geo);
  return plane ? planeToVoxel(plane[0], plane[1], geo) : null;
}

export function voxelToCanvas(voxel: Triple, geo: SliceGeometry): [number, number] | null {
  const plane = voxelToPlane(voxel, geo);
  return plane ? planeToCanvas(plane[0], plane[1], geo) : null;
}
