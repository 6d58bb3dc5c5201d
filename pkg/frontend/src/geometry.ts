/** Screen-space geometry: camera transforms, even-odd lasso membership, picking. */

import type { AnalysisSnapshot, Camera } from "./types.js";

export type Vec2 = readonly [number, number];

export function dataToScreen(camera: Camera, p: Vec2): [number, number] {
  return [p[0] * camera.zoom + camera.panX, p[1] * camera.zoom + camera.panY];
}

export function screenToData(camera: Camera, p: Vec2): [number, number] {
  return [(p[0] - camera.panX) / camera.zoom, (p[1] - camera.panY) / camera.zoom];
}

/** Camera zoomed by `factor` about the screen point (sx, sy), which stays fixed. */
export function zoomAt(camera: Camera, sx: number, sy: number, factor: number): Camera {
  const zoom = camera.zoom * factor;
  if (!(zoom > 0) || !Number.isFinite(zoom)) {
    throw new RangeError(`zoom must stay positive and finite, got ${zoom}`);
  }
  return {
    zoom,
    panX: sx - (sx - camera.panX) * factor,
    panY: sy - (sy - camera.panY) * factor,
  };
}

/** Camera that fits all layout coords into a width x height viewport with margin. */
export function fitCamera(
  coords: readonly Vec2[],
  width: number,
  height: number,
  margin = 20,
): Camera {
  if (coords.length === 0) return { panX: width / 2, panY: height / 2, zoom: 1 };
  let minX = Infinity;
  let maxX = -Infinity;
  let minY = Infinity;
  let maxY = -Infinity;
  for (const [x, y] of coords) {
    if (x < minX) minX = x;
    if (x > maxX) maxX = x;
    if (y < minY) minY = y;
    if (y > maxY) maxY = y;
  }
  const spanX = Math.max(maxX - minX, 1e-9);
  const spanY = Math.max(maxY - minY, 1e-9);
  const zoom = Math.min((width - 2 * margin) / spanX, (height - 2 * margin) / spanY);
  return {
    zoom,
    panX: width / 2 - ((minX + maxX) / 2) * zoom,
    panY: height / 2 - ((minY + maxY) / 2) * zoom,
  };
}

/**
 * Even-odd point-in-polygon test.
 *
 * Casts a horizontal ray and flips parity at every crossing edge, so
 * self-intersecting polygons resolve by the even-odd rule: regions enclosed
 * an even number of times count as outside.
 */
export function pointInPolygon(x: number, y: number, polygon: readonly Vec2[]): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const [xi, yi] = polygon[i];
    const [xj, yj] = polygon[j];
    if (yi > y !== yj > y && x < ((xj - xi) * (y - yi)) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

/**
 * Indices of layout points falling inside a screen-space lasso polygon.
 *
 * Points are analysis layout coords; the camera maps them to screen space
 * before the even-odd test, so the selection is exactly what the user sees.
 */
export function lassoSelect(
  coords: readonly Vec2[],
  polygon: readonly Vec2[],
  camera: Camera,
): number[] {
  if (polygon.length < 3) {
    throw new RangeError(`lasso polygon needs at least 3 vertices, got ${polygon.length}`);
  }
  const selected: number[] = [];
  for (let i = 0; i < coords.length; i++) {
    const [sx, sy] = dataToScreen(camera, coords[i]);
    if (pointInPolygon(sx, sy, polygon)) selected.push(i);
  }
  return selected;
}

/** Nearest rendered point within `radius` screen pixels of (sx, sy), for hover. */
export function pickPoint(
  snapshot: AnalysisSnapshot,
  camera: Camera,
  sx: number,
  sy: number,
  radius = 6,
): { index: number; row: number } | null {
  const coords = snapshot.embedding;
  if (coords === null) return null;
  let best = -1;
  let bestD2 = radius * radius;
  for (let i = 0; i < coords.length; i++) {
    const [px, py] = dataToScreen(camera, coords[i]);
    const d2 = (px - sx) * (px - sx) + (py - sy) * (py - sy);
    if (d2 <= bestD2) {
      bestD2 = d2;
      best = i;
    }
  }
  if (best < 0) return null;
  return { index: best, row: snapshot.points[best].row };
}
