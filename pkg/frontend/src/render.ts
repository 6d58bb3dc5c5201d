/** Canvas scatter rendering: one dot per point, sized by weight, colored by label. */

import { dataToScreen } from "./geometry.js";
import type { AnalysisSnapshot, Camera } from "./types.js";

/**
 * The slice of CanvasRenderingContext2D the renderer needs. Tests substitute
 * a recording stub; the browser passes the real context.
 */
export interface Canvas2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, start: number, end: number): void;
  fill(): void;
}

export const UNLABELED_COLOR = "#b8bcc2";

/** Category colors for label ids; labels cycle when they outnumber the hues. */
export const LABEL_COLORS = [
  "#4e79a7",
  "#f28e2b",
  "#e15759",
  "#76b7b2",
  "#59a14f",
  "#edc948",
  "#b07aa1",
  "#ff9da7",
  "#9c755f",
  "#d37295",
  "#86bcb6",
  "#8c6bb1",
];

export function labelColor(label: number): string {
  return label < 0 ? UNLABELED_COLOR : LABEL_COLORS[label % LABEL_COLORS.length];
}

export interface RenderOptions {
  width: number;
  height: number;
  /** Dot radius in pixels for the heaviest landmark. */
  maxRadius?: number;
  minRadius?: number;
}

export interface RenderStats {
  drawn: number;
}

/**
 * Draw an analysis snapshot. Dot area tracks landmark weight (radius goes with
 * sqrt of the weight, normalized to the heaviest point, so uniform weights
 * give uniform dots). Dots are grouped by fill color into one path per color,
 * which keeps tens of thousands of points at interactive rates.
 *
 * `labels` holds the session's per-row assignments (-1 unlabeled); null means
 * nothing is labeled yet. An analysis without coords clears to blank.
 */
export function render(
  snapshot: AnalysisSnapshot,
  view: { camera: Camera },
  labels: ArrayLike<number> | null,
  ctx: Canvas2DLike,
  options: RenderOptions,
): RenderStats {
  const { width, height } = options;
  const maxRadius = options.maxRadius ?? 4;
  const minRadius = options.minRadius ?? 1.5;
  ctx.clearRect(0, 0, width, height);
  const coords = snapshot.embedding;
  if (coords === null || coords.length === 0) return { drawn: 0 };

  let weightMax = 0;
  for (const p of snapshot.points) {
    if (p.weight > weightMax) weightMax = p.weight;
  }

  const byColor = new Map<string, number[]>();
  for (let i = 0; i < coords.length; i++) {
    const row = snapshot.points[i].row;
    const label = labels === null ? -1 : (labels[row] ?? -1);
    const color = labelColor(label);
    let bucket = byColor.get(color);
    if (bucket === undefined) {
      bucket = [];
      byColor.set(color, bucket);
    }
    bucket.push(i);
  }

  for (const [color, bucket] of byColor) {
    ctx.beginPath();
    for (const i of bucket) {
      const [sx, sy] = dataToScreen(view.camera, coords[i]);
      const w = snapshot.points[i].weight;
      const radius =
        weightMax > 0
          ? Math.max(minRadius, maxRadius * Math.sqrt(w / weightMax))
          : maxRadius;
      ctx.moveTo(sx + radius, sy);
      ctx.arc(sx, sy, radius, 0, Math.PI * 2);
    }
    ctx.fillStyle = color;
    ctx.fill();
  }
  return { drawn: coords.length };
}
