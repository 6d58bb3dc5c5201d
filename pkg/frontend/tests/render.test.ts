import { describe, expect, it } from "vitest";

import { LABEL_COLORS, UNLABELED_COLOR, labelColor, render, type Canvas2DLike } from "../src/render.js";
import type { AnalysisSnapshot, Camera } from "../src/types.js";

interface Dot {
  x: number;
  y: number;
  r: number;
  style: string;
}

/** Records grouped path fills the way the renderer issues them. */
class RecordingCtx implements Canvas2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  cleared: [number, number, number, number][] = [];
  dots: Dot[] = [];
  private pending: { x: number; y: number; r: number }[] = [];

  clearRect(x: number, y: number, w: number, h: number): void {
    this.cleared.push([x, y, w, h]);
  }

  beginPath(): void {
    this.pending = [];
  }

  moveTo(): void {}

  arc(x: number, y: number, r: number): void {
    this.pending.push({ x, y, r });
  }

  fill(): void {
    for (const d of this.pending) this.dots.push({ ...d, style: String(this.fillStyle) });
    this.pending = [];
  }
}

const camera: Camera = { panX: 0, panY: 0, zoom: 1 };

function snapshot(
  coords: [number, number][] | null,
  weights: number[],
  rows?: number[],
): AnalysisSnapshot {
  return {
    analysis_id: "a1",
    session_id: "s1",
    scale: 1,
    n_points: weights.length,
    parent_analysis_id: null,
    embedding_status: coords === null ? "pending" : "ready",
    embedding: coords,
    iteration: 0,
    kl: null,
    converged: coords !== null,
    error: null,
    points: weights.map((w, i) => ({ index: i, row: rows?.[i] ?? i, weight: w })),
  };
}

describe("render", () => {
  it("draws one dot per point", () => {
    const ctx = new RecordingCtx();
    const snap = snapshot(
      [
        [0, 0],
        [5, 5],
        [9, 2],
      ],
      [1, 2, 3],
    );
    const stats = render(snap, { camera }, null, ctx, { width: 100, height: 80 });
    expect(stats.drawn).toBe(3);
    expect(ctx.dots).toHaveLength(3);
    expect(ctx.cleared).toEqual([[0, 0, 100, 80]]);
  });

  it("renders an empty analysis as a blank canvas without crashing", () => {
    const ctx = new RecordingCtx();
    const stats = render(snapshot([], []), { camera }, null, ctx, { width: 60, height: 40 });
    expect(stats.drawn).toBe(0);
    expect(ctx.dots).toHaveLength(0);
    expect(ctx.cleared).toHaveLength(1);
  });

  it("renders a pending embedding (no coords yet) as blank", () => {
    const ctx = new RecordingCtx();
    const stats = render(snapshot(null, [1, 1]), { camera }, null, ctx, {
      width: 60,
      height: 40,
    });
    expect(stats.drawn).toBe(0);
    expect(ctx.dots).toHaveLength(0);
  });

  it("gives uniform weights equal dot sizes and heavier points bigger dots", () => {
    const ctx = new RecordingCtx();
    render(
      snapshot(
        [
          [0, 0],
          [1, 1],
          [2, 2],
        ],
        [1, 1, 1],
      ),
      { camera },
      null,
      ctx,
      { width: 100, height: 100 },
    );
    const radii = new Set(ctx.dots.map((d) => d.r));
    expect(radii.size).toBe(1);

    const ctx2 = new RecordingCtx();
    render(
      snapshot(
        [
          [0, 0],
          [1, 1],
        ],
        [1, 4],
      ),
      { camera },
      null,
      ctx2,
      { width: 100, height: 100 },
    );
    const byX = new Map(ctx2.dots.map((d) => [d.x, d.r]));
    expect(byX.get(1)!).toBeGreaterThan(byX.get(0)!);
  });

  it("colors labeled and unlabeled points distinctly", () => {
    const ctx = new RecordingCtx();
    const snap = snapshot(
      [
        [0, 0],
        [1, 0],
        [2, 0],
      ],
      [1, 1, 1],
      [10, 11, 12],
    );
    const labels = new Array(20).fill(-1);
    labels[11] = 0;
    labels[12] = 3;
    render(snap, { camera }, labels, ctx, { width: 50, height: 50 });
    const styleAt = new Map(ctx.dots.map((d) => [d.x, d.style]));
    expect(styleAt.get(0)).toBe(UNLABELED_COLOR);
    expect(styleAt.get(1)).toBe(LABEL_COLORS[0]);
    expect(styleAt.get(2)).toBe(LABEL_COLORS[3]);
    expect(new Set(styleAt.values()).size).toBe(3);
  });

  it("applies the camera to dot positions", () => {
    const ctx = new RecordingCtx();
    render(snapshot([[2, 3]], [1]), { camera: { panX: 10, panY: 20, zoom: 5 } }, null, ctx, {
      width: 100,
      height: 100,
    });
    expect(ctx.dots[0].x).toBe(2 * 5 + 10);
    expect(ctx.dots[0].y).toBe(3 * 5 + 20);
  });
});

describe("labelColor", () => {
  it("keeps the unlabeled color out of the label palette", () => {
    expect(labelColor(-1)).toBe(UNLABELED_COLOR);
    expect(LABEL_COLORS).not.toContain(UNLABELED_COLOR);
    expect(labelColor(LABEL_COLORS.length)).toBe(LABEL_COLORS[0]);
  });
});
