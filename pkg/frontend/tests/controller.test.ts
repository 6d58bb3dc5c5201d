import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import type { AnalysisSnapshot, SessionInfo } from "../src/index.js";

const INFO: SessionInfo = {
  session_id: "s1",
  hierarchy_id: "h1",
  dataset_id: "d1",
  root_analysis_id: "a1",
  scale: 1,
  n_points: 4,
};

const NAMES = ["Background", "Action01", "Action02"];

function rootSnapshot(): AnalysisSnapshot {
  return {
    analysis_id: "a1",
    session_id: "s1",
    scale: 1,
    n_points: 4,
    parent_analysis_id: null,
    embedding_status: "ready",
    embedding: [
      [0, 0],
      [10, 0],
      [0, 10],
      [10, 10],
    ],
    iteration: 50,
    kl: 0.5,
    converged: true,
    error: null,
    points: [0, 1, 2, 3].map((i) => ({ index: i, row: i, weight: 1 })),
  };
}

/** Polygon in screen coords around the first two root points. */
const LEFT_PAIR: [number, number][] = [
  [-2, -2],
  [12, -2],
  [12, 2],
  [-2, 2],
];

interface FakeService {
  client: ApiClient;
  log: string[];
  labels: number[];
  names: string[] | null;
  releaseLabel: () => void;
  holdNextLabel: () => void;
  failDrill: boolean;
}

function makeFakeService(): FakeService {
  const state: FakeService = {
    client: undefined as unknown as ApiClient,
    log: [],
    labels: [-1, -1, -1, -1],
    names: NAMES,
    releaseLabel: () => {},
    holdNextLabel: () => {},
    failDrill: false,
  };
  let hold: Promise<void> | null = null;
  state.holdNextLabel = () => {
    hold = new Promise<void>((resolve) => {
      state.releaseLabel = resolve;
    });
  };
  const json = (body: unknown, status = 200) =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });

  const fetchImpl: typeof fetch = async (input, init) => {
    const path = String(input).replace("http://fake", "");
    const method = init?.method ?? "GET";
    state.log.push(`${method} ${path}`);
    if (method === "POST" && path === "/api/analysis/a1/drill") {
      if (state.failDrill) {
        return json({ code: "invalid_request", message: "bad selection" }, 400);
      }
      const body = JSON.parse(String(init?.body)) as { selection: number[] };
      return json({
        ...rootSnapshot(),
        analysis_id: "a2",
        parent_analysis_id: "a1",
        scale: 0,
        n_points: body.selection.length,
      });
    }
    if (method === "POST" && path === "/api/session/s1/label") {
      const wait = hold;
      hold = null;
      if (wait !== null) await wait;
      const body = JSON.parse(String(init?.body)) as { selection: number[]; label: number };
      for (const i of body.selection) state.labels[i] = body.label;
      state.log.push(`labeled ${body.selection.join(",")} as ${body.label}`);
      return json({ rows_labeled: body.selection.length, coverage: 0.5, clicks: 1 });
    }
    if (method === "GET" && path === "/api/session/s1") {
      return json({
        session_id: "s1",
        clicks: 1,
        coverage: 0.5,
        n_points: 4,
        label_counts: {},
        label_names: state.names,
        labels: [...state.labels],
        analyses: [],
      });
    }
    if (method === "GET" && path.startsWith("/api/analysis/")) {
      const id = path.split("/")[3];
      return json({ ...rootSnapshot(), analysis_id: id });
    }
    if (method === "GET" && path.startsWith("/api/session/s1/export")) {
      return new Response(`{"export":"${path.split("=")[1]}"}`, {
        status: 200,
        headers: { "content-type": "application/json" },
      });
    }
    return json({ code: "not_found", message: `no route ${path}` }, 404);
  };
  state.client = new ApiClient("http://fake", { fetchImpl });
  return state;
}

function makeController(service: FakeService, labelNames: string[] | null = NAMES) {
  const controller = new SessionController(service.client, INFO, labelNames);
  controller.snapshot = rootSnapshot();
  return controller;
}

const tick = () => new Promise<void>((resolve) => setTimeout(resolve, 0));

describe("SessionController", () => {
  it("starts with the root breadcrumb and a copied palette", () => {
    const controller = makeController(makeFakeService());
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
    expect(controller.view.palette).toEqual(NAMES);
    expect(controller.view.camera.zoom).toBe(1);
    controller.view.palette.push("scratch");
    expect(NAMES).toHaveLength(3);
  });

  it("computes the lasso selection from the live polygon", () => {
    const controller = makeController(makeFakeService());
    expect(controller.selection()).toEqual([]);
    controller.view.polygon = LEFT_PAIR;
    expect(controller.selection()).toEqual([0, 1]);
    controller.clearSelection();
    expect(controller.selection()).toEqual([]);
  });

  it("drill pushes a breadcrumb and swaps the snapshot", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    const child = await controller.drillAction();
    expect(child?.analysis_id).toBe("a2");
    expect(controller.view.breadcrumbs).toEqual(["a1", "a2"]);
    expect(controller.view.analysisId).toBe("a2");
    expect(controller.snapshot?.n_points).toBe(2);
    expect(controller.view.polygon).toEqual([]);
  });

  it("drill with an empty selection is disabled and sends no request", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    expect(await controller.drillAction()).toBeNull();
    controller.view.polygon = [
      [500, 500],
      [510, 500],
      [505, 510],
    ];
    expect(await controller.drillAction()).toBeNull();
    expect(service.log).toEqual([]);
  });

  it("surfaces a 4xx drill as a dismissible banner", async () => {
    const service = makeFakeService();
    service.failDrill = true;
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    expect(await controller.drillAction()).toBeNull();
    expect(controller.banners).toHaveLength(1);
    expect(controller.banners[0].message).toBe("invalid_request: bad selection");
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
    controller.dismissBanner(controller.banners[0].id);
    expect(controller.banners).toEqual([]);
  });

  it("labels via palette text, then refreshes row labels to recolor", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    const result = await controller.labelAction("Action01");
    expect(result?.rows_labeled).toBe(2);
    expect(service.log).toContain("labeled 0,1 as 1");
    expect(controller.labels).toEqual([1, 1, -1, -1]);
    expect(controller.view.polygon).toEqual([]);
  });

  it("rejects free text outside a fixed palette without a request", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    expect(await controller.labelAction("NotAClass")).toBeNull();
    expect(service.log).toEqual([]);
    expect(controller.banners[0].message).toContain('unknown label "NotAClass"');
  });

  it("grows the palette from free text when the dataset has no names", async () => {
    const service = makeFakeService();
    service.names = null;
    const controller = makeController(service, null);
    controller.view.polygon = LEFT_PAIR;
    await controller.labelAction("walking");
    expect(controller.view.palette).toContain("walking");
    expect(service.log).toContain("labeled 0,1 as 0");
  });

  it("keeps at most one mutation in flight and preserves click order", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    service.holdNextLabel();
    const first = controller.labelAction("Action01");
    controller.view.polygon = [
      [-2, 8],
      [12, 8],
      [12, 12],
      [-2, 12],
    ];
    const second = controller.labelAction("Action02");
    await tick();
    expect(service.log.filter((l) => l.startsWith("labeled"))).toHaveLength(0);
    expect(service.log.filter((l) => l.includes("POST /api/session/s1/label"))).toHaveLength(1);
    service.releaseLabel();
    await Promise.all([first, second]);
    expect(service.log.filter((l) => l.startsWith("labeled"))).toEqual([
      "labeled 0,1 as 1",
      "labeled 2,3 as 2",
    ]);
  });

  it("back pops a breadcrumb but never the session root", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    await controller.drillAction();
    expect(controller.view.breadcrumbs).toEqual(["a1", "a2"]);
    await controller.back();
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
    expect(controller.view.analysisId).toBe("a1");
    expect(await controller.back()).toBeNull();
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
  });

  it("backTo jumps to an ancestor and truncates the trail", async () => {
    const service = makeFakeService();
    const controller = makeController(service);
    controller.view.polygon = LEFT_PAIR;
    await controller.drillAction();
    controller.view.breadcrumbs.push("a3");
    controller.view.analysisId = "a3";
    await controller.backTo("a1");
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
    expect(controller.view.analysisId).toBe("a1");
  });

  it("exports pass the service document through verbatim", async () => {
    const controller = makeController(makeFakeService());
    expect(await controller.exportAction("havana")).toBe('{"export":"havana"}');
    expect(await controller.exportAction("via3")).toBe('{"export":"via3"}');
  });

  it("maps keys D, L, Esc and B to their actions", async () => {
    const service = makeFakeService();
    const controller = makeController(service);

    expect(controller.handleKey("d")).toBeNull(); // nothing selected yet
    expect(controller.handleKey("l")).toBeNull();
    expect(controller.labelPromptOpen).toBe(false);
    expect(controller.handleKey("b")).toBeNull(); // already at the root

    controller.view.polygon = LEFT_PAIR;
    expect(controller.handleKey("l")).toBe("label-prompt");
    expect(controller.labelPromptOpen).toBe(true);
    expect(controller.handleKey("Escape")).toBe("clear");
    expect(controller.view.polygon).toEqual([]);
    expect(controller.labelPromptOpen).toBe(false);

    controller.view.polygon = LEFT_PAIR;
    expect(controller.handleKey("D")).toBe("drill");
    await tick();
    expect(controller.view.breadcrumbs).toEqual(["a1", "a2"]);
    expect(controller.handleKey("B")).toBe("back");
    await tick();
    expect(controller.view.breadcrumbs).toEqual(["a1"]);
    expect(controller.handleKey("x")).toBeNull();
  });

  it("rejects non-positive camera zoom", () => {
    const controller = makeController(makeFakeService());
    expect(() => controller.setCamera({ panX: 0, panY: 0, zoom: 0 })).toThrow(RangeError);
    expect(() => controller.setCamera({ panX: 0, panY: 0, zoom: -1 })).toThrow(RangeError);
    controller.zoomBy(10, 10, 2);
    expect(controller.view.camera.zoom).toBe(2);
  });
});
