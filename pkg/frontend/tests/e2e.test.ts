import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdirSync, mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { performance } from "node:perf_hooks";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { fitCamera, dataToScreen } from "../src/geometry.js";
import { pollEmbedding } from "../src/poll.js";
import type { AnalysisSnapshot, SessionInfo, Vec2 } from "../src/index.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const FAKE_JPEG = Buffer.concat([
  Buffer.from([0xff, 0xd8, 0xff, 0xdb]),
  Buffer.from("ui-e2e-thumbnail"),
]);

let workDir: string;
let server: ChildProcess;
let client: ApiClient;
let datasetId: string;
let hierarchyId: string;
let labelNames: string[];

function cli(...args: string[]): void {
  execFileSync("python3", ["-m", "annoscale.cli", ...args], { stdio: "pipe" });
}

async function waitForHealth(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await client.health();
      return;
    } catch {
      if (Date.now() > deadline) throw new Error(`service at ${BASE} never became healthy`);
      await new Promise((resolve) => setTimeout(resolve, 150));
    }
  }
}

async function waitForHierarchy(id: string): Promise<void> {
  for (;;) {
    const status = await client.hierarchyStatus(id);
    if (status.status === "ready") return;
    if (status.status === "failed") throw new Error(status.error ?? "build failed");
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
}

/**
 * Fit the controller camera to the snapshot and lasso the left or right half
 * of the layout in that screen space, the way a user frames then selects.
 */
function lassoHalf(ui: SessionController, snapshot: AnalysisSnapshot, side: "left" | "right"): void {
  const coords = snapshot.embedding;
  if (coords === null) throw new Error("snapshot has no coords");
  const camera = fitCamera(coords, 640, 480);
  ui.setCamera(camera);
  const xs = coords.map((p) => dataToScreen(camera, p as Vec2)[0]).sort((a, b) => a - b);
  const median = xs[Math.floor(xs.length / 2)];
  const [x0, x1] = side === "left" ? [-10, median] : [median, 650];
  ui.view.polygon = [
    [x0, -10],
    [x1, -10],
    [x1, 490],
    [x0, 490],
  ];
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "annoscale-ui-e2e-"));
  cli(
    "synth",
    "--n", "600",
    "--classes", "4",
    "--sigma", "0.1",
    "--seed", "5",
    "--rows-per-video", "40",
    "--out-features", join(workDir, "features.havf"),
    "--out-manifest", join(workDir, "manifest.json"),
    "--out-labels", join(workDir, "labels.json"),
  );
  // give the first video thumbnails so hover previews have bytes to fetch
  const manifest = JSON.parse(readFileSync(join(workDir, "manifest.json"), "utf8"));
  const thumbs = join(workDir, "thumbs0");
  mkdirSync(thumbs);
  writeFileSync(join(thumbs, "00000003.jpg"), FAKE_JPEG);
  manifest.videos[0].thumbnails = thumbs;
  writeFileSync(join(workDir, "manifest.json"), JSON.stringify(manifest));

  server = spawn(
    "python3",
    ["-m", "annoscale.cli", "serve", "--host", "127.0.0.1", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  client = new ApiClient(BASE);
  await waitForHealth(30_000);

  const dataset = await client.registerDataset(join(workDir, "manifest.json"));
  datasetId = dataset.dataset_id;
  if (dataset.label_names === null) throw new Error("synthetic dataset should name labels");
  labelNames = dataset.label_names;

  const build = await client.startHierarchy({
    dataset_id: datasetId,
    n_scales: 2,
    k: 10,
    perplexity: 5.0,
    beta_walks: 30,
    walk_length: 10,
    beta_aoi: 20,
    max_steps: 50,
    seed: 0,
  });
  hierarchyId = build.hierarchy_id;
  await waitForHierarchy(hierarchyId);
});

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("UI against the live service", () => {
  it(
    "scripted UI session exports byte-identically to the same actions over raw HTTP",
    async () => {
      // --- UI-driven session ---------------------------------------------
      const info = await client.startSession({
        hierarchy_id: hierarchyId,
        embed_iters: 200,
        seed: 1,
      });
      const ui = new SessionController(client, info, labelNames);
      await ui.refreshLabels();

      const iterations: number[] = [];
      const root = await pollEmbedding(client, info.root_analysis_id, {
        intervalMs: 15,
        onSnapshot: (s) => {
          iterations.push(s.iteration);
          ui.snapshot = s;
        },
      });
      expect(root.converged).toBe(true);
      expect(root.embedding).toHaveLength(root.n_points);
      expect([...iterations].sort((a, b) => a - b)).toEqual(iterations);

      lassoHalf(ui, root, "left");
      const drillSelection = ui.selection();
      expect(drillSelection.length).toBeGreaterThan(0);
      expect(drillSelection.length).toBeLessThan(root.n_points);

      const child = await ui.drillAction();
      if (child === null) throw new Error(`drill failed: ${ui.banners[0]?.message}`);
      expect(ui.view.breadcrumbs).toEqual([info.root_analysis_id, child.analysis_id]);

      const childIterations: number[] = [];
      const childFinal = await pollEmbedding(client, child.analysis_id, {
        intervalMs: 15,
        onSnapshot: (s) => {
          childIterations.push(s.iteration);
          ui.snapshot = s;
        },
      });
      expect([...childIterations].sort((a, b) => a - b)).toEqual(childIterations);

      lassoHalf(ui, childFinal, "left");
      const childSelection = ui.selection();
      expect(childSelection.length).toBeGreaterThan(0);
      const labeled = await ui.labelAction(labelNames[2]);
      if (labeled === null) throw new Error(`label failed: ${ui.banners[0]?.message}`);
      expect(labeled.rows_labeled).toBeGreaterThan(0);

      await ui.back();
      expect(ui.view.analysisId).toBe(info.root_analysis_id);
      lassoHalf(ui, ui.snapshot!, "right");
      const rootSelection = ui.selection();
      expect(rootSelection.length).toBeGreaterThan(0);
      const labeledRoot = await ui.labelAction(labelNames[1]);
      if (labeledRoot === null) throw new Error(`label failed: ${ui.banners[0]?.message}`);

      const uiHavana = await ui.exportAction("havana");
      const uiVia3 = await ui.exportAction("via3");
      if (uiHavana === null || uiVia3 === null) throw new Error("export failed");
      expect(ui.banners).toEqual([]);

      // --- identical action sequence over raw HTTP ------------------------
      const post = async (path: string, body: unknown) => {
        const response = await fetch(BASE + path, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(body),
        });
        expect(response.ok).toBe(true);
        return response.json();
      };
      const direct = (await post("/api/session", {
        hierarchy_id: hierarchyId,
        embed_iters: 200,
        seed: 1,
      })) as SessionInfo;
      const directChild = (await post(`/api/analysis/${direct.root_analysis_id}/drill`, {
        selection: drillSelection,
      })) as AnalysisSnapshot;
      await post(`/api/session/${direct.session_id}/label`, {
        analysis_id: directChild.analysis_id,
        selection: childSelection,
        label: 2,
      });
      await post(`/api/session/${direct.session_id}/label`, {
        analysis_id: direct.root_analysis_id,
        selection: rootSelection,
        label: 1,
      });
      const directHavana = await (
        await fetch(`${BASE}/api/session/${direct.session_id}/export?format=havana`)
      ).text();
      const directVia3 = await (
        await fetch(`${BASE}/api/session/${direct.session_id}/export?format=via3`)
      ).text();

      expect(uiHavana).toBe(directHavana);
      expect(Buffer.from(uiHavana, "utf8").equals(Buffer.from(directHavana, "utf8"))).toBe(true);
      expect(uiVia3).toBe(directVia3);
      expect(Buffer.from(uiVia3, "utf8").equals(Buffer.from(directVia3, "utf8"))).toBe(true);
      expect(JSON.parse(uiHavana).annotations.length).toBeGreaterThan(0);
    },
    120_000,
  );

  it("serves hover thumbnails quickly with exact bytes", async () => {
    const started = performance.now();
    const bytes = Buffer.from(await client.thumbnail(datasetId, 3));
    const elapsed = performance.now() - started;
    expect(bytes.equals(FAKE_JPEG)).toBe(true);
    expect(elapsed).toBeLessThan(200);
  });

  it("rejects and reports bad requests with the JSON error shape", async () => {
    const info = await client.startSession({ hierarchy_id: hierarchyId, seed: 9 });
    const ui = new SessionController(client, info, labelNames);
    ui.snapshot = await client.analysis(info.root_analysis_id);
    // far outside any layout, so the lasso is empty whether or not the
    // background embed has published coords yet
    ui.view.polygon = [
      [1e6, 1e6],
      [1e6 + 1, 1e6],
      [1e6, 1e6 + 1],
    ];
    const outcome = await ui.drillAction();
    expect(outcome).toBeNull(); // empty lasso: disabled, no request
    const noSuch = await client
      .drill(info.root_analysis_id, [999_999])
      .then(() => null)
      .catch((err) => err);
    expect(noSuch?.status).toBe(400);
    expect(noSuch?.code).toBe("invalid_request");
  });
});
