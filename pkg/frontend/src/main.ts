/** Browser entry: wires the canvas, keyboard and service calls together.
 *
 * Serve this directory statically (any file server), run the annotation
 * service, then open index.html?api=http://127.0.0.1:8899.
 */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { fitCamera, pickPoint } from "./geometry.js";
import { pollEmbedding } from "./poll.js";
import { labelColor, render } from "./render.js";
import type { AnalysisSnapshot, DatasetInfo, ExportFormat } from "./types.js";

const query = new URLSearchParams(location.search);
const apiBase = query.get("api") ?? `${location.protocol}//${location.hostname}:8899`;
const client = new ApiClient(apiBase);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

const app = document.getElementById("app") ?? document.body;
const bannerBox = el("div", "banners");
const statusLine = el("div", "status", `service: ${apiBase}`);
const crumbBox = el("div", "crumbs");
const toolbar = el("div", "toolbar");
const popup = el("div", "popup");
popup.style.display = "none";
const canvas = el("canvas", "scatter");
const thumb = el("img", "thumb") as HTMLImageElement;
thumb.style.display = "none";

const manifestInput = el("input") as HTMLInputElement;
manifestInput.placeholder = "manifest path (relative to --data-root)";
manifestInput.size = 48;
const startButton = el("button", "", "Load dataset and build");
const setup = el("div", "setup");
setup.append(manifestInput, startButton);

app.append(bannerBox, setup, statusLine, crumbBox, toolbar, canvas, popup, thumb);

const ctx = canvas.getContext("2d");
if (ctx === null) throw new Error("2d canvas context unavailable");

let controller: SessionController | null = null;
let dataset: DatasetInfo | null = null;
let pollGeneration = 0;
let fittedAnalysis: string | null = null;

function sizeCanvas(): void {
  canvas.width = window.innerWidth - 20;
  canvas.height = Math.max(240, window.innerHeight - canvas.offsetTop - 20);
}

function note(message: string): void {
  statusLine.textContent = message;
}

function drawBanners(): void {
  bannerBox.replaceChildren();
  if (controller === null) return;
  for (const banner of controller.banners) {
    const row = el("div", "banner", banner.message + " ");
    const close = el("button", "", "x");
    close.onclick = () => {
      controller?.dismissBanner(banner.id);
      drawBanners();
    };
    row.append(close);
    bannerBox.append(row);
  }
}

function drawCrumbs(): void {
  crumbBox.replaceChildren();
  if (controller === null) return;
  controller.view.breadcrumbs.forEach((id, i) => {
    if (i > 0) crumbBox.append(el("span", "", " > "));
    const link = el("a", "crumb", id);
    link.href = "#";
    link.onclick = (e) => {
      e.preventDefault();
      void controller?.backTo(id).then(() => {
        restartPoll();
        draw();
      });
    };
    crumbBox.append(link);
  });
}

function draw(): void {
  drawBanners();
  drawCrumbs();
  if (controller === null || ctx === null) return;
  const snap = controller.snapshot;
  if (snap !== null && snap.embedding !== null && fittedAnalysis !== snap.analysis_id) {
    controller.setCamera(fitCamera(snap.embedding, canvas.width, canvas.height));
    fittedAnalysis = snap.analysis_id;
  }
  if (snap !== null) {
    render(snap, controller.view, controller.labels, ctx, {
      width: canvas.width,
      height: canvas.height,
    });
    const polygon = controller.view.polygon;
    if (polygon.length >= 2) {
      ctx.beginPath();
      ctx.moveTo(polygon[0][0], polygon[0][1]);
      for (const [x, y] of polygon.slice(1)) ctx.lineTo(x, y);
      ctx.closePath();
      ctx.strokeStyle = "#333";
      ctx.stroke();
    }
    note(
      `analysis ${snap.analysis_id} | scale ${snap.scale} | ${snap.n_points} points | ` +
        `iteration ${snap.iteration}` +
        (snap.kl !== null ? ` | kl ${snap.kl.toFixed(3)}` : "") +
        (snap.converged ? "" : " | optimizing...") +
        ` | selected ${controller.selection().length}`,
    );
  }
}

function restartPoll(): void {
  if (controller === null) return;
  pollGeneration += 1;
  const generation = pollGeneration;
  const analysisId = controller.view.analysisId;
  void pollEmbedding(client, analysisId, {
    intervalMs: 150,
    stop: () => generation !== pollGeneration,
    onSnapshot: (snap) => {
      if (generation === pollGeneration && controller?.view.analysisId === snap.analysis_id) {
        controller.snapshot = snap;
        draw();
      }
    },
  }).catch((err) => {
    controller?.pushBanner(err instanceof Error ? err.message : String(err));
    drawBanners();
  });
}

function buildToolbar(): void {
  toolbar.replaceChildren();
  const drill = el("button", "", "Drill [D]");
  drill.onclick = () => void controller?.drillAction().then(() => {
    restartPoll();
    draw();
  });
  const label = el("button", "", "Label [L]");
  label.onclick = () => {
    if (controller !== null && controller.handleKey("l") === "label-prompt") showPopup();
  };
  const back = el("button", "", "Back [B]");
  back.onclick = () => void controller?.back().then(() => {
    restartPoll();
    draw();
  });
  toolbar.append(drill, label, back);
  for (const format of ["havana", "via3"] as ExportFormat[]) {
    const button = el("button", "", `Export ${format}`);
    button.onclick = () => void exportSession(format);
    toolbar.append(button);
  }
}

async function exportSession(format: ExportFormat): Promise<void> {
  const text = await controller?.exportAction(format);
  draw();
  if (!text) return;
  const url = URL.createObjectURL(new Blob([text], { type: "application/json" }));
  const link = el("a") as HTMLAnchorElement;
  link.href = url;
  link.download = `annotations.${format}.json`;
  link.click();
  URL.revokeObjectURL(url);
}

function showPopup(): void {
  if (controller === null) return;
  popup.replaceChildren(el("div", "", "Label selection:"));
  for (const [i, name] of controller.view.palette.entries()) {
    const button = el("button", "", name);
    button.style.borderLeft = `6px solid ${labelColor(i)}`;
    button.onclick = () => void submitLabel(name);
    popup.append(button);
  }
  const free = el("input") as HTMLInputElement;
  free.placeholder = "or type a label and press Enter";
  free.onkeydown = (e) => {
    if (e.key === "Enter") void submitLabel(free.value);
    if (e.key === "Escape") hidePopup();
    e.stopPropagation();
  };
  popup.append(free);
  popup.style.display = "block";
  free.focus();
}

function hidePopup(): void {
  popup.style.display = "none";
  if (controller !== null) controller.labelPromptOpen = false;
}

async function submitLabel(text: string): Promise<void> {
  hidePopup();
  await controller?.labelAction(text);
  draw();
}

async function hover(sx: number, sy: number): Promise<void> {
  if (controller === null || dataset === null || controller.snapshot === null) return;
  const hit = pickPoint(controller.snapshot, controller.view.camera, sx, sy);
  controller.view.hoverRow = hit === null ? null : hit.row;
  if (hit === null) {
    thumb.style.display = "none";
    return;
  }
  thumb.src = client.thumbnailUrl(dataset.dataset_id, hit.row);
  thumb.style.left = `${sx + 16}px`;
  thumb.style.top = `${sy + 16}px`;
  thumb.onerror = () => (thumb.style.display = "none"); // dataset without thumbnails
  thumb.onload = () => (thumb.style.display = "block");
}

let lassoing = false;
let panning = false;
let lastPointer: [number, number] = [0, 0];

canvas.addEventListener("pointerdown", (e) => {
  lastPointer = [e.offsetX, e.offsetY];
  if (controller === null) return;
  if (e.button === 0 && !e.shiftKey) {
    lassoing = true;
    controller.view.polygon = [[e.offsetX, e.offsetY]];
  } else {
    panning = true;
  }
});

canvas.addEventListener("pointermove", (e) => {
  if (controller === null) return;
  if (lassoing) {
    const [lx, ly] = controller.view.polygon[controller.view.polygon.length - 1];
    if (Math.hypot(e.offsetX - lx, e.offsetY - ly) > 2) {
      controller.view.polygon.push([e.offsetX, e.offsetY]);
      draw();
    }
  } else if (panning) {
    controller.pan(e.offsetX - lastPointer[0], e.offsetY - lastPointer[1]);
    lastPointer = [e.offsetX, e.offsetY];
    draw();
  } else {
    void hover(e.offsetX, e.offsetY);
  }
});

window.addEventListener("pointerup", () => {
  if (controller !== null && lassoing && controller.view.polygon.length < 3) {
    controller.clearSelection();
  }
  lassoing = false;
  panning = false;
  draw();
});

canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  controller?.zoomBy(e.offsetX, e.offsetY, e.deltaY < 0 ? 1.15 : 1 / 1.15);
  draw();
});

window.addEventListener("keydown", (e) => {
  if (controller === null || e.target instanceof HTMLInputElement) return;
  const action = controller.handleKey(e.key);
  if (action === "label-prompt") showPopup();
  if (action !== null) {
    if (action === "drill" || action === "back") {
      // snapshot switches once the queued action lands
      setTimeout(() => {
        restartPoll();
        draw();
      }, 0);
    }
    draw();
  }
});

window.addEventListener("resize", () => {
  sizeCanvas();
  fittedAnalysis = null;
  draw();
});

startButton.onclick = () => void start();

async function start(): Promise<void> {
  try {
    note("registering dataset...");
    dataset = await client.registerDataset(manifestInput.value.trim());
    note(`building hierarchy over ${dataset.n_points} points...`);
    const build = await client.startHierarchy({ dataset_id: dataset.dataset_id, seed: 0 });
    let status = await client.hierarchyStatus(build.hierarchy_id);
    while (status.status === "building") {
      await new Promise((resolve) => setTimeout(resolve, 500));
      status = await client.hierarchyStatus(build.hierarchy_id);
    }
    if (status.status === "failed") throw new Error(status.error ?? "hierarchy build failed");
    note(`hierarchy ready: scales ${(status.scale_sizes ?? []).join(" / ")}`);
    const info = await client.startSession({ hierarchy_id: build.hierarchy_id, seed: 0 });
    controller = new SessionController(client, info, dataset.label_names);
    await controller.refreshLabels();
    buildToolbar();
    restartPoll();
    draw();
  } catch (err) {
    note(err instanceof Error ? err.message : String(err));
  }
}

sizeCanvas();
void client
  .health()
  .then((h) => note(`service ${h.version} at ${apiBase}; load a manifest to begin`))
  .catch(() => note(`service unreachable at ${apiBase}; pass ?api=http://host:port`));
