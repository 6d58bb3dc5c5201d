/** Session state machine: breadcrumbs, lasso actions, banners, keyboard map. */

import { ApiError, type ApiClient } from "./api.js";
import { lassoSelect, zoomAt } from "./geometry.js";
import type {
  AnalysisSnapshot,
  Banner,
  Camera,
  ExportFormat,
  LabelResult,
  SessionInfo,
  ViewState,
} from "./types.js";

export type KeyAction = "drill" | "label-prompt" | "clear" | "back" | null;

/**
 * Client-side state for one annotation session.
 *
 * All mutating actions (drill, label, export) run through a FIFO queue so at
 * most one request is in flight per session and click order is preserved.
 * Service errors never reject an action promise; they surface as dismissible
 * banners and the action resolves null.
 */
export class SessionController {
  readonly info: SessionInfo;
  readonly view: ViewState;
  /** Latest snapshot of the current analysis (fed by the embedding poller). */
  snapshot: AnalysisSnapshot | null = null;
  /** Per-row label assignments mirrored from the session; -1 unlabeled. */
  labels: number[] | null = null;
  banners: Banner[] = [];
  labelPromptOpen = false;

  private readonly client: ApiClient;
  /** When the dataset declares label names, free text must match one of them. */
  private readonly fixedPalette: boolean;
  private bannerSeq = 0;
  private mutationChain: Promise<unknown> = Promise.resolve();

  constructor(client: ApiClient, info: SessionInfo, labelNames: string[] | null) {
    this.client = client;
    this.info = info;
    this.fixedPalette = labelNames !== null;
    this.view = {
      analysisId: info.root_analysis_id,
      breadcrumbs: [info.root_analysis_id],
      camera: { panX: 0, panY: 0, zoom: 1 },
      polygon: [],
      hoverRow: null,
      palette: labelNames === null ? [] : [...labelNames],
    };
  }

  /** Current lasso membership as in-analysis point indices. */
  selection(): number[] {
    if (this.snapshot === null || this.snapshot.embedding === null) return [];
    if (this.view.polygon.length < 3) return [];
    return lassoSelect(this.snapshot.embedding, this.view.polygon, this.view.camera);
  }

  clearSelection(): void {
    this.view.polygon = [];
    this.labelPromptOpen = false;
  }

  setCamera(camera: Camera): void {
    if (!(camera.zoom > 0) || !Number.isFinite(camera.zoom)) {
      throw new RangeError(`camera zoom must stay positive, got ${camera.zoom}`);
    }
    this.view.camera = camera;
  }

  zoomBy(sx: number, sy: number, factor: number): void {
    this.setCamera(zoomAt(this.view.camera, sx, sy, factor));
  }

  pan(dx: number, dy: number): void {
    const { panX, panY, zoom } = this.view.camera;
    this.view.camera = { panX: panX + dx, panY: panY + dy, zoom };
  }

  pushBanner(message: string): Banner {
    const banner = { id: this.bannerSeq++, message };
    this.banners.push(banner);
    return banner;
  }

  dismissBanner(id: number): void {
    this.banners = this.banners.filter((b) => b.id !== id);
  }

  /** Re-fetch the current analysis snapshot. */
  async refresh(): Promise<AnalysisSnapshot | null> {
    try {
      this.snapshot = await this.client.analysis(this.view.analysisId);
      return this.snapshot;
    } catch (err) {
      return this.surface(err);
    }
  }

  /** Pull per-row labels (and any palette growth) from the session. */
  async refreshLabels(): Promise<void> {
    const state = await this.client.sessionState(this.info.session_id);
    this.labels = state.labels;
    if (state.label_names !== null) this.view.palette = [...state.label_names];
  }

  /** Drill into the current selection; no selection means a disabled action. */
  drillAction(): Promise<AnalysisSnapshot | null> {
    const selection = this.selection();
    if (selection.length === 0) return Promise.resolve(null);
    const from = this.view.analysisId;
    return this.enqueue(async () => {
      try {
        const child = await this.client.drill(from, selection);
        this.view.breadcrumbs.push(child.analysis_id);
        this.view.analysisId = child.analysis_id;
        this.view.hoverRow = null;
        this.snapshot = child;
        this.clearSelection();
        return child;
      } catch (err) {
        return this.surface(err);
      }
    });
  }

  /** Label the current selection with palette or free text. */
  labelAction(text: string): Promise<LabelResult | null> {
    const selection = this.selection();
    if (selection.length === 0) return Promise.resolve(null);
    const label = this.resolveLabel(text);
    if (label === null) return Promise.resolve(null);
    const analysisId = this.view.analysisId;
    return this.enqueue(async () => {
      let result: LabelResult;
      try {
        result = await this.client.label(this.info.session_id, analysisId, selection, label);
      } catch (err) {
        return this.surface(err);
      }
      this.labelPromptOpen = false;
      this.view.polygon = [];
      try {
        await this.refreshLabels(); // recolor from the authoritative state
      } catch (err) {
        this.surface(err);
      }
      return result;
    });
  }

  exportAction(format: ExportFormat): Promise<string | null> {
    return this.enqueue(async () => {
      try {
        return await this.client.exportText(this.info.session_id, format);
      } catch (err) {
        return this.surface(err);
      }
    });
  }

  /** Pop one breadcrumb; the session root always stays. */
  back(): Promise<AnalysisSnapshot | null> {
    if (this.view.breadcrumbs.length <= 1) return Promise.resolve(null);
    this.view.breadcrumbs.pop();
    this.view.analysisId = this.view.breadcrumbs[this.view.breadcrumbs.length - 1];
    this.clearSelection();
    this.view.hoverRow = null;
    return this.refresh();
  }

  /** Jump back to an ancestor breadcrumb by analysis id. */
  backTo(analysisId: string): Promise<AnalysisSnapshot | null> {
    const at = this.view.breadcrumbs.indexOf(analysisId);
    if (at < 0 || analysisId === this.view.analysisId) return Promise.resolve(null);
    this.view.breadcrumbs = this.view.breadcrumbs.slice(0, at + 1);
    this.view.analysisId = analysisId;
    this.clearSelection();
    this.view.hoverRow = null;
    return this.refresh();
  }

  /**
   * Keyboard map: D drills, L opens the label pop-up, Esc clears the
   * selection, B backs up one breadcrumb. Returns the action taken so the
   * page can react (focus the pop-up, redraw), or null when disabled.
   */
  handleKey(key: string): KeyAction {
    switch (key) {
      case "d":
      case "D":
        if (this.selection().length === 0) return null;
        void this.drillAction();
        return "drill";
      case "l":
      case "L":
        if (this.selection().length === 0) return null;
        this.labelPromptOpen = true;
        return "label-prompt";
      case "Escape":
        this.clearSelection();
        return "clear";
      case "b":
      case "B":
        if (this.view.breadcrumbs.length <= 1) return null;
        void this.back();
        return "back";
      default:
        return null;
    }
  }

  private resolveLabel(text: string): number | null {
    const name = text.trim();
    if (name === "") {
      this.pushBanner("label text is empty");
      return null;
    }
    const existing = this.view.palette.indexOf(name);
    if (existing >= 0) return existing;
    if (this.fixedPalette) {
      this.pushBanner(`unknown label "${name}"; pick one of the dataset's names`);
      return null;
    }
    this.view.palette.push(name);
    return this.view.palette.length - 1;
  }

  /** FIFO gate: at most one in-flight mutation per session. */
  private enqueue<T>(action: () => Promise<T>): Promise<T> {
    const result = this.mutationChain.then(action);
    this.mutationChain = result.catch(() => undefined);
    return result;
  }

  private surface(err: unknown): null {
    const message =
      err instanceof ApiError
        ? `${err.code}: ${err.message}`
        : err instanceof Error
          ? err.message
          : String(err);
    this.pushBanner(message);
    return null;
  }
}
