/** Payload shapes of the annotation service's HTTP API, plus client view state. */

export interface HealthInfo {
  status: string;
  version: string;
}

export interface DatasetInfo {
  dataset_id: string;
  n_points: number;
  dim: number;
  n_videos: number;
  label_names: string[] | null;
}

export interface HierarchyParams {
  dataset_id: string;
  n_scales?: number;
  k?: number;
  perplexity?: number;
  beta_walks?: number;
  walk_length?: number;
  threshold_factor?: number;
  beta_aoi?: number;
  max_steps?: number;
  seed?: number;
  n_workers?: number;
}

export interface HierarchyStatus {
  hierarchy_id: string;
  status: "building" | "ready" | "failed";
  dataset_id: string;
  scale_sizes?: number[];
  report?: Record<string, unknown>;
  error?: string;
}

export interface SessionParams {
  hierarchy_id: string;
  embed_iters?: number;
  embed_theta?: number;
  seed?: number;
}

export interface SessionInfo {
  session_id: string;
  hierarchy_id: string;
  dataset_id: string;
  root_analysis_id: string;
  scale: number;
  n_points: number;
}

export interface AnalysisPoint {
  /** Position within the analysis; selections are lists of these. */
  index: number;
  /** Dataset row represented by this landmark (thumbnail lookups use it). */
  row: number;
  weight: number;
}

export interface AnalysisSnapshot {
  analysis_id: string;
  session_id: string;
  scale: number;
  n_points: number;
  parent_analysis_id: string | null;
  embedding_status: "pending" | "ready" | "failed";
  /** Live layout; null until the optimizer publishes its first iteration. */
  embedding: [number, number][] | null;
  iteration: number;
  kl: number | null;
  converged: boolean;
  error: string | null;
  points: AnalysisPoint[];
}

export interface LabelResult {
  rows_labeled: number;
  coverage: number;
  clicks: number;
}

export interface CoverageInfo {
  session_id: string;
  coverage: number;
  clicks: number;
  label_counts: Record<string, number>;
}

export interface SessionState {
  session_id: string;
  clicks: number;
  coverage: number;
  n_points: number;
  label_counts: Record<string, number>;
  label_names: string[] | null;
  /** Per-row assigned labels; -1 marks unlabeled rows. */
  labels: number[];
  analyses: {
    id: number;
    analysis_id: string | null;
    scale: number;
    n_points: number;
    parent_id: number | null;
    has_embedding: boolean;
  }[];
}

export type ExportFormat = "havana" | "via3";

export interface Camera {
  panX: number;
  panY: number;
  /** Screen pixels per layout unit; must stay > 0. */
  zoom: number;
}

export interface ViewState {
  analysisId: string;
  /** Drill trail from the session root (always first) to the current analysis. */
  breadcrumbs: string[];
  camera: Camera;
  /** Open lasso polygon in screen coordinates; empty when no selection. */
  polygon: [number, number][];
  hoverRow: number | null;
  /** Label names by id; index is the id sent to the service. */
  palette: string[];
}

export interface Banner {
  id: number;
  message: string;
}
