/** Typed client for the annotation service's HTTP API. */

import type {
  AnalysisSnapshot,
  CoverageInfo,
  DatasetInfo,
  ExportFormat,
  HealthInfo,
  HierarchyParams,
  HierarchyStatus,
  LabelResult,
  SessionInfo,
  SessionParams,
  SessionState,
} from "./types.js";

/** A non-2xx response; the service always sends {code, message} bodies. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface ApiClientOptions {
  /** Injectable for tests; defaults to the global fetch. */
  fetchImpl?: typeof fetch;
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: typeof fetch;

  constructor(baseUrl: string, options: ApiClientOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = options.fetchImpl ?? globalThis.fetch.bind(globalThis);
  }

  private async raw(method: string, path: string, body?: unknown): Promise<Response> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "unknown";
      let message = `${method} ${path} failed with HTTP ${response.status}`;
      try {
        const parsed = (await response.json()) as { code?: string; message?: string };
        if (parsed.code) code = parsed.code;
        if (parsed.message) message = parsed.message;
      } catch {
        // non-JSON error body; keep the fallback message
      }
      throw new ApiError(response.status, code, message);
    }
    return response;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    return (await this.raw(method, path, body)).json() as Promise<T>;
  }

  health(): Promise<HealthInfo> {
    return this.request("GET", "/api/health");
  }

  registerDataset(manifestPath: string): Promise<DatasetInfo> {
    return this.request("POST", "/api/dataset", { manifest_path: manifestPath });
  }

  startHierarchy(params: HierarchyParams): Promise<{ hierarchy_id: string; status: string }> {
    return this.request("POST", "/api/hierarchy", params);
  }

  hierarchyStatus(hierarchyId: string): Promise<HierarchyStatus> {
    return this.request("GET", `/api/hierarchy/${hierarchyId}/status`);
  }

  startSession(params: SessionParams): Promise<SessionInfo> {
    return this.request("POST", "/api/session", params);
  }

  sessionState(sessionId: string): Promise<SessionState> {
    return this.request("GET", `/api/session/${sessionId}`);
  }

  analysis(analysisId: string): Promise<AnalysisSnapshot> {
    return this.request("GET", `/api/analysis/${analysisId}`);
  }

  drill(analysisId: string, selection: number[]): Promise<AnalysisSnapshot> {
    return this.request("POST", `/api/analysis/${analysisId}/drill`, { selection });
  }

  label(
    sessionId: string,
    analysisId: string,
    selection: number[],
    label: number,
  ): Promise<LabelResult> {
    return this.request("POST", `/api/session/${sessionId}/label`, {
      analysis_id: analysisId,
      selection,
      label,
    });
  }

  coverage(sessionId: string): Promise<CoverageInfo> {
    return this.request("GET", `/api/session/${sessionId}/coverage`);
  }

  /** Export as raw text so callers can compare documents byte for byte. */
  async exportText(sessionId: string, format: ExportFormat): Promise<string> {
    const response = await this.raw("GET", `/api/session/${sessionId}/export?format=${format}`);
    return response.text();
  }

  thumbnailUrl(datasetId: string, row: number): string {
    return `${this.baseUrl}/api/point/${datasetId}/${row}/thumbnail`;
  }

  async thumbnail(datasetId: string, row: number): Promise<ArrayBuffer> {
    const response = await this.raw("GET", `/api/point/${datasetId}/${row}/thumbnail`);
    return response.arrayBuffer();
  }
}
