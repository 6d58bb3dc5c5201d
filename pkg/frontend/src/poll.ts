/** Polling loop that streams embedding snapshots while the optimizer runs. */

import { ApiError, type ApiClient } from "./api.js";
import type { AnalysisSnapshot } from "./types.js";

export interface PollOptions {
  /** Delay between successful polls. */
  intervalMs?: number;
  /** Backoff ceiling for network retries. */
  maxBackoffMs?: number;
  /** Fires on every snapshot, converged one included. */
  onSnapshot?: (snapshot: AnalysisSnapshot) => void;
  /** Checked before each fetch so callers can abandon a stale analysis. */
  stop?: () => boolean;
  /** Injectable for tests. */
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Poll an analysis until its converged flag is set, returning the final
 * snapshot. Network failures retry with exponential backoff (reset on the
 * next success); API errors are contract violations and propagate. A
 * converged analysis costs exactly one fetch.
 */
export async function pollEmbedding(
  client: ApiClient,
  analysisId: string,
  options: PollOptions = {},
): Promise<AnalysisSnapshot> {
  const intervalMs = options.intervalMs ?? 200;
  const maxBackoffMs = options.maxBackoffMs ?? 5000;
  const sleep = options.sleep ?? defaultSleep;
  let backoffMs = intervalMs;
  let last: AnalysisSnapshot | null = null;

  for (;;) {
    if (options.stop?.()) {
      if (last !== null) return last;
      throw new Error(`polling of analysis ${analysisId} stopped before any snapshot`);
    }
    let snapshot: AnalysisSnapshot;
    try {
      snapshot = await client.analysis(analysisId);
    } catch (err) {
      if (err instanceof ApiError) throw err;
      await sleep(backoffMs);
      backoffMs = Math.min(backoffMs * 2, maxBackoffMs);
      continue;
    }
    backoffMs = intervalMs;
    last = snapshot;
    options.onSnapshot?.(snapshot);
    if (snapshot.converged) return snapshot;
    await sleep(intervalMs);
  }
}
