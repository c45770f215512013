/**
 * Adjudication flow plus the export/kappa view that unlocks after it.
 *
 * Disagreed items reveal both assessors' judgments side by side (still
 * never the model's label). Once every item is resolved the server starts
 * answering export and kappa, and only then does this flow request them.
 */

import {
  ConflictError,
  DisagreedItem,
  ExportRow,
  KappaReport,
  Progress,
  ReviewClient,
} from "./api.js";

export interface AdjudicateState {
  sessionId: string;
  queue: DisagreedItem[];
  progress: Progress | null;
  /** True once the server reports the session complete. */
  exportUnlocked: boolean;
  exportRows: ExportRow[] | null;
  kappaReport: KappaReport | null;
  notice: string | null;
}

export class AdjudicateFlow {
  private state: AdjudicateState;

  constructor(
    private readonly client: ReviewClient,
    sessionId: string,
  ) {
    this.state = {
      sessionId,
      queue: [],
      progress: null,
      exportUnlocked: false,
      exportRows: null,
      kappaReport: null,
      notice: null,
    };
  }

  getState(): Readonly<AdjudicateState> {
    return { ...this.state, queue: [...this.state.queue] };
  }

  async refresh(): Promise<void> {
    this.state.queue = await this.client.disagreements(this.state.sessionId);
    this.state.progress = await this.client.progress(this.state.sessionId);
    this.state.exportUnlocked = this.state.progress.complete;
  }

  async adjudicate(pairId: string, label: boolean): Promise<void> {
    try {
      await this.client.postAdjudication(this.state.sessionId, pairId, label);
      this.state.notice = null;
    } catch (error) {
      if (error instanceof ConflictError) {
        // The item left the disagreed state under us; re-sync and move on.
        this.state.notice = error.detail;
      } else {
        throw error;
      }
    }
    await this.refresh();
  }

  /**
   * Fetch the full export and the agreement report. Only callable once the
   * session is complete; before that the hidden labels stay on the server.
   */
  async loadExport(): Promise<void> {
    if (!this.state.exportUnlocked) {
      throw new Error("export is locked until every item is resolved");
    }
    this.state.exportRows = await this.client.exportSession(this.state.sessionId);
    this.state.kappaReport = await this.client.kappa(this.state.sessionId);
  }
}
