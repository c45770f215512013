/**
 * Per-assessor annotation flow.
 *
 * The server holds all state of record; this class only tracks what is on
 * screen. A judgment is never counted locally: progress always comes back
 * from the server, so a crash or reload loses nothing, and a conflict
 * (someone already judged the item) resolves by refetching.
 */

import {
  BlindedItem,
  ConflictError,
  Progress,
  ReviewClient,
  TransportError,
} from "./api.js";

export type BannerKind = "retry" | "conflict" | "info";

export interface Banner {
  kind: BannerKind;
  message: string;
}

export interface AnnotateState {
  sessionId: string;
  assessor: string;
  current: BlindedItem | null;
  remaining: number;
  /** Pair ids the assessor chose to come back to later. */
  deferred: string[];
  banner: Banner | null;
  submitting: boolean;
  progress: Progress | null;
  finished: boolean;
}

interface PendingJudgment {
  pairId: string;
  label: boolean;
}

export class AnnotateFlow {
  private state: AnnotateState;
  private pending: PendingJudgment | null = null;

  constructor(
    private readonly client: ReviewClient,
    sessionId: string,
    assessor: string,
  ) {
    this.state = {
      sessionId,
      assessor,
      current: null,
      remaining: 0,
      deferred: [],
      banner: null,
      submitting: false,
      finished: false,
      progress: null,
    };
  }

  getState(): Readonly<AnnotateState> {
    return { ...this.state, deferred: [...this.state.deferred] };
  }

  async start(): Promise<void> {
    await this.refresh();
  }

  /** Re-pull progress and the next pending item from the server. */
  async refresh(): Promise<void> {
    try {
      this.state.progress = await this.client.progress(this.state.sessionId);
      const next = await this.client.nextItem(
        this.state.sessionId,
        this.state.assessor,
      );
      this.state.current = next.item;
      this.state.remaining = next.remaining;
      this.state.finished = next.item === null;
      if (this.state.banner?.kind !== "info") this.state.banner = null;
    } catch (error) {
      if (error instanceof TransportError) {
        this.state.banner = {
          kind: "retry",
          message: "connection lost; press retry",
        };
        return;
      }
      throw error;
    }
  }

  /**
   * Submit a yes/no judgment for the item on screen. The item only leaves
   * the screen once the server confirms; a transport failure keeps it and
   * raises the retry banner instead of marking anything locally.
   */
  async judge(label: boolean): Promise<void> {
    if (this.state.current === null || this.state.submitting) return;
    this.pending = { pairId: this.state.current.pair_id, label };
    await this.submitPending();
  }

  /** Re-send the last unconfirmed judgment, or re-sync if there is none. */
  async retry(): Promise<void> {
    if (this.pending !== null) {
      await this.submitPending();
    } else {
      await this.refresh();
    }
  }

  /**
   * Defer the current item: nothing is posted, so the item stays in the
   * server's pending pool and will come around again.
   */
  async skip(): Promise<void> {
    if (this.state.current === null || this.state.submitting) return;
    const pairId = this.state.current.pair_id;
    if (!this.state.deferred.includes(pairId)) this.state.deferred.push(pairId);
    this.state.banner = {
      kind: "info",
      message: "item skipped; it stays in the pending pool",
    };
    await this.refresh();
  }

  private async submitPending(): Promise<void> {
    if (this.pending === null) return;
    const { pairId, label } = this.pending;
    this.state.submitting = true;
    try {
      await this.client.postJudgment(
        this.state.sessionId,
        pairId,
        this.state.assessor,
        label,
      );
      this.pending = null;
      this.state.banner = null;
      this.state.deferred = this.state.deferred.filter((id) => id !== pairId);
      await this.refresh();
    } catch (error) {
      if (error instanceof TransportError) {
        this.state.banner = {
          kind: "retry",
          message: "submit failed; judgment not recorded, press retry",
        };
        return;
      }
      if (error instanceof ConflictError) {
        // Someone (or an earlier retry) already judged it; the server copy
        // wins and the stale item is replaced, never double-counted.
        this.pending = null;
        await this.refresh();
        this.state.banner = {
          kind: "conflict",
          message: "item was already judged; refreshed",
        };
        return;
      }
      throw error;
    } finally {
      this.state.submitting = false;
    }
  }
}
