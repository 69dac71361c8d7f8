/**
 * Review session state machine.
 *
 * Invariant: a verdict is never silently lost. Advancing past an item
 * happens only after the server acknowledged both verdict records
 * (structure + reasoning) or, when offline, after both were parked in
 * the local pending queue for a later flush.
 *
 * Raters never see other raters' per-item scores here (blind review);
 * the only cross-rater view is the aggregate agreement table, which the
 * server computes.
 */

import {
  ApiClient,
  ApiError,
  NetworkError,
  ReviewItem,
  VerdictRecord,
} from './api.js';

export interface Draft {
  level: 0 | 1 | 2 | 3 | null;
  structureOk: boolean | null;
  rationale: string;
}

export type SubmitOutcome =
  | { status: 'acknowledged' }
  | { status: 'queued_offline' }
  | { status: 'rejected'; code: string; message: string };

const emptyDraft = (): Draft => ({ level: null, structureOk: null, rationale: '' });

export class ReviewSession {
  private items: ReviewItem[] = [];
  private positionIndex = 0;
  private displayed = false;
  private draft: Draft = emptyDraft();
  /** Verdicts accepted locally while the server was unreachable. */
  readonly pendingOffline: VerdictRecord[] = [];
  /** Items fully acknowledged by the server in this session. */
  private ackedItems = 0;
  /** Items accepted locally while offline (their records sit in pendingOffline). */
  private queuedItems = 0;
  lastError: { code: string; message: string } | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly rater: string,
  ) {}

  /** Fetch the server-assigned queue and resume at the first unreviewed item. */
  async load(): Promise<void> {
    const queue = await this.api.loadQueue(this.rater);
    this.items = queue.items;
    this.positionIndex = queue.resume_index;
    this.displayed = false;
    this.draft = emptyDraft();
  }

  get total(): number {
    return this.items.length;
  }

  get position(): number {
    return this.positionIndex;
  }

  get finished(): boolean {
    return this.positionIndex >= this.items.length;
  }

  get current(): ReviewItem | null {
    return this.finished ? null : this.items[this.positionIndex] ?? null;
  }

  /** Items this session has finished rating (acked or parked offline). */
  get completedLocally(): number {
    return this.ackedItems + this.queuedItems;
  }

  /** The view layer calls this once the item's media is on screen. */
  markDisplayed(): void {
    this.displayed = true;
  }

  get currentDraft(): Readonly<Draft> {
    return this.draft;
  }

  setLevel(level: 0 | 1 | 2 | 3): boolean {
    if (!this.displayed || this.finished) return false; // no blind scoring
    this.draft.level = level;
    return true;
  }

  setStructure(ok: boolean): boolean {
    if (!this.displayed || this.finished) return false;
    this.draft.structureOk = ok;
    return true;
  }

  setRationale(text: string): void {
    this.draft.rationale = text;
  }

  canSubmit(): boolean {
    return (
      !this.finished &&
      this.displayed &&
      this.draft.level !== null &&
      this.draft.structureOk !== null
    );
  }

  private verdictRecords(item: ReviewItem): [VerdictRecord, VerdictRecord] {
    return [
      {
        sample_id: item.sample.id,
        rater_id: this.rater,
        round: 1,
        kind: 'structure',
        structure_ok: this.draft.structureOk as boolean,
        rationale: this.draft.rationale,
      },
      {
        sample_id: item.sample.id,
        rater_id: this.rater,
        round: 1,
        kind: 'reasoning',
        level: this.draft.level as number,
        rationale: this.draft.rationale,
      },
    ];
  }

  /**
   * Submit the current draft and advance optimistically.
   *
   * Server rejection rolls the position back and surfaces the error
   * inline; a network failure parks the records in the offline queue and
   * still advances (they flush on reconnect).
   */
  async submit(): Promise<SubmitOutcome> {
    if (!this.canSubmit()) {
      return { status: 'rejected', code: 'INCOMPLETE_DRAFT',
               message: 'choose a structure verdict and a level first' };
    }
    const item = this.current as ReviewItem;
    const records = this.verdictRecords(item);

    // optimistic advance; rolled back on rejection
    const before = this.positionIndex;
    this.advance();

    let acked = 0;
    for (const record of records) {
      try {
        await this.api.submitVerdict(record);
        acked += 1;
      } catch (err) {
        if (err instanceof NetworkError) {
          // park every unacknowledged record; nothing is lost offline
          for (const rest of records.slice(acked)) {
            this.pendingOffline.push(rest);
          }
          this.queuedItems += 1;
          this.lastError = null;
          return { status: 'queued_offline' };
        }
        const apiErr = err as ApiError;
        this.positionIndex = before; // rollback
        this.displayed = true;
        this.lastError = { code: apiErr.code, message: apiErr.message };
        return { status: 'rejected', code: apiErr.code, message: apiErr.message };
      }
    }
    this.ackedItems += 1;
    this.lastError = null;
    return { status: 'acknowledged' };
  }

  private advance(): void {
    this.positionIndex += 1;
    this.displayed = false;
    this.draft = emptyDraft();
  }

  /** Single explicit step back to re-rate the previous item. */
  reviseLast(): boolean {
    if (this.positionIndex === 0) return false;
    this.positionIndex -= 1;
    this.displayed = false;
    this.draft = emptyDraft();
    return true;
  }

  /** Retry offline submissions; returns how many were acknowledged. */
  async flushOffline(): Promise<number> {
    let flushed = 0;
    while (this.pendingOffline.length > 0) {
      const record = this.pendingOffline[0] as VerdictRecord;
      try {
        await this.api.submitVerdict(record);
      } catch (err) {
        if (err instanceof NetworkError) break; // still offline; keep the rest
        // server rejected a parked record: surface it, drop it from the
        // queue so the rater can re-rate the item explicitly
        const apiErr = err as ApiError;
        this.lastError = { code: apiErr.code, message: apiErr.message };
        this.pendingOffline.shift();
        continue;
      }
      this.pendingOffline.shift();
      flushed += 1;
    }
    return flushed;
  }
}
