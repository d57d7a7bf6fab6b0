/**
 * Session view-model: polling, round gallery, ledger, feedback gating.
 *
 * No semantic computation happens here — every number and pixel shown is
 * fetched from the gateway. The displayed compression rate in particular
 * is the ledger's `cr` field verbatim.
 */

import { GatewayApi, GatewayError, Feedback, LedgerView, ClassOption } from "./api.js";

export interface RoundImage {
  round: number;
  ppm: Uint8Array;
}

export interface CompareSelection {
  a: number;
  b: number;
}

type Listener = () => void;

export class SessionController {
  sessionId: string | null = null;
  state = "Disconnected";
  round = 0;
  classes: ClassOption[] = [];
  lexiconTerms: string[] = [];
  gallery = new Map<number, RoundImage>();
  ledger: LedgerView | null = null;
  errorMessage: string | null = null;
  errorCode: string | null = null;
  hint: string[] = [];
  compare: CompareSelection | null = null;
  feedbackInFlight = false;

  private listeners: Listener[] = [];
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private readonly api: GatewayApi,
    private readonly pollIntervalMs = 500,
  ) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l();
  }

  async start(sceneSeed?: number): Promise<void> {
    try {
      const created = await this.api.createSession(sceneSeed);
      this.sessionId = created.id;
      this.state = created.state;
      this.round = created.round;
      this.classes = created.classes;
      this.lexiconTerms = created.lexicon_terms;
      this.errorMessage = null;
      this.errorCode = null;
      this.emit();
      await this.refresh();
      this.schedulePoll();
    } catch (err) {
      this.fail(err);
    }
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) clearTimeout(this.timer);
  }

  /** One poll step: session state, missing round images, ledger. */
  async refresh(): Promise<void> {
    if (!this.sessionId) return;
    const snapshot = await this.api.getState(this.sessionId);
    this.state = snapshot.state;
    this.round = snapshot.round;
    for (const round of snapshot.rounds_ready) {
      if (!this.gallery.has(round)) {
        const ppm = await this.api.getReconstruction(this.sessionId, round);
        this.gallery.set(round, { round, ppm });
      }
    }
    this.ledger = await this.api.getLedger(this.sessionId);
    this.emit();
  }

  private schedulePoll(): void {
    if (this.stopped) return;
    this.timer = setTimeout(async () => {
      // polling pauses while a modal error is displayed
      if (this.errorMessage === null) {
        try {
          await this.refresh();
        } catch (err) {
          this.fail(err);
        }
      }
      this.schedulePoll();
    }, this.pollIntervalMs);
  }

  /**
   * Submit label or text feedback. Resolves when the gateway accepted it;
   * the refined round appears in the gallery via polling. At most one
   * feedback request is in flight at a time.
   */
  async submitFeedback(feedback: Feedback): Promise<boolean> {
    if (!this.sessionId || this.feedbackInFlight) return false;
    this.feedbackInFlight = true;
    this.emit();
    try {
      const ack = await this.api.postFeedback(this.sessionId, feedback);
      this.round = ack.round;
      this.hint = [];
      return true;
    } catch (err) {
      if (err instanceof GatewayError && err.code === "FeedbackUnresolved") {
        // show the lexicon as a hint instead of a modal error
        this.hint = this.lexiconTerms;
        return false;
      }
      this.fail(err);
      return false;
    } finally {
      this.feedbackInFlight = false;
      this.emit();
    }
  }

  selectCompare(a: number, b: number): void {
    if (this.gallery.has(a) && this.gallery.has(b)) {
      this.compare = { a, b };
      this.emit();
    }
  }

  /** Semantic bytes the gateway recorded for one round, straight from entries. */
  roundBytes(round: number): number {
    if (!this.ledger) return 0;
    return this.ledger.entries
      .filter((e) => e.kind === "semantic" && e.round === round)
      .reduce((acc, e) => acc + e.nbytes, 0);
  }

  dismissError(): void {
    this.errorMessage = null;
    this.errorCode = null;
    this.emit();
  }

  private fail(err: unknown): void {
    if (err instanceof GatewayError) {
      this.errorCode = err.code;
      this.errorMessage = err.message;
    } else {
      this.errorCode = "ConnectionError";
      this.errorMessage = String(err);
    }
    this.emit();
  }
}
