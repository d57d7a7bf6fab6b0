/**
 * Typed client for the session gateway. The fetch implementation is
 * injectable so tests can replay recorded responses or use node's fetch
 * against a live server.
 */

export interface SessionSnapshot {
  id: string;
  state: string;
  round: number;
  step1_ready: boolean;
  stepn_ready: boolean;
  rounds_ready: number[];
  height: number;
  width: number;
}

export interface ClassOption {
  id: number;
  name: string;
}

export interface CreateResponse extends SessionSnapshot {
  classes: ClassOption[];
  lexicon_terms: string[];
}

export interface LedgerEntry {
  round: number;
  step: number;
  kind: string;
  nbytes: number;
}

export interface LedgerView {
  raw_bytes: number;
  entries: LedgerEntry[];
  semantic_bytes: number;
  feedback_bytes: number;
  cr: number | null;
}

export type Feedback =
  | { type: "label"; value: number }
  | { type: "text"; value: string };

export class GatewayError extends Error {
  constructor(
    public readonly code: string,
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) return;
  let code = "HttpError";
  let detail = `${res.status}`;
  try {
    const body = await res.json();
    code = body.error ?? code;
    detail = body.detail ?? detail;
  } catch {
    /* non-JSON error body */
  }
  throw new GatewayError(code, res.status, detail);
}

export class GatewayApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async createSession(sceneSeed?: number): Promise<CreateResponse> {
    const res = await this.fetchImpl(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(sceneSeed === undefined ? {} : { scene_seed: sceneSeed }),
    });
    await raiseForStatus(res);
    return res.json();
  }

  async getState(id: string): Promise<SessionSnapshot> {
    const res = await this.fetchImpl(this.url(`/sessions/${id}`));
    await raiseForStatus(res);
    return res.json();
  }

  async getReconstruction(id: string, round: number): Promise<Uint8Array> {
    const res = await this.fetchImpl(
      this.url(`/sessions/${id}/reconstruction?round=${round}`),
    );
    await raiseForStatus(res);
    return new Uint8Array(await res.arrayBuffer());
  }

  async postFeedback(id: string, feedback: Feedback): Promise<{ round: number }> {
    const res = await this.fetchImpl(this.url(`/sessions/${id}/feedback`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(feedback),
    });
    await raiseForStatus(res);
    return res.json();
  }

  async getLedger(id: string): Promise<LedgerView> {
    const res = await this.fetchImpl(this.url(`/sessions/${id}/ledger`));
    await raiseForStatus(res);
    return res.json();
  }
}
