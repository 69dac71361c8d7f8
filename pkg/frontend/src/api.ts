/**
 * Typed client for the harness review REST API. The UI never touches
 * files directly; everything flows through these endpoints.
 */

export interface SampleView {
  id: string;
  question: string;
  answer: string;
  modality: string;
  organ: string;
  split: string;
  question_type: string;
  image_url: string | null;
  audio_url: string | null;
}

export interface VerdictRecord {
  sample_id: string;
  rater_id: string;
  round: number;
  kind: 'structure' | 'reasoning';
  structure_ok?: boolean;
  level?: number;
  rationale?: string;
}

export interface ReviewItem {
  sample: SampleView;
  prediction: string;
  model_id: string;
  input_mode: string;
  own_verdicts: Partial<Record<'structure' | 'reasoning', VerdictRecord>> | null;
  done: boolean;
}

export interface QueueResponse {
  rater: string;
  items: ReviewItem[];
  resume_index: number;
}

export interface ProgressResponse {
  rater: string;
  completed: number;
  total: number;
  position: number;
}

export interface AgreementRow {
  rater_a: string;
  rater_b: string;
  n: number;
  pearson_r: number | null;
  spearman_rho: number | null;
  status: 'ok' | 'degenerate';
}

/** Server rejected the request with a structured error record. */
export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

/** Transport-level failure (offline, server unreachable). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = 'NetworkError';
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON body; fall through to the status check
    }
    if (!response.ok) {
      const err = (body as { error?: { code?: string; message?: string } })?.error;
      throw new ApiError(
        err?.code ?? 'HTTP_ERROR',
        err?.message ?? `HTTP ${response.status}`,
        response.status,
      );
    }
    return body as T;
  }

  loadQueue(rater: string): Promise<QueueResponse> {
    return this.request(`/api/queue?rater=${encodeURIComponent(rater)}`);
  }

  progress(rater: string): Promise<ProgressResponse> {
    return this.request(`/api/progress?rater=${encodeURIComponent(rater)}`);
  }

  submitVerdict(verdict: VerdictRecord): Promise<{ ok: boolean; verdict: VerdictRecord }> {
    return this.request('/api/verdicts', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json', 'X-Rater': verdict.rater_id },
      body: JSON.stringify(verdict),
    });
  }

  agreement(): Promise<{ results: AgreementRow[] }> {
    return this.request('/api/agreement');
  }
}
