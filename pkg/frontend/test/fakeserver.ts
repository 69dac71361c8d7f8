/**
 * In-memory stand-in for the review API: same endpoints, same error
 * codes, same queue/resume semantics, so the session logic can be tested
 * without a running harness.
 */

import { QueueResponse, ReviewItem, VerdictRecord } from '../src/api.js';

function pearson(x: number[], y: number[]): number | null {
  const n = x.length;
  if (n < 2) return null;
  const mx = x.reduce((a, b) => a + b, 0) / n;
  const my = y.reduce((a, b) => a + b, 0) / n;
  let sxy = 0;
  let sxx = 0;
  let syy = 0;
  for (let i = 0; i < n; i++) {
    const dx = (x[i] as number) - mx;
    const dy = (y[i] as number) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx === 0 || syy === 0) return null;
  return Math.max(-1, Math.min(1, sxy / Math.sqrt(sxx * syy)));
}

function ranks(values: number[]): number[] {
  const order = values
    .map((v, i) => [v, i] as const)
    .sort((a, b) => a[0] - b[0]);
  const out = new Array<number>(values.length);
  let i = 0;
  while (i < order.length) {
    let j = i;
    while (j + 1 < order.length && order[j + 1]![0] === order[i]![0]) j++;
    const rank = (i + j) / 2 + 1;
    for (let k = i; k <= j; k++) out[order[k]![1]] = rank;
    i = j + 1;
  }
  return out;
}

export function makeItems(n: number): ReviewItem[] {
  return Array.from({ length: n }, (_, i) => ({
    sample: {
      id: `s${String(i).padStart(4, '0')}`,
      question: `Is organ ${i} healthy?`,
      answer: `No, organ ${i} is abnormal. There are lesions.`,
      modality: 'XRAY',
      organ: 'lung',
      split: 'TEST',
      question_type: 'CLOSED',
      image_url: `/api/media/images/images/s${i}.png`,
      audio_url: `/api/media/audio/ab/s${i}.wav`,
    },
    prediction: `Yes, organ ${i} looks fine. No changes seen.`,
    model_id: 'm1',
    input_mode: 'speech',
    own_verdicts: null,
    done: false,
  }));
}

export class FakeServer {
  verdicts: VerdictRecord[] = [];
  offline = false;
  /** error codes to inject on upcoming verdict POSTs (one per request) */
  rejectQueue: string[] = [];
  requests = 0;

  constructor(readonly items: ReviewItem[] = makeItems(10)) {}

  private doneFor(rater: string): Set<string> {
    const kinds = new Map<string, Set<string>>();
    for (const v of this.verdicts) {
      if (v.rater_id !== rater) continue;
      if (!kinds.has(v.sample_id)) kinds.set(v.sample_id, new Set());
      kinds.get(v.sample_id)!.add(v.kind);
    }
    return new Set(
      [...kinds.entries()].filter(([, ks]) => ks.size === 2).map(([sid]) => sid),
    );
  }

  private queue(rater: string): QueueResponse {
    const done = this.doneFor(rater);
    const items = this.items.map((item) => ({
      ...item,
      done: done.has(item.sample.id),
    }));
    const resume = items.findIndex((item) => !item.done);
    return {
      rater,
      items,
      resume_index: resume === -1 ? items.length : resume,
    };
  }

  private agreement() {
    const raters = [...new Set(this.verdicts.map((v) => v.rater_id))].sort();
    const results = [];
    for (let i = 0; i < raters.length; i++) {
      for (let j = i + 1; j < raters.length; j++) {
        const a = raters[i]!;
        const b = raters[j]!;
        const scoresA = new Map<string, number>();
        const scoresB = new Map<string, number>();
        for (const v of this.verdicts) {
          if (v.kind !== 'reasoning' || v.level === undefined) continue;
          if (v.rater_id === a) scoresA.set(v.sample_id, v.level);
          if (v.rater_id === b) scoresB.set(v.sample_id, v.level);
        }
        const shared = [...scoresA.keys()].filter((s) => scoresB.has(s));
        const x = shared.map((s) => scoresA.get(s)!);
        const y = shared.map((s) => scoresB.get(s)!);
        const r = pearson(x, y);
        const rho = r === null ? null : pearson(ranks(x), ranks(y));
        results.push({
          rater_a: a,
          rater_b: b,
          n: shared.length,
          pearson_r: r,
          spearman_rho: rho,
          status: r === null ? 'degenerate' : 'ok',
        });
      }
    }
    return { results };
  }

  private postVerdict(body: VerdictRecord): Response {
    const injected = this.rejectQueue.shift();
    if (injected) {
      return json({ error: { code: injected, message: 'injected rejection' } }, 400);
    }
    if (!body.sample_id) {
      return json({ error: { code: 'MISSING_FIELD', message: 'sample_id required' } }, 400);
    }
    if (!this.items.some((i) => i.sample.id === body.sample_id)) {
      return json({ error: { code: 'UNKNOWN_SAMPLE', message: 'no such sample' } }, 404);
    }
    if (body.kind === 'reasoning') {
      const level = body.level;
      if (typeof level !== 'number' || ![0, 1, 2, 3].includes(level)) {
        return json(
          { error: { code: 'OUT_OF_RANGE_LEVEL', message: `level ${level} outside 0..3` } },
          400,
        );
      }
    }
    // latest record wins for (sample, rater, round, kind)
    this.verdicts = this.verdicts.filter(
      (v) =>
        !(
          v.sample_id === body.sample_id &&
          v.rater_id === body.rater_id &&
          v.round === body.round &&
          v.kind === body.kind
        ),
    );
    this.verdicts.push(body);
    return json({ ok: true, verdict: body });
  }

  fetch = async (input: string | URL | Request, init?: RequestInit): Promise<Response> => {
    this.requests += 1;
    if (this.offline) throw new TypeError('fetch failed (offline)');
    const url = new URL(String(input), 'http://fake');
    const path = url.pathname;
    if (path === '/api/queue') {
      return json(this.queue(url.searchParams.get('rater') ?? ''));
    }
    if (path === '/api/progress') {
      const rater = url.searchParams.get('rater') ?? '';
      const done = this.doneFor(rater);
      const completed = this.items.filter((i) => done.has(i.sample.id)).length;
      const position = this.queue(rater).resume_index;
      return json({ rater, completed, total: this.items.length, position });
    }
    if (path === '/api/verdicts' && init?.method === 'POST') {
      return this.postVerdict(JSON.parse(String(init.body)) as VerdictRecord);
    }
    if (path === '/api/agreement') {
      return json(this.agreement());
    }
    return json({ error: { code: 'NOT_FOUND', message: path } }, 404);
  };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}
