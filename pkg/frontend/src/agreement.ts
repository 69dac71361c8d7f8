/** Rendering helpers for the live agreement table. The server computes
 * the correlations; the UI only formats them. */

import { AgreementRow } from './api.js';

export function formatCorrelation(value: number | null): string {
  return value === null ? '-' : value.toFixed(3);
}

export interface AgreementCells {
  pair: string;
  n: string;
  pearson: string;
  spearman: string;
  status: string;
}

export function agreementCells(row: AgreementRow): AgreementCells {
  return {
    pair: `${row.rater_a} vs ${row.rater_b}`,
    n: String(row.n),
    pearson: formatCorrelation(row.pearson_r),
    spearman: formatCorrelation(row.spearman_rho),
    status: row.status,
  };
}

/** Rows involving this rater first, then the rest, both alphabetical. */
export function orderForRater(rows: AgreementRow[], rater: string): AgreementRow[] {
  const mine = rows.filter((r) => r.rater_a === rater || r.rater_b === rater);
  const others = rows.filter((r) => r.rater_a !== rater && r.rater_b !== rater);
  const byPair = (a: AgreementRow, b: AgreementRow) =>
    `${a.rater_a}|${a.rater_b}`.localeCompare(`${b.rater_a}|${b.rater_b}`);
  return [...mine.sort(byPair), ...others.sort(byPair)];
}
