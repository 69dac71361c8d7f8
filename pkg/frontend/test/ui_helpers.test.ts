import { describe, expect, it } from 'vitest';

import { agreementCells, formatCorrelation, orderForRater } from '../src/agreement.js';
import { actionForKey } from '../src/keyboard.js';
import type { AgreementRow } from '../src/api.js';

describe('keyboard shortcuts', () => {
  it('maps digits to levels', () => {
    expect(actionForKey('0')).toEqual({ kind: 'level', level: 0 });
    expect(actionForKey('3')).toEqual({ kind: 'level', level: 3 });
  });

  it('maps p/f to structure verdicts', () => {
    expect(actionForKey('p')).toEqual({ kind: 'structure', ok: true });
    expect(actionForKey('F')).toEqual({ kind: 'structure', ok: false });
  });

  it('maps enter and r', () => {
    expect(actionForKey('Enter')).toEqual({ kind: 'submit' });
    expect(actionForKey('r')).toEqual({ kind: 'revise' });
  });

  it('ignores unrelated keys', () => {
    expect(actionForKey('4')).toBeNull();
    expect(actionForKey('x')).toBeNull();
    expect(actionForKey('Escape')).toBeNull();
  });
});

describe('agreement formatting', () => {
  const row: AgreementRow = {
    rater_a: 'exp1',
    rater_b: 'gpt-judge',
    n: 148,
    pearson_r: 0.98765,
    spearman_rho: 1,
    status: 'ok',
  };

  it('renders correlations to three decimals', () => {
    expect(formatCorrelation(1)).toBe('1.000');
    expect(formatCorrelation(0.98765)).toBe('0.988');
    expect(formatCorrelation(null)).toBe('-');
  });

  it('builds table cells', () => {
    expect(agreementCells(row)).toEqual({
      pair: 'exp1 vs gpt-judge',
      n: '148',
      pearson: '0.988',
      spearman: '1.000',
      status: 'ok',
    });
  });

  it('orders own pairs first', () => {
    const rows: AgreementRow[] = [
      { ...row, rater_a: 'a', rater_b: 'b' },
      { ...row, rater_a: 'exp1', rater_b: 'z' },
      { ...row, rater_a: 'b', rater_b: 'exp1' },
    ];
    const ordered = orderForRater(rows, 'exp1');
    expect(ordered.slice(0, 2).every((r) => r.rater_a === 'exp1' || r.rater_b === 'exp1')).toBe(
      true,
    );
    expect(ordered[2]).toMatchObject({ rater_a: 'a', rater_b: 'b' });
  });
});
