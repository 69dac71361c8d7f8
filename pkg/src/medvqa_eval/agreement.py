"""Pearson and Spearman correlations between rater score vectors.

Constant vectors make the correlation undefined; that is always surfaced
as an explicit DEGENERATE status, never as a NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import HarnessError

STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate"


class DegenerateInputError(HarnessError):
    code = "DEGENERATE"


def rank_average_ties(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values receive the mean of the ranks they span."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; clipped to [-1, 1] against float noise."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError("pearson requires equal-length vectors")
    if a.size < 2:
        raise DegenerateInputError(f"need at least 2 points, got {a.size}", n=int(a.size))
    a = a - a.mean()
    b = b - b.mean()
    denom = float(np.sqrt(np.sum(a * a) * np.sum(b * b)))
    if denom == 0.0 or not np.isfinite(denom):
        raise DegenerateInputError("constant vector; correlation undefined")
    r = float(np.sum(a * b) / denom)
    return max(-1.0, min(1.0, r))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-ranked data."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ValueError("spearman requires equal-length vectors")
    if a.size < 2:
        raise DegenerateInputError(f"need at least 2 points, got {a.size}", n=int(a.size))
    return pearson(rank_average_ties(a), rank_average_ties(b))


@dataclass(frozen=True)
class ScoreVector:
    """One rater's scores keyed by sample id, in a fixed order."""

    rater_id: str
    scores: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = [sid for sid, _ in self.scores]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate sample ids in vector for {self.rater_id!r}")

    def as_dict(self) -> dict[str, float]:
        return dict(self.scores)


@dataclass(frozen=True)
class AgreementResult:
    rater_a: str
    rater_b: str
    n: int
    pearson_r: float | None
    spearman_rho: float | None
    status: str = STATUS_OK

    def to_dict(self) -> dict:
        return {
            "rater_a": self.rater_a,
            "rater_b": self.rater_b,
            "n": self.n,
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "status": self.status,
        }


def agreement_pair(a: ScoreVector, b: ScoreVector) -> AgreementResult:
    """Correlations over the intersection of sample ids, aligned by id."""
    b_scores = b.as_dict()
    shared = [(sid, score, b_scores[sid]) for sid, score in a.scores if sid in b_scores]
    n = len(shared)
    if n < 2:
        return AgreementResult(a.rater_id, b.rater_id, n, None, None, STATUS_DEGENERATE)
    xs = [s for _, s, _ in shared]
    ys = [s for _, _, s in shared]
    try:
        r = pearson(xs, ys)
        rho = spearman(xs, ys)
    except DegenerateInputError:
        return AgreementResult(a.rater_id, b.rater_id, n, None, None, STATUS_DEGENERATE)
    return AgreementResult(a.rater_id, b.rater_id, n, r, rho)


def agreement_matrix(vectors: Sequence[ScoreVector]) -> list[AgreementResult]:
    if len(vectors) < 2:
        raise ValueError("agreement_matrix requires at least two score vectors")
    results = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            results.append(agreement_pair(vectors[i], vectors[j]))
    return results
