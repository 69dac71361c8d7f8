"""Text-generation metrics: BLEU, ROUGE, QA accuracy, and embedding-backed
semantic similarity, plus corpus-level scoring of a prediction run."""

from __future__ import annotations

import hashlib
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import DatasetManifest, QuestionType
from .errors import HarnessError
from .httpclient import RetryBudgetExceeded, RetryingPoster, resolve_api_key
from .predictions import Prediction
from .textproc import STOPWORDS, first_sentence, normalize_for_match, tokenize


class OrphanPredictionError(HarnessError):
    code = "ORPHAN_PREDICTION"


class ServiceUnavailableError(HarnessError):
    code = "SERVICE_UNAVAILABLE"


class DimensionMismatchError(HarnessError):
    code = "DIMENSION_MISMATCH"


# --- BLEU --------------------------------------------------------------------

class Smoothing(str, Enum):
    NONE = "NONE"
    ADD_ONE_POSITIVE_N = "ADD_ONE_POSITIVE_N"


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(
    references: Sequence[Sequence[str]], hypothesis: Sequence[str], n: int
) -> tuple[int, int]:
    """(clipped match count, hypothesis n-gram count) for order n."""
    hyp_counts = _ngram_counts(hypothesis, n)
    if not hyp_counts:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in references:
        max_ref |= _ngram_counts(ref, n)
    matches = sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
    return matches, sum(hyp_counts.values())


def _closest_ref_length(references: Sequence[Sequence[str]], hyp_len: int) -> int:
    # Standard convention: closest reference length, shorter one on ties.
    return min((abs(len(r) - hyp_len), len(r)) for r in references)[1]


def _bleu_from_stats(
    matches: Sequence[int],
    totals: Sequence[int],
    hyp_len: int,
    ref_len: int,
    smoothing: Smoothing,
) -> float:
    log_sum = 0.0
    for n0, (m, t) in enumerate(zip(matches, totals)):
        if smoothing is Smoothing.ADD_ONE_POSITIVE_N and n0 > 0:
            p = (m + 1) / (t + 1)
        else:
            if m == 0 or t == 0:
                return 0.0
            p = m / t
        log_sum += math.log(p)
    geo_mean = math.exp(log_sum / len(matches))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * geo_mean


def bleu(
    references: Sequence[Sequence[str]],
    hypothesis: Sequence[str],
    max_n: int = 4,
    smoothing: Smoothing = Smoothing.NONE,
) -> float:
    """Sentence BLEU: geometric mean of clipped modified n-gram precisions
    (n = 1..max_n) times the brevity penalty exp(1 - r/c) for c < r.

    ADD_ONE_POSITIVE_N smoothing adds one to numerator and denominator of
    every precision above unigram order. An empty hypothesis scores 0.
    """
    if not references:
        raise ValueError("bleu requires at least one reference")
    if not hypothesis:
        return 0.0
    stats = [_clipped_matches(references, hypothesis, n) for n in range(1, max_n + 1)]
    matches = [m for m, _ in stats]
    totals = [t for _, t in stats]
    ref_len = _closest_ref_length(references, len(hypothesis))
    return _bleu_from_stats(matches, totals, len(hypothesis), ref_len, smoothing)


def corpus_bleu(
    pairs: Sequence[tuple[Sequence[Sequence[str]], Sequence[str]]],
    max_n: int = 4,
    smoothing: Smoothing = Smoothing.NONE,
) -> float:
    """Corpus BLEU: n-gram statistics pooled over all pairs before the
    geometric mean; brevity penalty from summed lengths."""
    if not pairs:
        raise ValueError("corpus_bleu requires at least one pair")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for references, hypothesis in pairs:
        if not references:
            raise ValueError("corpus_bleu pair with no references")
        hyp_len += len(hypothesis)
        ref_len += _closest_ref_length(references, len(hypothesis))
        for n in range(1, max_n + 1):
            m, t = _clipped_matches(references, hypothesis, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if hyp_len == 0:
        return 0.0
    return _bleu_from_stats(matches, totals, hyp_len, ref_len, smoothing)


# --- ROUGE -------------------------------------------------------------------

class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def _prf(matches: int, hyp_len: int, ref_len: int) -> RougeScore:
    if hyp_len == 0 or ref_len == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = matches / hyp_len
    r = matches / ref_len
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return RougeScore(p, r, f1)


def rouge_l(reference: Sequence[str], hypothesis: Sequence[str]) -> RougeScore:
    """LCS-based ROUGE: P = LCS/|hyp|, R = LCS/|ref|. Either side empty
    gives all zeros."""
    return _prf(_lcs_length(reference, hypothesis), len(hypothesis), len(reference))


def rouge_1(reference: Sequence[str], hypothesis: Sequence[str]) -> RougeScore:
    """Unigram-overlap ROUGE, available for sensitivity analysis."""
    overlap = sum((Counter(reference) & Counter(hypothesis)).values())
    return _prf(overlap, len(hypothesis), len(reference))


class RougeVariant(str, Enum):
    L = "L"
    ONE = "1"


def rouge(
    reference: Sequence[str],
    hypothesis: Sequence[str],
    variant: RougeVariant = RougeVariant.L,
) -> RougeScore:
    fn = rouge_l if variant is RougeVariant.L else rouge_1
    return fn(reference, hypothesis)


# --- QA accuracy --------------------------------------------------------------

_POLARITY = {"yes", "no"}
_OPPOSITE = {"yes": "no", "no": "yes"}


def closed_accuracy(prediction: str, answer: str) -> bool:
    """Hit when the normalized texts match exactly, or, for yes/no answers,
    when the prediction's first sentence contains the right polarity token
    and not its opposite."""
    pred_norm = normalize_for_match(prediction)
    ans_norm = normalize_for_match(answer)
    if pred_norm == ans_norm:
        return True
    if ans_norm in _POLARITY:
        head = set(normalize_for_match(first_sentence(prediction)).split())
        return ans_norm in head and _OPPOSITE[ans_norm] not in head
    return False


def open_accuracy(prediction: str, answer: str) -> float:
    """Token recall: fraction of unique ground-truth content tokens
    (stopwords removed) present in the prediction."""
    answer_tokens = {
        t for t in normalize_for_match(answer).split() if t not in STOPWORDS
    }
    if not answer_tokens:
        return 0.0
    pred_tokens = set(normalize_for_match(prediction).split())
    return len(answer_tokens & pred_tokens) / len(answer_tokens)


# --- semantic similarity ------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingServiceConfig:
    base_url: str
    model_name: str
    dimension: int
    api_key_env: str | None = None
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_base_s: float = 0.2

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("embedding dimension must be positive")


class EmbeddingClient:
    """Client for a text-embedding endpoint; results are cached by text
    hash so repeated texts never hit the service twice."""

    def __init__(self, cfg: EmbeddingServiceConfig):
        self.cfg = cfg
        self._poster = RetryingPoster(
            max_attempts=cfg.max_attempts,
            timeout_s=cfg.timeout_s,
            backoff_base_s=cfg.backoff_base_s,
            api_key=resolve_api_key(cfg.api_key_env),
        )
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def close(self) -> None:
        self._poster.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def requests_made(self) -> int:
        return self._poster.requests_made

    @staticmethod
    def _text_key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def embed(self, text: str) -> np.ndarray:
        key = self._text_key(text)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        try:
            response = self._poster.post(
                self.cfg.base_url,
                json={"model": self.cfg.model_name, "texts": [text]},
            )
        except RetryBudgetExceeded as exc:
            raise ServiceUnavailableError(str(exc)) from exc
        if response.status_code != 200:
            raise ServiceUnavailableError(
                f"embedding service returned HTTP {response.status_code}"
            )
        payload = response.json()
        vectors = payload.get("vectors")
        if not vectors:
            raise ServiceUnavailableError("embedding response missing 'vectors'")
        vec = np.asarray(vectors[0], dtype=np.float64)
        if vec.shape != (self.cfg.dimension,):
            raise DimensionMismatchError(
                f"expected dimension {self.cfg.dimension}, got {vec.shape}"
            )
        with self._lock:
            self._cache[key] = vec
        return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def semantic_similarity(
    prediction: str, answer: str, client: EmbeddingClient
) -> float:
    """Cosine similarity between service embeddings of the two texts."""
    return cosine_similarity(client.embed(prediction), client.embed(answer))


# --- run scoring ---------------------------------------------------------------

@dataclass(frozen=True)
class ScoredPrediction:
    sample_id: str
    bleu: float
    rouge_l: float
    accuracy_hit: bool | None = None
    open_recall: float | None = None
    semantic_similarity: float | None = None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
            "accuracy_hit": self.accuracy_hit,
            "open_recall": self.open_recall,
            "semantic_similarity": self.semantic_similarity,
        }


@dataclass(frozen=True)
class MetricReport:
    """Aggregated corpus scores for one (model, input mode) run."""

    model_id: str
    input_mode: str
    n_scored: int
    corpus_bleu: float
    mean_rouge_l_f1: float
    closed_accuracy_pct: float | None
    open_accuracy_pct: float | None
    overall_accuracy_pct: float | None
    mean_semantic_similarity: float | None
    missing: tuple[str, ...]
    per_sample: tuple[ScoredPrediction, ...]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "input_mode": self.input_mode,
            "n_scored": self.n_scored,
            "corpus_bleu": self.corpus_bleu,
            "mean_rouge_l_f1": self.mean_rouge_l_f1,
            "closed_accuracy_pct": self.closed_accuracy_pct,
            "open_accuracy_pct": self.open_accuracy_pct,
            "overall_accuracy_pct": self.overall_accuracy_pct,
            "mean_semantic_similarity": self.mean_semantic_similarity,
            "missing": list(self.missing),
            "per_sample": [s.to_dict() for s in self.per_sample],
        }


@dataclass(frozen=True)
class ScoreConfig:
    bleu_max_n: int = 4
    bleu_smoothing: Smoothing = Smoothing.NONE
    sentence_bleu_smoothing: Smoothing = Smoothing.ADD_ONE_POSITIVE_N
    rouge_variant: RougeVariant = RougeVariant.L
    embedding: EmbeddingServiceConfig | None = field(default=None)


def _score_group(
    manifest: DatasetManifest,
    group: list[Prediction],
    cfg: ScoreConfig,
    embed_client: EmbeddingClient | None,
) -> MetricReport:
    samples = manifest.by_id()
    predicted_ids = {p.sample_id for p in group}
    missing = tuple(s.id for s in manifest.samples if s.id not in predicted_ids)

    scored: list[ScoredPrediction] = []
    bleu_pairs = []
    for pred in group:
        sample = samples[pred.sample_id]
        ref_tokens = tokenize(sample.answer_text)
        hyp_tokens = tokenize(pred.prediction)
        bleu_pairs.append(([ref_tokens], hyp_tokens))
        sent_bleu = bleu(
            [ref_tokens], hyp_tokens, cfg.bleu_max_n, cfg.sentence_bleu_smoothing
        )
        rouge_score = rouge(ref_tokens, hyp_tokens, cfg.rouge_variant)
        hit = recall = None
        if sample.question_type is QuestionType.CLOSED:
            hit = closed_accuracy(pred.prediction, sample.answer_text)
        else:
            recall = open_accuracy(pred.prediction, sample.answer_text)
        sim = None
        if embed_client is not None:
            sim = semantic_similarity(pred.prediction, sample.answer_text, embed_client)
        scored.append(
            ScoredPrediction(
                sample_id=pred.sample_id,
                bleu=sent_bleu,
                rouge_l=rouge_score.f1,
                accuracy_hit=hit,
                open_recall=recall,
                semantic_similarity=sim,
            )
        )

    hits = [s.accuracy_hit for s in scored if s.accuracy_hit is not None]
    recalls = [s.open_recall for s in scored if s.open_recall is not None]
    sims = [s.semantic_similarity for s in scored if s.semantic_similarity is not None]
    accuracy_values = [float(h) for h in hits] + recalls
    mode = group[0].input_mode.value
    return MetricReport(
        model_id=group[0].model_id,
        input_mode=mode,
        n_scored=len(scored),
        corpus_bleu=(
            corpus_bleu(bleu_pairs, cfg.bleu_max_n, cfg.bleu_smoothing)
            if bleu_pairs
            else 0.0
        ),
        mean_rouge_l_f1=(
            sum(s.rouge_l for s in scored) / len(scored) if scored else 0.0
        ),
        closed_accuracy_pct=(100.0 * sum(hits) / len(hits)) if hits else None,
        open_accuracy_pct=(100.0 * sum(recalls) / len(recalls)) if recalls else None,
        overall_accuracy_pct=(
            100.0 * sum(accuracy_values) / len(accuracy_values)
            if accuracy_values
            else None
        ),
        mean_semantic_similarity=(sum(sims) / len(sims)) if sims else None,
        missing=missing,
        per_sample=tuple(scored),
    )


def score_run(
    manifest: DatasetManifest,
    predictions: Sequence[Prediction],
    cfg: ScoreConfig = ScoreConfig(),
) -> list[MetricReport]:
    """Score predictions against a manifest, one report per (model, mode).

    Unknown sample ids are an error; samples without predictions are
    reported as coverage gaps on the matching report.
    """
    samples = manifest.by_id()
    for pred in predictions:
        if pred.sample_id not in samples:
            raise OrphanPredictionError(
                f"prediction references unknown sample id {pred.sample_id!r}",
                sample_id=pred.sample_id,
            )

    groups: dict[tuple[str, str], list[Prediction]] = {}
    for pred in predictions:
        groups.setdefault((pred.model_id, pred.input_mode.value), []).append(pred)

    embed_client = EmbeddingClient(cfg.embedding) if cfg.embedding else None
    try:
        if not groups:
            # No predictions at all: emit one empty report so the coverage
            # gap (every sample missing) is still visible downstream.
            return [
                MetricReport(
                    model_id="",
                    input_mode="",
                    n_scored=0,
                    corpus_bleu=0.0,
                    mean_rouge_l_f1=0.0,
                    closed_accuracy_pct=None,
                    open_accuracy_pct=None,
                    overall_accuracy_pct=None,
                    mean_semantic_similarity=None,
                    missing=tuple(s.id for s in manifest.samples),
                    per_sample=(),
                )
            ]
        return [
            _score_group(manifest, group, cfg, embed_client)
            for _, group in sorted(groups.items())
        ]
    finally:
        if embed_client is not None:
            embed_client.close()
