"""Word and character error rates between reference and hypothesis
transcripts, at sentence and corpus level.

Corpus rates are pooled (total edits over total reference length), which
is the convention of the WER literature; mean-of-sentence rates are also
reported since published numbers do not always say which was used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import HarnessError
from .textproc import collapse_whitespace, tokenize


class EmptyReferenceError(HarnessError):
    code = "EMPTY_REFERENCE"


@dataclass(frozen=True)
class TranscriptPair:
    id: str
    reference: str
    hypothesis: str


@dataclass(frozen=True)
class EditOps:
    distance: int
    substitutions: int
    deletions: int
    insertions: int


def edit_distance(ref_units: Sequence, hyp_units: Sequence) -> EditOps:
    """Unit-cost Levenshtein distance with operation counts.

    Deletions remove reference units absent from the hypothesis;
    insertions are extra hypothesis units. distance == S + D + I.
    """
    n, m = len(ref_units), len(hyp_units)
    # dp[j] = (distance, subs, dels, ins) for ref[:i] vs hyp[:j]
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)] + [None] * m
        ref_unit = ref_units[i - 1]
        for j in range(1, m + 1):
            if ref_unit == hyp_units[j - 1]:
                cur[j] = prev[j - 1]
                continue
            sub = prev[j - 1]
            dele = prev[j]
            ins = cur[j - 1]
            best = min(sub[0], dele[0], ins[0])
            if sub[0] == best:
                cur[j] = (best + 1, sub[1] + 1, sub[2], sub[3])
            elif dele[0] == best:
                cur[j] = (best + 1, dele[1], dele[2] + 1, dele[3])
            else:
                cur[j] = (best + 1, ins[1], ins[2], ins[3] + 1)
        prev = cur
    d, s, dl, ins = prev[m]
    return EditOps(distance=d, substitutions=s, deletions=dl, insertions=ins)


Tokenizer = Callable[[str], list[str]]


def _char_units(text: str) -> list[str]:
    # Case-folded with whitespace runs collapsed; spaces are retained as units.
    return list(collapse_whitespace(text.lower()))


def _require_reference(units: Sequence, pair_id: str) -> None:
    if not units:
        raise EmptyReferenceError(
            f"pair {pair_id!r}: empty reference; error rate undefined", pair_id=pair_id
        )


def wer(pair: TranscriptPair, tokenizer: Tokenizer = tokenize) -> float:
    ref = tokenizer(pair.reference)
    _require_reference(ref, pair.id)
    hyp = tokenizer(pair.hypothesis)
    return edit_distance(ref, hyp).distance / len(ref)


def cer(pair: TranscriptPair) -> float:
    ref = _char_units(pair.reference)
    _require_reference(ref, pair.id)
    hyp = _char_units(pair.hypothesis)
    return edit_distance(ref, hyp).distance / len(ref)


@dataclass(frozen=True)
class PairErrorRates:
    id: str
    wer: float
    cer: float
    word_ops: EditOps
    word_ref_length: int
    char_ops: EditOps
    char_ref_length: int


@dataclass(frozen=True)
class ErrorRateReport:
    """Pooled corpus rates plus per-pair breakdown.

    The flat substitution/deletion/insertion counts and ref_length are
    word-level; character-level counterparts carry the char_ prefix.
    """

    wer: float
    cer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_length: int
    char_substitutions: int
    char_deletions: int
    char_insertions: int
    char_ref_length: int
    wer_mean: float
    cer_mean: float
    per_pair: tuple[PairErrorRates, ...]

    def to_dict(self) -> dict:
        return {
            "wer": self.wer,
            "cer": self.cer,
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_length": self.ref_length,
            "char_substitutions": self.char_substitutions,
            "char_deletions": self.char_deletions,
            "char_insertions": self.char_insertions,
            "char_ref_length": self.char_ref_length,
            "wer_mean": self.wer_mean,
            "cer_mean": self.cer_mean,
            "pairs": [
                {"id": p.id, "wer": p.wer, "cer": p.cer} for p in self.per_pair
            ],
        }


def corpus_error_rates(
    pairs: Sequence[TranscriptPair], tokenizer: Tokenizer = tokenize
) -> ErrorRateReport:
    """Pooled error rates: sum of edit distances over sum of reference
    lengths. Never the mean of per-sentence rates (that is reported
    separately as wer_mean/cer_mean)."""
    if not pairs:
        raise ValueError("corpus_error_rates requires at least one pair")

    breakdown = []
    for pair in pairs:
        ref_words = tokenizer(pair.reference)
        _require_reference(ref_words, pair.id)
        hyp_words = tokenizer(pair.hypothesis)
        ref_chars = _char_units(pair.reference)
        hyp_chars = _char_units(pair.hypothesis)
        word_ops = edit_distance(ref_words, hyp_words)
        char_ops = edit_distance(ref_chars, hyp_chars)
        breakdown.append(
            PairErrorRates(
                id=pair.id,
                wer=word_ops.distance / len(ref_words),
                cer=char_ops.distance / len(ref_chars),
                word_ops=word_ops,
                word_ref_length=len(ref_words),
                char_ops=char_ops,
                char_ref_length=len(ref_chars),
            )
        )

    word_ref = sum(p.word_ref_length for p in breakdown)
    char_ref = sum(p.char_ref_length for p in breakdown)
    word_dist = sum(p.word_ops.distance for p in breakdown)
    char_dist = sum(p.char_ops.distance for p in breakdown)
    return ErrorRateReport(
        wer=word_dist / word_ref,
        cer=char_dist / char_ref,
        substitutions=sum(p.word_ops.substitutions for p in breakdown),
        deletions=sum(p.word_ops.deletions for p in breakdown),
        insertions=sum(p.word_ops.insertions for p in breakdown),
        ref_length=word_ref,
        char_substitutions=sum(p.char_ops.substitutions for p in breakdown),
        char_deletions=sum(p.char_ops.deletions for p in breakdown),
        char_insertions=sum(p.char_ops.insertions for p in breakdown),
        char_ref_length=char_ref,
        wer_mean=sum(p.wer for p in breakdown) / len(breakdown),
        cer_mean=sum(p.cer for p in breakdown) / len(breakdown),
        per_pair=tuple(breakdown),
    )


def load_transcript_pairs(path) -> list[TranscriptPair]:
    """Read a transcript-pairs JSONL file: ``id, reference, hypothesis``."""
    from .records import iter_records

    pairs = []
    for line, rec in iter_records(path):
        for name in ("id", "reference", "hypothesis"):
            if name not in rec:
                raise ValueError(f"line {line}: missing field {name!r}")
        pairs.append(
            TranscriptPair(
                id=str(rec["id"]),
                reference=str(rec["reference"]),
                hypothesis=str(rec["hypothesis"]),
            )
        )
    return pairs
