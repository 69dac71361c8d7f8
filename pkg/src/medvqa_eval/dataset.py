"""Dataset schema, manifest parsing/validation, question normalization.

The manifest is a JSONL file, one sample per line, with the wire fields
``id, image, modality, organ, question, answer, split, question_type?,
audio?``. Unknown fields are preserved verbatim so annotation metadata
(e.g. bounding boxes) can ride along untouched.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import HarnessError
from .records import dump_record, iter_records, write_records
from .textproc import collapse_whitespace, count_sentence_terminators


class ManifestError(HarnessError):
    """Base for manifest load failures; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None, **context):
        if line is not None:
            message = f"line {line}: {message}"
            context["line"] = line
        super().__init__(message, **context)


class MalformedRecordError(ManifestError):
    code = "MALFORMED_RECORD"


class DuplicateIdError(ManifestError):
    code = "DUPLICATE_ID"


class MissingFieldError(ManifestError):
    code = "MISSING_FIELD"


class UnknownEnumError(ManifestError):
    code = "UNKNOWN_ENUM"


class Modality(str, Enum):
    MRI = "MRI"
    CT = "CT"
    XRAY = "XRAY"


class Split(str, Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


class QuestionType(str, Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"


class NumberStyle(str, Enum):
    SPELL_OUT = "SPELL_OUT"
    KEEP_DIGITS = "KEEP_DIGITS"


_MODALITY_ALIASES = {
    "mri": Modality.MRI,
    "ct": Modality.CT,
    "xray": Modality.XRAY,
    "x-ray": Modality.XRAY,
    "x_ray": Modality.XRAY,
}


def _parse_enum(kind: str, raw: object, table: dict, line: int):
    key = str(raw).strip().lower()
    if key not in table:
        raise UnknownEnumError(f"unknown {kind} {raw!r}", line=line)
    return table[key]


@dataclass(frozen=True)
class Sample:
    id: str
    image_path: str
    modality: Modality
    organ: str
    question_text: str
    normalized_question_text: str
    answer_text: str
    split: Split
    question_type: QuestionType
    audio_ref: str | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = dict(self.extra)
        rec.update(
            id=self.id,
            image=self.image_path,
            modality=self.modality.value,
            organ=self.organ,
            question=self.question_text,
            answer=self.answer_text,
            split=self.split.value,
            question_type=self.question_type.value,
        )
        if self.audio_ref is not None:
            rec["audio"] = self.audio_ref
        return rec


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    samples: tuple[Sample, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def counts_by_modality(self) -> dict[Modality, int]:
        return dict(Counter(s.modality for s in self.samples))

    def counts_by_split(self) -> dict[Split, int]:
        return dict(Counter(s.split for s in self.samples))

    def counts_by_split_modality(self) -> dict[tuple[Split, Modality], int]:
        return dict(Counter((s.split, s.modality) for s in self.samples))

    def with_samples(self, samples: Iterable[Sample]) -> "DatasetManifest":
        return replace(self, samples=tuple(samples))


# --- question normalization -------------------------------------------------

_UNITS = "zero one two three four five six seven eight nine".split()
_TEENS = ("ten eleven twelve thirteen fourteen fifteen sixteen seventeen "
          "eighteen nineteen").split()
_TENS = "twenty thirty forty fifty sixty seventy eighty ninety".split()


def _spell_int(n: int) -> str:
    if n < 10:
        return _UNITS[n]
    if n < 20:
        return _TEENS[n - 10]
    if n < 100:
        tens, unit = divmod(n, 10)
        word = _TENS[tens - 2]
        return word if unit == 0 else f"{word} {_UNITS[unit]}"
    if n < 1000:
        hundreds, rest = divmod(n, 100)
        word = f"{_UNITS[hundreds]} hundred"
        return word if rest == 0 else f"{word} {_spell_int(rest)}"
    # Long digit runs are read out digit by digit; good enough for speech.
    return " ".join(_UNITS[int(d)] for d in str(n))


def _spell_numbers(text: str) -> str:
    return re.sub(r"\d+", lambda m: _spell_int(int(m.group())), text)


_TAG_RE = re.compile(r"<[^<>]{0,64}>")


def _strip_markup(text: str) -> str:
    # Iterate to a fixed point so nested constructs cannot survive one pass
    # and reappear after a second normalization.
    while True:
        stripped = _TAG_RE.sub(" ", text)
        if stripped == text:
            return text
        text = stripped


@dataclass(frozen=True)
class NormalizationRuleSet:
    """Rules applied to question text before speech synthesis.

    Construction validates that the rules can never re-trigger on their own
    output, which makes :func:`normalize_question` idempotent for every
    input string.
    """

    abbreviation_map: dict[str, str] = field(default_factory=dict)
    number_style: NumberStyle = NumberStyle.SPELL_OUT
    strip_markup: bool = True

    def __post_init__(self):
        seen = set()
        for key, expansion in self.abbreviation_map.items():
            if not key or not key.strip():
                raise ValueError("abbreviation keys must be non-empty")
            if re.search(r"\s", key):
                raise ValueError(f"abbreviation key {key!r} must be a single token")
            low = key.lower()
            if low in seen:
                raise ValueError(f"abbreviation key {key!r} repeats case-insensitively")
            seen.add(low)
            if self.number_style is NumberStyle.SPELL_OUT and re.search(r"\d", expansion):
                raise ValueError(
                    f"expansion for {key!r} contains digits; not allowed with SPELL_OUT"
                )
            if self.strip_markup and re.search(r"[<>]", expansion):
                raise ValueError(
                    f"expansion for {key!r} contains markup delimiters"
                )
        for key, expansion in self.abbreviation_map.items():
            for word in re.findall(r"\S+", expansion):
                if word.lower() in seen:
                    raise ValueError(
                        f"expansion for {key!r} contains abbreviation key {word!r}; "
                        "rules would not be idempotent"
                    )

    def _pattern(self) -> re.Pattern | None:
        if not self.abbreviation_map:
            return None
        alts = sorted(self.abbreviation_map, key=len, reverse=True)
        joined = "|".join(re.escape(k) for k in alts)
        return re.compile(rf"(?<!\w)({joined})(?!\w)", re.IGNORECASE)


DEFAULT_RULES = NormalizationRuleSet(
    abbreviation_map={
        "CT": "C T",
        "MRI": "M R I",
        "CXR": "C X R",
    },
)


def normalize_question(text: str, rules: NormalizationRuleSet = DEFAULT_RULES) -> str:
    """Prepare question text for speech synthesis.

    Strips markup, spells out digit runs, expands abbreviations on word
    boundaries, and collapses whitespace. Idempotent for any rule set that
    passes :class:`NormalizationRuleSet` validation.
    """
    if not text:
        raise ValueError("question text must be non-empty")
    if rules.strip_markup:
        text = _strip_markup(text)
    if rules.number_style is NumberStyle.SPELL_OUT:
        text = _spell_numbers(text)
    pattern = rules._pattern()
    if pattern is not None:
        lowered = {k.lower(): v for k, v in rules.abbreviation_map.items()}
        text = pattern.sub(lambda m: lowered[m.group(1).lower()], text)
    return collapse_whitespace(text)


# --- question classification ------------------------------------------------

_AUX_VERBS = frozenset(
    "is are was were am do does did can could will would shall should "
    "has have had may might must".split()
)
_OR_RE = re.compile(r"\bor\b", re.IGNORECASE)


def classify_question(text: str, override: QuestionType | None = None) -> QuestionType:
    """Heuristic open/closed classification, overridable per sample.

    Closed means answerable by yes/no (leading auxiliary verb) or by
    choosing among enumerated options ("X or Y"); everything else is open.
    """
    if override is not None:
        return override
    if not text or not text.strip():
        raise ValueError("question text must be non-empty")
    tokens = text.strip().split()
    head = tokens[0].strip(".,:;!?\"'").lower()
    if head in _AUX_VERBS:
        return QuestionType.CLOSED
    if _OR_RE.search(text):
        return QuestionType.CLOSED
    return QuestionType.OPEN


# --- manifest I/O -----------------------------------------------------------

_REQUIRED_FIELDS = ("id", "image", "modality", "organ", "question", "answer", "split")
_OPTIONAL_FIELDS = ("question_type", "audio")


def _parse_sample(rec: dict, line: int, rules: NormalizationRuleSet) -> Sample:
    for name in _REQUIRED_FIELDS:
        if name not in rec:
            raise MissingFieldError(f"missing field {name!r}", line=line)

    extra = {k: v for k, v in rec.items()
             if k not in _REQUIRED_FIELDS and k not in _OPTIONAL_FIELDS}

    sid = str(rec["id"]).strip()
    if not sid:
        raise MalformedRecordError("empty id", line=line)
    question = str(rec["question"])
    answer = str(rec["answer"])
    if not question.strip():
        raise MalformedRecordError("empty question", line=line)
    if not answer.strip():
        raise MalformedRecordError("empty answer", line=line)

    modality = _parse_enum("modality", rec["modality"], _MODALITY_ALIASES, line)
    split = _parse_enum(
        "split", rec["split"], {s.value.lower(): s for s in Split}, line
    )
    override = None
    if rec.get("question_type") is not None:
        override = _parse_enum(
            "question_type",
            rec["question_type"],
            {q.value.lower(): q for q in QuestionType},
            line,
        )
    qtype = classify_question(question, override)

    if qtype is QuestionType.OPEN and count_sentence_terminators(answer) < 2:
        raise MalformedRecordError(
            "open-question answer must contain at least two sentences "
            "(direct answer followed by reasoning)",
            line=line,
        )

    audio = rec.get("audio")
    if audio is not None:
        audio = str(audio)
        if not audio.endswith(".wav"):
            raise MalformedRecordError(f"audio ref {audio!r} must end in .wav", line=line)

    return Sample(
        id=sid,
        image_path=str(rec["image"]),
        modality=modality,
        organ=str(rec["organ"]),
        question_text=question,
        normalized_question_text=normalize_question(question, rules),
        answer_text=answer,
        split=split,
        question_type=qtype,
        audio_ref=audio,
        extra=extra,
    )


def load_manifest(
    path: str | Path,
    strict: bool = False,
    rules: NormalizationRuleSet = DEFAULT_RULES,
    dataset_root: str | Path | None = None,
    name: str | None = None,
) -> DatasetManifest:
    """Parse and validate a JSONL manifest.

    Every failure names the line it came from. In strict mode every image
    path must resolve to a file under ``dataset_root``.
    """
    path = Path(path)
    if strict and dataset_root is None:
        raise ValueError("strict mode requires a dataset_root")

    samples: list[Sample] = []
    seen_ids: set[str] = set()
    try:
        record_iter = iter_records(path)
        for line, rec in record_iter:
            sample = _parse_sample(rec, line, rules)
            if sample.id in seen_ids:
                raise DuplicateIdError(f"duplicate id {sample.id!r}", line=line)
            seen_ids.add(sample.id)
            if strict:
                img = Path(dataset_root) / sample.image_path
                if not img.is_file():
                    raise MalformedRecordError(
                        f"image {sample.image_path!r} not found under dataset root",
                        line=line,
                    )
            samples.append(sample)
    except ValueError as exc:
        raise MalformedRecordError(str(exc)) from exc

    return DatasetManifest(name=name or path.stem, samples=tuple(samples))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    write_records(path, (s.to_record() for s in manifest.samples))


def manifest_records(manifest: DatasetManifest) -> list[str]:
    return [dump_record(s.to_record()) for s in manifest.samples]


def filter_samples(
    manifest: DatasetManifest, predicate: Callable[[Sample], bool]
) -> list[Sample]:
    """Stable-order filter over manifest samples."""
    return [s for s in manifest.samples if predicate(s)]


# --- count validation -------------------------------------------------------

PCT_TOLERANCE = 0.1  # percentage points, one-decimal reporting


@dataclass(frozen=True)
class CountCheck:
    """One declarative tally expectation from a count-spec file."""

    check: str  # total | modality | split | split_modality
    expected: int
    modality: Modality | None = None
    split: Split | None = None
    expected_pct: float | None = None


@dataclass(frozen=True)
class CountCheckResult:
    check: CountCheck
    actual: int
    actual_pct: float | None
    passed: bool

    def describe(self) -> str:
        parts = [self.check.check]
        if self.check.split is not None:
            parts.append(self.check.split.value)
        if self.check.modality is not None:
            parts.append(self.check.modality.value)
        label = "/".join(parts)
        out = f"{label}: expected {self.check.expected}, actual {self.actual}"
        if self.check.expected_pct is not None:
            out += f" ({self.actual_pct}% vs {self.check.expected_pct}%)"
        return out + (" PASS" if self.passed else " FAIL")


@dataclass(frozen=True)
class ValidationReport:
    results: tuple[CountCheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {
                    "check": r.check.check,
                    "modality": r.check.modality.value if r.check.modality else None,
                    "split": r.check.split.value if r.check.split else None,
                    "expected": r.check.expected,
                    "expected_pct": r.check.expected_pct,
                    "actual": r.actual,
                    "actual_pct": r.actual_pct,
                    "passed": r.passed,
                }
                for r in self.results
            ],
        }


def load_count_spec(path: str | Path) -> list[CountCheck]:
    checks = []
    for line, rec in iter_records(path):
        kind = rec.get("check")
        if kind not in ("total", "modality", "split", "split_modality"):
            raise MalformedRecordError(f"unknown check kind {kind!r}", line=line)
        if "expected" not in rec:
            raise MissingFieldError("missing field 'expected'", line=line)
        modality = split = None
        if kind in ("modality", "split_modality"):
            modality = _parse_enum("modality", rec.get("modality"), _MODALITY_ALIASES, line)
        if kind in ("split", "split_modality"):
            split = _parse_enum(
                "split", rec.get("split"), {s.value.lower(): s for s in Split}, line
            )
        checks.append(
            CountCheck(
                check=kind,
                expected=int(rec["expected"]),
                modality=modality,
                split=split,
                expected_pct=(
                    float(rec["expected_pct"]) if rec.get("expected_pct") is not None else None
                ),
            )
        )
    return checks


def validate_counts(
    manifest: DatasetManifest, checks: Sequence[CountCheck]
) -> ValidationReport:
    """Check declarative tallies against a manifest.

    Failures are report entries, never exceptions. Percentages are shares
    of the full manifest, reported to one decimal place with a tolerance
    of +/- 0.1 percentage points.
    """
    total = len(manifest)
    by_mod = manifest.counts_by_modality()
    by_split = manifest.counts_by_split()
    by_both = manifest.counts_by_split_modality()

    results = []
    for check in checks:
        if check.check == "total":
            actual = total
        elif check.check == "modality":
            actual = by_mod.get(check.modality, 0)
        elif check.check == "split":
            actual = by_split.get(check.split, 0)
        else:
            actual = by_both.get((check.split, check.modality), 0)

        actual_pct = None
        passed = actual == check.expected
        if check.expected_pct is not None:
            actual_pct = round(100.0 * actual / total, 1) if total else 0.0
            passed = passed and abs(actual_pct - check.expected_pct) <= PCT_TOLERANCE + 1e-9
        results.append(
            CountCheckResult(check=check, actual=actual, actual_pct=actual_pct, passed=passed)
        )
    return ValidationReport(results=tuple(results))
