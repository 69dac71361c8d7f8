"""LLM-as-Judge orchestration: prompt construction, verdict parsing,
multi-round judging against chat endpoints, and rubric aggregation.

Prompt templates live in ``prompts/`` as plain text files so deployments
can adapt them to their own judge conventions; the defaults embed the
four-level reasoning rubric and the two-part structure criterion.
"""

from __future__ import annotations

import json
import math
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .agreement import ScoreVector
from .dataset import DatasetManifest, Sample
from .errors import HarnessError
from .httpclient import RetryBudgetExceeded, RetryingPoster, resolve_api_key
from .predictions import Prediction
from .records import append_record, iter_records


class UnparseableVerdictError(HarnessError):
    code = "UNPARSEABLE"


class OutOfRangeLevelError(HarnessError):
    code = "OUT_OF_RANGE_LEVEL"


class EndpointUnavailableError(HarnessError):
    code = "ENDPOINT_UNAVAILABLE"


class JudgeRunError(HarnessError):
    code = "JUDGE_INCOMPLETE"

    def __init__(self, message: str, report: "JudgeRunReport"):
        super().__init__(message)
        self.report = report


class VerdictKind(str, Enum):
    STRUCTURE = "structure"
    REASONING = "reasoning"


RUBRIC_LABELS = {
    0: "Completely Incorrect",
    1: "Significantly Incorrect",
    2: "Partially Correct",
    3: "Fully Correct",
}


@dataclass(frozen=True)
class RubricLevel:
    value: int

    def __post_init__(self):
        if self.value not in RUBRIC_LABELS:
            raise OutOfRangeLevelError(f"rubric level {self.value} outside 0..3")

    @property
    def label(self) -> str:
        return RUBRIC_LABELS[self.value]


@dataclass(frozen=True)
class JudgeVerdict:
    sample_id: str
    rater_id: str
    round: int
    kind: VerdictKind
    structure_ok: bool | None = None
    level: int | None = None
    rationale: str = ""

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round must be >= 1")
        if not self.rater_id:
            raise ValueError("rater_id must be non-empty")
        if self.kind is VerdictKind.REASONING:
            RubricLevel(self.level if self.level is not None else -1)
        elif self.structure_ok is None:
            raise ValueError("structure verdicts require structure_ok")

    def to_record(self) -> dict:
        rec = {
            "sample_id": self.sample_id,
            "rater_id": self.rater_id,
            "round": self.round,
            "kind": self.kind.value,
            "rationale": self.rationale,
        }
        if self.structure_ok is not None:
            rec["structure_ok"] = self.structure_ok
        if self.level is not None:
            rec["level"] = self.level
        return rec


def verdict_from_record(rec: dict, line: int | None = None) -> JudgeVerdict:
    where = f"line {line}: " if line is not None else ""
    for name in ("sample_id", "rater_id", "round", "kind"):
        if name not in rec:
            raise ValueError(f"{where}missing field {name!r}")
    kind = VerdictKind(str(rec["kind"]).lower())
    level = rec.get("level")
    if level is not None:
        level = int(level)
        if level not in RUBRIC_LABELS:
            raise OutOfRangeLevelError(f"{where}rubric level {level} outside 0..3")
    return JudgeVerdict(
        sample_id=str(rec["sample_id"]),
        rater_id=str(rec["rater_id"]),
        round=int(rec["round"]),
        kind=kind,
        structure_ok=rec.get("structure_ok"),
        level=level,
        rationale=str(rec.get("rationale", "")),
    )


def load_verdicts(path: str | Path) -> list[JudgeVerdict]:
    return [verdict_from_record(rec, line) for line, rec in iter_records(path)]


def append_verdict(path: str | Path, verdict: JudgeVerdict) -> None:
    append_record(path, verdict.to_record())


def dedupe_verdicts(verdicts: Iterable[JudgeVerdict]) -> list[JudgeVerdict]:
    """Latest record wins for each (sample, rater, round, kind); supports
    the review UI's revise-last action over an append-only file."""
    latest: dict[tuple, JudgeVerdict] = {}
    for v in verdicts:
        latest[(v.sample_id, v.rater_id, v.round, v.kind)] = v
    return list(latest.values())


# --- prompt construction ------------------------------------------------------

def _load_template(name: str) -> str:
    return resources.files("medvqa_eval.prompts").joinpath(name).read_text("utf-8")


def _embed(value: str) -> str:
    # JSON-escape embedded free text so newlines or quotes in predictions
    # cannot break the reply-format instructions that follow.
    return json.dumps(value, ensure_ascii=False)


def build_reasoning_prompt(
    sample: Sample, prediction: Prediction, template: str | None = None
) -> str:
    if not prediction.prediction:
        raise ValueError("cannot judge an empty prediction")
    tpl = template if template is not None else _load_template("reasoning.txt")
    return tpl.format(
        question=_embed(sample.question_text),
        answer=_embed(sample.answer_text),
        prediction=_embed(prediction.prediction),
    )


def build_structure_prompt(
    sample: Sample, prediction: Prediction, template: str | None = None
) -> str:
    if not prediction.prediction:
        raise ValueError("cannot judge an empty prediction")
    tpl = template if template is not None else _load_template("structure.txt")
    return tpl.format(
        question=_embed(sample.question_text),
        prediction=_embed(prediction.prediction),
    )


# --- verdict parsing -----------------------------------------------------------

@dataclass(frozen=True)
class ParsedVerdict:
    kind: VerdictKind
    level: int | None = None
    structure_ok: bool | None = None
    rationale: str = ""


_LEVEL_RE = re.compile(r"^[ \t]*level[ \t]*:[ \t]*(-?\d+)[ \t]*$", re.I | re.M)
_STRUCTURE_RE = re.compile(r"^[ \t]*verdict[ \t]*:[ \t]*(pass|fail)[ \t]*$", re.I | re.M)
_RATIONALE_RE = re.compile(r"^[ \t]*rationale[ \t]*:[ \t]*(.*)$", re.I | re.M)


def parse_verdict(raw: str, kind: VerdictKind) -> ParsedVerdict:
    """Extract the machine-readable block from a judge reply.

    Surrounding prose is tolerated; the last well-formed field wins when a
    chatty judge restates itself.
    """
    rationales = _RATIONALE_RE.findall(raw)
    rationale = rationales[-1].strip() if rationales else ""
    if kind is VerdictKind.REASONING:
        levels = _LEVEL_RE.findall(raw)
        if not levels:
            raise UnparseableVerdictError("no 'level:' field found in judge reply")
        level = int(levels[-1])
        if level not in RUBRIC_LABELS:
            raise OutOfRangeLevelError(f"rubric level {level} outside 0..3")
        return ParsedVerdict(kind=kind, level=level, rationale=rationale)
    verdicts = _STRUCTURE_RE.findall(raw)
    if not verdicts:
        raise UnparseableVerdictError("no 'verdict:' field found in judge reply")
    return ParsedVerdict(
        kind=kind, structure_ok=verdicts[-1].lower() == "pass", rationale=rationale
    )


def render_verdict(parsed: ParsedVerdict) -> str:
    """Canonical machine-readable block; parse_verdict(render_verdict(v))
    round-trips."""
    if parsed.kind is VerdictKind.REASONING:
        head = f"level: {parsed.level}"
    else:
        head = f"verdict: {'pass' if parsed.structure_ok else 'fail'}"
    return f"{head}\nrationale: {parsed.rationale}"


# --- judge client and run ---------------------------------------------------

@dataclass(frozen=True)
class JudgeClientConfig:
    base_url: str
    model_name: str
    api_key_env: str | None = None
    temperature: float = 0.0  # deterministic judging by default
    max_retries: int = 2  # re-asks allowed after the first attempt
    timeout_s: float = 60.0
    max_in_flight: int = 4
    backoff_base_s: float = 0.2

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


class ChatJudgeClient:
    """Minimal chat-completion client for judging.

    Contract: POST {model, messages, temperature} to base_url, receive
    {"content": "<completion text>"}.
    """

    SYSTEM_PROMPT = (
        "You are an evaluation judge. Follow the reply format instructions exactly."
    )

    def __init__(self, cfg: JudgeClientConfig):
        self.cfg = cfg
        self._poster = RetryingPoster(
            max_attempts=cfg.max_retries + 1,
            timeout_s=cfg.timeout_s,
            backoff_base_s=cfg.backoff_base_s,
            api_key=resolve_api_key(cfg.api_key_env),
        )

    def close(self) -> None:
        self._poster.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def requests_made(self) -> int:
        return self._poster.requests_made

    def complete(self, prompt: str) -> str:
        try:
            response = self._poster.post(
                self.cfg.base_url,
                json={
                    "model": self.cfg.model_name,
                    "messages": [
                        {"role": "system", "content": self.SYSTEM_PROMPT},
                        {"role": "user", "content": prompt},
                    ],
                    "temperature": self.cfg.temperature,
                },
            )
        except RetryBudgetExceeded as exc:
            raise EndpointUnavailableError(str(exc)) from exc
        if response.status_code != 200:
            raise EndpointUnavailableError(
                f"judge endpoint returned HTTP {response.status_code}"
            )
        payload = response.json()
        if "content" not in payload:
            raise EndpointUnavailableError("judge reply missing 'content'")
        return str(payload["content"])


@dataclass(frozen=True)
class JudgeFailure:
    sample_id: str
    kind: VerdictKind
    round: int
    code: str
    message: str


@dataclass(frozen=True)
class JudgeRunReport:
    rater_id: str
    total_requested: int
    completed: int
    skipped_existing: int
    requests_made: int
    failures: tuple[JudgeFailure, ...]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "rater_id": self.rater_id,
            "total_requested": self.total_requested,
            "completed": self.completed,
            "skipped_existing": self.skipped_existing,
            "requests_made": self.requests_made,
            "failures": [
                {
                    "sample_id": f.sample_id,
                    "kind": f.kind.value,
                    "round": f.round,
                    "code": f.code,
                    "message": f.message,
                }
                for f in self.failures
            ],
        }


def judge_run(
    manifest: DatasetManifest,
    predictions: Sequence[Prediction],
    cfg: JudgeClientConfig,
    out_path: str | Path,
    rounds: int = 3,
    kinds: Sequence[VerdictKind] = (VerdictKind.STRUCTURE, VerdictKind.REASONING),
    reasoning_template: str | None = None,
    structure_template: str | None = None,
) -> JudgeRunReport:
    """Judge every prediction ``rounds`` times per kind.

    Resumable: (sample, rater, round, kind) verdicts already in ``out_path``
    are not re-requested. Rounds for one sample run sequentially; samples
    are judged in parallel up to cfg.max_in_flight. Verdicts are appended
    to the file as they arrive. Fails only if coverage is incomplete after
    retries.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    out_path = Path(out_path)
    samples = manifest.by_id()
    for pred in predictions:
        if pred.sample_id not in samples:
            raise ValueError(f"prediction references unknown sample {pred.sample_id!r}")

    existing: set[tuple[str, str, int]] = set()
    if out_path.is_file():
        for v in load_verdicts(out_path):
            if v.rater_id == cfg.model_name:
                existing.add((v.sample_id, v.kind.value, v.round))

    write_lock = threading.Lock()
    failures: list[JudgeFailure] = []
    completed = 0
    skipped = 0
    counter_lock = threading.Lock()

    reasoning_tpl = (
        reasoning_template
        if reasoning_template is not None
        else _load_template("reasoning.txt")
    )
    structure_tpl = (
        structure_template
        if structure_template is not None
        else _load_template("structure.txt")
    )

    with ChatJudgeClient(cfg) as client:

        def ask(sample: Sample, pred: Prediction, kind: VerdictKind, rnd: int) -> None:
            nonlocal completed, skipped
            if (sample.id, kind.value, rnd) in existing:
                with counter_lock:
                    skipped += 1
                return
            if not pred.prediction:
                # empty predictions are legal in prediction files but there
                # is nothing to judge; surfaced as a per-sample failure
                failures.append(
                    JudgeFailure(sample.id, kind, rnd, "EMPTY_PREDICTION",
                                 "prediction text is empty")
                )
                return
            if kind is VerdictKind.REASONING:
                prompt = build_reasoning_prompt(sample, pred, reasoning_tpl)
            else:
                prompt = build_structure_prompt(sample, pred, structure_tpl)

            parsed = None
            last_error: HarnessError | None = None
            for _ in range(cfg.max_retries + 1):
                try:
                    reply = client.complete(prompt)
                except HarnessError as exc:
                    last_error = exc
                    break  # transport retries already spent inside the client
                try:
                    parsed = parse_verdict(reply, kind)
                    break
                except HarnessError as exc:  # UNPARSEABLE and OUT_OF_RANGE re-ask
                    last_error = exc
            if parsed is None:
                failures.append(
                    JudgeFailure(
                        sample_id=sample.id,
                        kind=kind,
                        round=rnd,
                        code=last_error.code if last_error else "UNPARSEABLE",
                        message=str(last_error) if last_error else "no reply",
                    )
                )
                return
            verdict = JudgeVerdict(
                sample_id=sample.id,
                rater_id=cfg.model_name,
                round=rnd,
                kind=kind,
                structure_ok=parsed.structure_ok,
                level=parsed.level,
                rationale=parsed.rationale,
            )
            with write_lock:
                append_verdict(out_path, verdict)
            with counter_lock:
                completed += 1

        def judge_sample(pred: Prediction) -> None:
            sample = samples[pred.sample_id]
            # Rounds (and kinds) for one sample run strictly sequentially so
            # a re-ask never races its own retries.
            for kind in kinds:
                for rnd in range(1, rounds + 1):
                    ask(sample, pred, kind, rnd)

        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            list(pool.map(judge_sample, predictions))

    report = JudgeRunReport(
        rater_id=cfg.model_name,
        total_requested=len(predictions) * len(kinds) * rounds,
        completed=completed,
        skipped_existing=skipped,
        requests_made=client.requests_made,
        failures=tuple(failures),
    )
    if failures:
        raise JudgeRunError(
            f"{len(failures)} judge request(s) failed; coverage incomplete", report
        )
    return report


# --- aggregation ---------------------------------------------------------------

def round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


@dataclass(frozen=True)
class RubricAggregate:
    """Per-rater rubric tallies.

    bucket_counts: samples per level after round-half-up bucketing of the
    per-sample round mean (integers; sums to n_samples).
    fractional_counts: mean over rounds of the per-round level counts,
    which is how fractional tallies like 59.67 arise.
    """

    rater_id: str
    n_samples: int
    sample_means: dict[str, float]
    bucket_counts: dict[int, int]
    fractional_counts: dict[int, float]
    structure_passes: int
    structure_total: int

    def to_dict(self) -> dict:
        return {
            "rater_id": self.rater_id,
            "n_samples": self.n_samples,
            "sample_means": dict(sorted(self.sample_means.items())),
            "bucket_counts": {str(k): v for k, v in sorted(self.bucket_counts.items())},
            "fractional_counts": {
                str(k): v for k, v in sorted(self.fractional_counts.items())
            },
            "structure_passes": self.structure_passes,
            "structure_total": self.structure_total,
            "labels": {str(k): v for k, v in RUBRIC_LABELS.items()},
        }


def aggregate_rubric(
    verdicts: Sequence[JudgeVerdict], rater_id: str
) -> RubricAggregate:
    """Aggregate one rater's verdicts into level and structure tallies."""
    mine = [v for v in dedupe_verdicts(verdicts) if v.rater_id == rater_id]
    if not mine:
        raise ValueError(f"no verdicts for rater {rater_id!r}")

    reasoning: dict[str, list[JudgeVerdict]] = {}
    structure: dict[str, list[JudgeVerdict]] = {}
    for v in mine:
        bucket = reasoning if v.kind is VerdictKind.REASONING else structure
        bucket.setdefault(v.sample_id, []).append(v)

    sample_means = {
        sid: sum(v.level for v in vs) / len(vs) for sid, vs in reasoning.items()
    }
    bucket_counts = {lvl: 0 for lvl in RUBRIC_LABELS}
    for mean in sample_means.values():
        bucket_counts[min(3, round_half_up(mean))] += 1

    # Fractional tallies: count levels within each round, then average the
    # per-round counts over all rounds the rater produced.
    rounds = sorted({v.round for vs in reasoning.values() for v in vs})
    fractional_counts = {lvl: 0.0 for lvl in RUBRIC_LABELS}
    if rounds:
        for rnd in rounds:
            per_round = {lvl: 0 for lvl in RUBRIC_LABELS}
            for vs in reasoning.values():
                for v in vs:
                    if v.round == rnd:
                        per_round[v.level] += 1
            for lvl in RUBRIC_LABELS:
                fractional_counts[lvl] += per_round[lvl]
        fractional_counts = {
            lvl: total / len(rounds) for lvl, total in fractional_counts.items()
        }

    passes = 0
    for vs in structure.values():
        mean_ok = sum(1 for v in vs if v.structure_ok) / len(vs)
        passes += round_half_up(mean_ok) >= 1

    return RubricAggregate(
        rater_id=rater_id,
        n_samples=len(sample_means) or len(structure),
        sample_means=sample_means,
        bucket_counts=bucket_counts,
        fractional_counts=fractional_counts,
        structure_passes=passes,
        structure_total=len(structure),
    )


def rater_ids(verdicts: Sequence[JudgeVerdict]) -> list[str]:
    return sorted({v.rater_id for v in verdicts})


def vectors_from_verdicts(verdicts: Sequence[JudgeVerdict]) -> list[ScoreVector]:
    """Per-rater score vectors (per-sample mean reasoning level) for
    agreement analysis."""
    vectors = []
    deduped = dedupe_verdicts(verdicts)
    for rater in rater_ids(deduped):
        per_sample: dict[str, list[int]] = {}
        for v in deduped:
            if v.rater_id == rater and v.kind is VerdictKind.REASONING:
                per_sample.setdefault(v.sample_id, []).append(v.level)
        if not per_sample:
            continue
        scores = tuple(
            (sid, sum(levels) / len(levels))
            for sid, levels in sorted(per_sample.items())
        )
        vectors.append(ScoreVector(rater_id=rater, scores=scores))
    return vectors
