"""Client that drives an external speech-driven VLM endpoint over a test
split and collects a predictions file.

Endpoint contract: multipart POST with named parts ``image`` plus either
``audio`` (speech mode) or ``question`` (text mode), and a ``model_id``
form field; the endpoint replies {"prediction": "<text>"}.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .dataset import DatasetManifest, Sample
from .errors import HarnessError, IOFailure
from .httpclient import RetryBudgetExceeded, RetryingPoster, resolve_api_key
from .predictions import InputMode, Prediction, append_prediction, load_predictions, save_predictions


class MissingAudioError(HarnessError):
    code = "MISSING_AUDIO"


class EndpointUnavailableError(HarnessError):
    code = "ENDPOINT_UNAVAILABLE"


class InferenceRunError(HarnessError):
    code = "INFERENCE_INCOMPLETE"

    def __init__(self, message: str, report: "InferenceReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class InferenceEndpointConfig:
    base_url: str
    model_id: str
    input_mode: InputMode
    timeout_s: float = 60.0
    max_attempts: int = 3
    max_in_flight: int = 4
    api_key_env: str | None = None
    backoff_base_s: float = 0.2

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class InferenceFailure:
    sample_id: str
    code: str
    message: str


@dataclass(frozen=True)
class InferenceReport:
    total: int
    completed: int
    skipped_existing: int
    requests_made: int
    failures: tuple[InferenceFailure, ...]

    @property
    def coverage(self) -> float:
        return (self.completed + self.skipped_existing) / self.total if self.total else 1.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "completed": self.completed,
            "skipped_existing": self.skipped_existing,
            "requests_made": self.requests_made,
            "coverage": self.coverage,
            "failures": [
                {"sample_id": f.sample_id, "code": f.code, "message": f.message}
                for f in self.failures
            ],
        }


def run_inference(
    manifest: DatasetManifest,
    cfg: InferenceEndpointConfig,
    out_path: str | Path,
    dataset_root: str | Path,
    audio_root: str | Path | None = None,
) -> InferenceReport:
    """Request one prediction per sample and write the predictions file.

    Resumable: existing predictions for (sample, model, mode) are skipped
    without a request; a completed run performs zero network calls. The
    final file is rewritten in manifest order.
    """
    out_path = Path(out_path)
    dataset_root = Path(dataset_root)

    if cfg.input_mode is InputMode.SPEECH:
        if audio_root is None:
            raise ValueError("speech mode requires an audio_root")
        for sample in manifest.samples:
            if not sample.audio_ref:
                raise MissingAudioError(
                    f"sample {sample.id!r} has no audio_ref; run synthesis first",
                    sample_id=sample.id,
                )

    existing: dict[tuple[str, str, str], Prediction] = {}
    other_rows: list[Prediction] = []
    if out_path.is_file():
        for pred in load_predictions(out_path):
            if pred.model_id == cfg.model_id and pred.input_mode is cfg.input_mode:
                existing[pred.key()] = pred
            else:
                other_rows.append(pred)

    results: dict[str, Prediction] = {}
    failures: list[InferenceFailure] = []
    write_lock = threading.Lock()

    poster = RetryingPoster(
        max_attempts=cfg.max_attempts,
        timeout_s=cfg.timeout_s,
        backoff_base_s=cfg.backoff_base_s,
        api_key=resolve_api_key(cfg.api_key_env),
    )

    def infer_one(sample: Sample) -> None:
        key = (sample.id, cfg.model_id, cfg.input_mode.value)
        if key in existing:
            results[sample.id] = existing[key]
            return

        image_path = dataset_root / sample.image_path
        try:
            image_bytes = image_path.read_bytes()
        except OSError as exc:
            failures.append(
                InferenceFailure(sample.id, IOFailure.code, f"image unreadable: {exc}")
            )
            return

        files = {"image": (image_path.name, image_bytes, "application/octet-stream")}
        data = {"model_id": cfg.model_id}
        if cfg.input_mode is InputMode.SPEECH:
            audio_path = Path(audio_root) / sample.audio_ref
            try:
                audio_bytes = audio_path.read_bytes()
            except OSError as exc:
                failures.append(
                    InferenceFailure(sample.id, IOFailure.code, f"audio unreadable: {exc}")
                )
                return
            files["audio"] = (audio_path.name, audio_bytes, "audio/wav")
        else:
            data["question"] = sample.question_text

        started = time.monotonic()
        try:
            response = poster.post(cfg.base_url, files=files, data=data)
        except RetryBudgetExceeded as exc:
            failures.append(
                InferenceFailure(sample.id, EndpointUnavailableError.code, str(exc))
            )
            return
        latency_ms = round(1000.0 * (time.monotonic() - started))
        if response.status_code != 200:
            failures.append(
                InferenceFailure(
                    sample.id,
                    EndpointUnavailableError.code,
                    f"endpoint returned HTTP {response.status_code}",
                )
            )
            return

        prediction = Prediction(
            sample_id=sample.id,
            model_id=cfg.model_id,
            input_mode=cfg.input_mode,
            prediction=str(response.json().get("prediction", "")),
            latency_ms=latency_ms,
        )
        results[sample.id] = prediction
        with write_lock:
            append_prediction(out_path, prediction)

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            list(pool.map(infer_one, manifest.samples))
    finally:
        poster.close()

    skipped = sum(
        1
        for s in manifest.samples
        if (s.id, cfg.model_id, cfg.input_mode.value) in existing
    )
    completed = len(results) - skipped

    # Rewrite the file so this run's rows sit in manifest order (rows from
    # other runs, if any, are preserved ahead of them).
    ordered = other_rows + [
        results[s.id] for s in manifest.samples if s.id in results
    ]
    save_predictions(out_path, ordered)

    report = InferenceReport(
        total=len(manifest),
        completed=completed,
        skipped_existing=skipped,
        requests_made=poster.requests_made,
        failures=tuple(failures),
    )
    if failures:
        raise InferenceRunError(
            f"{len(failures)} of {len(manifest)} samples failed inference", report
        )
    return report
