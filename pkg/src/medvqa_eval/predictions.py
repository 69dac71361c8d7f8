"""Prediction records: one model output text bound to a sample.

Wire format (JSONL): ``sample_id, model_id, input_mode (speech|text),
prediction`` plus optional ``latency_ms``. Empty predictions are recorded
as empty strings rather than dropped, so coverage stays explicit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .records import append_record, iter_records, write_records


class InputMode(str, Enum):
    SPEECH = "speech"
    TEXT = "text"


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    model_id: str
    input_mode: InputMode
    prediction: str
    latency_ms: int = 0

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")

    def key(self) -> tuple[str, str, str]:
        return (self.sample_id, self.model_id, self.input_mode.value)

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "model_id": self.model_id,
            "input_mode": self.input_mode.value,
            "prediction": self.prediction,
            "latency_ms": self.latency_ms,
        }


def prediction_from_record(rec: dict, line: int | None = None) -> Prediction:
    where = f"line {line}: " if line is not None else ""
    for name in ("sample_id", "model_id", "input_mode", "prediction"):
        if name not in rec:
            raise ValueError(f"{where}missing field {name!r}")
    mode_raw = str(rec["input_mode"]).lower()
    try:
        mode = InputMode(mode_raw)
    except ValueError:
        raise ValueError(f"{where}unknown input_mode {rec['input_mode']!r}") from None
    return Prediction(
        sample_id=str(rec["sample_id"]),
        model_id=str(rec["model_id"]),
        input_mode=mode,
        prediction=str(rec["prediction"]),
        latency_ms=int(rec.get("latency_ms", 0)),
    )


def load_predictions(path: str | Path) -> list[Prediction]:
    return [prediction_from_record(rec, line) for line, rec in iter_records(path)]


def save_predictions(path: str | Path, predictions) -> None:
    write_records(path, (p.to_record() for p in predictions))


def append_prediction(path: str | Path, prediction: Prediction) -> None:
    append_record(path, prediction.to_record())
