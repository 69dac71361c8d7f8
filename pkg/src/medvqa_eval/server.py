"""REST API backing the expert review UI.

Serves one run directory: samples and predictions are read at startup,
verdicts are appended per POST (latest record wins for revisions), and
the rubric artifact plus bundle digests refresh on every accepted
verdict so reports stay renderable. All errors are structured records
with stable codes.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .agreement import agreement_matrix
from .dataset import load_manifest
from .judge import (
    JudgeVerdict,
    VerdictKind,
    aggregate_rubric,
    append_verdict,
    dedupe_verdicts,
    load_verdicts,
    rater_ids,
    vectors_from_verdicts,
)
from .predictions import load_predictions
from .records import write_json
from . import reporting


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def _media_url(kind: str, path: str | None) -> str | None:
    return f"/api/media/{kind}/{path}" if path else None


def create_app(
    run_dir: str | Path,
    dataset_root: str | Path,
    cache_dir: str | Path,
    model_filter: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    run_dir = Path(run_dir)
    dataset_root = Path(dataset_root)
    cache_dir = Path(cache_dir)
    verdicts_path = run_dir / reporting.ARTIFACT_FILES["verdicts"]
    rubric_path = run_dir / reporting.ARTIFACT_FILES["rubric"]

    manifest = load_manifest(run_dir / reporting.ARTIFACT_FILES["manifest"])
    samples = manifest.by_id()
    predictions = load_predictions(run_dir / reporting.ARTIFACT_FILES["predictions"])
    if model_filter:
        predictions = [p for p in predictions if p.model_id == model_filter]

    # Server-assigned review order, identical for every rater: manifest
    # order, one item per prediction.
    by_sample = {}
    for pred in predictions:
        by_sample.setdefault(pred.sample_id, pred)
    queue_order = [s.id for s in manifest.samples if s.id in by_sample]

    write_lock = threading.Lock()
    app = FastAPI(title="medvqa review API")

    def read_verdicts() -> list[JudgeVerdict]:
        if not verdicts_path.is_file():
            return []
        return dedupe_verdicts(load_verdicts(verdicts_path))

    def rater_done(verdicts, rater: str) -> set[str]:
        """Sample ids the rater has fully reviewed (both kinds present)."""
        seen: dict[str, set[VerdictKind]] = {}
        for v in verdicts:
            if v.rater_id == rater:
                seen.setdefault(v.sample_id, set()).add(v.kind)
        return {sid for sid, kinds in seen.items() if len(kinds) == 2}

    def refresh_rubric() -> None:
        verdicts = load_verdicts(verdicts_path)
        payload = {
            "raters": [
                aggregate_rubric(verdicts, rater).to_dict()
                for rater in rater_ids(verdicts)
            ]
        }
        write_json(rubric_path, payload)
        try:
            bundle = reporting.load_bundle(run_dir, verify=False)
            reporting.record_artifact(bundle, "verdicts")
            reporting.record_artifact(bundle, "rubric")
        except reporting.BrokenRefError:
            pass  # free-standing run dir without a bundle

    def sample_view(sid: str) -> dict:
        s = samples[sid]
        return {
            "id": s.id,
            "question": s.question_text,
            "answer": s.answer_text,
            "modality": s.modality.value,
            "organ": s.organ,
            "split": s.split.value,
            "question_type": s.question_type.value,
            "image_url": _media_url("images", s.image_path),
            "audio_url": _media_url("audio", s.audio_ref),
        }

    @app.get("/api/samples")
    def api_samples():
        return {"samples": [sample_view(s.id) for s in manifest.samples]}

    @app.get("/api/predictions")
    def api_predictions(model: str | None = None, mode: str | None = None):
        rows = [
            p.to_record()
            for p in predictions
            if (model is None or p.model_id == model)
            and (mode is None or p.input_mode.value == mode)
        ]
        return {"predictions": rows}

    @app.get("/api/queue")
    def api_queue(rater: str = ""):
        if not rater:
            return _error(400, "MISSING_FIELD", "query parameter 'rater' is required")
        verdicts = read_verdicts()
        done = rater_done(verdicts, rater)
        own: dict[str, dict] = {}
        for v in verdicts:
            if v.rater_id == rater:
                own.setdefault(v.sample_id, {})[v.kind.value] = v.to_record()
        items = []
        for sid in queue_order:
            pred = by_sample[sid]
            items.append(
                {
                    "sample": sample_view(sid),
                    "prediction": pred.prediction,
                    "model_id": pred.model_id,
                    "input_mode": pred.input_mode.value,
                    "own_verdicts": own.get(sid),
                    "done": sid in done,
                }
            )
        resume = next(
            (i for i, sid in enumerate(queue_order) if sid not in done),
            len(queue_order),
        )
        return {"rater": rater, "items": items, "resume_index": resume}

    @app.post("/api/verdicts")
    async def api_post_verdict(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "MALFORMED_RECORD", "body must be a JSON object")
        if not isinstance(body, dict):
            return _error(400, "MALFORMED_RECORD", "body must be a JSON object")

        rater = body.get("rater_id") or request.headers.get("X-Rater")
        header = request.headers.get("X-Rater")
        if not rater:
            return _error(400, "MISSING_FIELD", "rater_id (or X-Rater header) is required")
        if header and body.get("rater_id") and header != body["rater_id"]:
            return _error(403, "RATER_MISMATCH", "X-Rater header does not match rater_id")

        sample_id = body.get("sample_id")
        if not sample_id:
            return _error(400, "MISSING_FIELD", "sample_id is required")
        if sample_id not in samples:
            return _error(404, "UNKNOWN_SAMPLE", f"no sample {sample_id!r} in this run")

        kind_raw = str(body.get("kind", "")).lower()
        try:
            kind = VerdictKind(kind_raw)
        except ValueError:
            return _error(400, "UNKNOWN_ENUM", "kind must be one of: structure, reasoning")

        rnd = body.get("round", 1)
        try:
            rnd = int(rnd)
        except (TypeError, ValueError):
            return _error(400, "MALFORMED_RECORD", "round must be an integer")
        if rnd < 1:
            return _error(400, "MALFORMED_RECORD", "round must be >= 1")

        level = body.get("level")
        structure_ok = body.get("structure_ok")
        if kind is VerdictKind.REASONING:
            try:
                level = int(level)
            except (TypeError, ValueError):
                return _error(400, "OUT_OF_RANGE_LEVEL", "level must be an integer 0..3")
            if level not in (0, 1, 2, 3):
                return _error(400, "OUT_OF_RANGE_LEVEL", f"level {level} outside 0..3")
        else:
            if not isinstance(structure_ok, bool):
                return _error(400, "MALFORMED_RECORD", "structure_ok must be a boolean")

        verdict = JudgeVerdict(
            sample_id=sample_id,
            rater_id=str(rater),
            round=rnd,
            kind=kind,
            structure_ok=structure_ok if kind is VerdictKind.STRUCTURE else None,
            level=level if kind is VerdictKind.REASONING else None,
            rationale=str(body.get("rationale", "")),
        )
        with write_lock:
            append_verdict(verdicts_path, verdict)
            refresh_rubric()
        return {"ok": True, "verdict": verdict.to_record()}

    @app.get("/api/progress")
    def api_progress(rater: str = ""):
        if not rater:
            return _error(400, "MISSING_FIELD", "query parameter 'rater' is required")
        done = rater_done(read_verdicts(), rater)
        completed = sum(1 for sid in queue_order if sid in done)
        position = next(
            (i for i, sid in enumerate(queue_order) if sid not in done),
            len(queue_order),
        )
        return {
            "rater": rater,
            "completed": completed,
            "total": len(queue_order),
            "position": position,
        }

    @app.get("/api/agreement")
    def api_agreement():
        vectors = vectors_from_verdicts(read_verdicts())
        if len(vectors) < 2:
            return {"results": []}
        return {"results": [r.to_dict() for r in agreement_matrix(vectors)]}

    @app.get("/api/media/{path:path}")
    def api_media(path: str):
        if path.startswith("images/"):
            # image_path fields are relative to the dataset root
            root, rel = dataset_root, path.removeprefix("images/")
        elif path.startswith("audio/"):
            root, rel = cache_dir, path.removeprefix("audio/")
        else:
            return _error(404, "NOT_FOUND", "media paths start with images/ or audio/")
        target = (root / rel).resolve()
        if root.resolve() not in target.parents and target != root.resolve():
            return _error(403, "FORBIDDEN", "path escapes the media root")
        if not target.is_file():
            return _error(404, "NOT_FOUND", f"no media at {path!r}")
        return FileResponse(target)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
