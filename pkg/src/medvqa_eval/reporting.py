"""Run bundles and report rendering.

A run directory holds every artifact of one evaluation run:

    runs/<run_id>/
        manifest.jsonl  predictions.jsonl  verdicts.jsonl
        validation.json asr.json metrics.json rubric.json agreement.json
        bundle.json     report.{md,csv,json}

``bundle.json`` records a content digest for every referenced artifact,
making runs tamper-evident. Rendering is a pure function of the bundle:
all numbers are read from artifacts and only formatted, never computed,
and the output contains no timestamps so a fixed bundle always renders
byte-identically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import HarnessError
from .records import read_json, write_json, append_record

BUNDLE_NAME = "bundle.json"
INDEX_NAME = "index.jsonl"

ARTIFACT_FILES = {
    "manifest": "manifest.jsonl",
    "predictions": "predictions.jsonl",
    "verdicts": "verdicts.jsonl",
    "validation": "validation.json",
    "asr": "asr.json",
    "metrics": "metrics.json",
    "rubric": "rubric.json",
    "agreement": "agreement.json",
}

# The six table shapes every report carries (mirroring the benchmark's
# reporting): ASR error rates, text-generation metrics, answer-structure
# tally, reasoning-level distribution, open/closed accuracy, and the
# combined accuracy/similarity overview.
TABLE_SECTIONS = (
    ("asr_error_rates", "ASR error rates"),
    ("text_generation_metrics", "Text generation metrics"),
    ("structure_assessment", "Answer structure assessment"),
    ("reasoning_levels", "Reasoning level distribution"),
    ("open_closed_accuracy", "Open/closed question accuracy"),
    ("accuracy_similarity_overview", "Accuracy and similarity overview"),
)

EXTRA_SECTIONS = (
    ("dataset_summary", "Dataset summary"),
    ("judge_agreement", "Judge agreement"),
)


class BrokenRefError(HarnessError):
    code = "BROKEN_REF"


class ManifestMismatchError(HarnessError):
    code = "MANIFEST_MISMATCH"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunBundle:
    run_id: str
    run_dir: Path
    created_at: str
    updated_at: str
    config: dict
    refs: dict[str, dict]  # key -> {"path": relative path, "sha256": digest}

    def artifact_path(self, key: str) -> Path:
        return self.run_dir / self.refs[key]["path"]

    def has(self, key: str) -> bool:
        return key in self.refs

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "config": self.config,
            "refs": self.refs,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def init_run(runs_dir: str | Path, run_id: str, config: dict | None = None) -> RunBundle:
    """Create (or reopen) a run directory and its bundle record."""
    run_dir = Path(runs_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    bundle_file = run_dir / BUNDLE_NAME
    if bundle_file.is_file():
        bundle = load_bundle(run_dir, verify=False)
        if config:
            bundle.config.update(config)
            save_bundle(bundle)
        return bundle
    now = _now()
    bundle = RunBundle(
        run_id=run_id,
        run_dir=run_dir,
        created_at=now,
        updated_at=now,
        config=config or {},
        refs={},
    )
    save_bundle(bundle)
    append_record(
        Path(runs_dir) / INDEX_NAME, {"run_id": run_id, "created_at": now}
    )
    return bundle


def save_bundle(bundle: RunBundle) -> None:
    bundle.updated_at = _now()
    write_json(bundle.run_dir / BUNDLE_NAME, bundle.to_dict())


def load_bundle(run_dir: str | Path, verify: bool = True) -> RunBundle:
    """Load a bundle; with verify on, a digest mismatch on any referenced
    artifact raises BROKEN_REF."""
    run_dir = Path(run_dir)
    if not (run_dir / BUNDLE_NAME).is_file():
        raise BrokenRefError(f"no run bundle at {run_dir / BUNDLE_NAME}")
    raw = read_json(run_dir / BUNDLE_NAME)
    bundle = RunBundle(
        run_id=raw["run_id"],
        run_dir=run_dir,
        created_at=raw["created_at"],
        updated_at=raw["updated_at"],
        config=raw.get("config", {}),
        refs=raw.get("refs", {}),
    )
    if verify:
        for key, ref in bundle.refs.items():
            path = run_dir / ref["path"]
            if not path.is_file():
                raise BrokenRefError(f"artifact {key!r} missing at {ref['path']}", key=key)
            digest = file_digest(path)
            if digest != ref["sha256"]:
                raise BrokenRefError(
                    f"artifact {key!r} digest mismatch (file changed since recorded)",
                    key=key,
                )
    return bundle


def record_artifact(bundle: RunBundle, key: str, filename: str | None = None) -> Path:
    """Record (or refresh) the digest of one artifact in the bundle."""
    name = filename or ARTIFACT_FILES[key]
    path = bundle.run_dir / name
    if not path.is_file():
        raise BrokenRefError(f"cannot record missing artifact {name!r}", key=key)
    bundle.refs[key] = {"path": name, "sha256": file_digest(path)}
    save_bundle(bundle)
    return path


# --- rendering -----------------------------------------------------------------

def _fmt_rate(value) -> str:
    return "-" if value is None else f"{value:.2f}"


def _fmt_pct_of(value) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def _fmt_corr(value) -> str:
    return "-" if value is None else f"{value:.3f}"


def _load_if(bundle: RunBundle, key: str):
    if not bundle.has(key):
        return None
    return read_json(bundle.artifact_path(key))


@dataclass(frozen=True)
class Table:
    key: str
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]
    gap: str | None = None  # explicit reason when data is absent


def _table_asr(bundle: RunBundle) -> Table:
    cols = ("scope", "WER (%)", "CER (%)")
    data = _load_if(bundle, "asr")
    if data is None:
        return Table("asr_error_rates", "ASR error rates", cols, (), "no transcript pairs scored")
    rows = (
        ("pooled", _fmt_pct_of(data["wer"]), _fmt_pct_of(data["cer"])),
        ("mean per pair", _fmt_pct_of(data["wer_mean"]), _fmt_pct_of(data["cer_mean"])),
    )
    return Table("asr_error_rates", "ASR error rates", cols, rows)


def _metric_rows(data) -> list[dict]:
    if data is None:
        return []
    return data.get("reports", []) if isinstance(data, dict) else list(data)


def _table_textgen(bundle: RunBundle) -> Table:
    cols = ("model", "mode", "semantic similarity", "BLEU (%)", "ROUGE-L (%)")
    reports = _metric_rows(_load_if(bundle, "metrics"))
    rows = tuple(
        (
            r["model_id"],
            r["input_mode"],
            _fmt_rate(r["mean_semantic_similarity"]),
            _fmt_pct_of(r["corpus_bleu"]),
            _fmt_pct_of(r["mean_rouge_l_f1"]),
        )
        for r in reports
    )
    return Table(
        "text_generation_metrics", "Text generation metrics", cols, rows,
        None if rows else "no metric report",
    )


def _table_structure(bundle: RunBundle) -> Table:
    cols = ("rater", "structure passes")
    data = _load_if(bundle, "rubric")
    aggregates = (data or {}).get("raters", [])
    rows = tuple(
        (a["rater_id"], f"{a['structure_passes']}/{a['structure_total']}")
        for a in aggregates
    )
    return Table(
        "structure_assessment", "Answer structure assessment", cols, rows,
        None if rows else "no verdicts",
    )


def _table_levels(bundle: RunBundle) -> Table:
    data = _load_if(bundle, "rubric")
    aggregates = (data or {}).get("raters", [])
    cols = ["reasoning accuracy"]
    for a in aggregates:
        cols.append(a["rater_id"])
        cols.append(f"{a['rater_id']} (round mean)")
    labels = {"0": "Completely Incorrect", "1": "Significantly Incorrect",
              "2": "Partially Correct", "3": "Fully Correct"}
    rows = []
    for lvl in ("0", "1", "2", "3"):
        row = [labels[lvl]]
        for a in aggregates:
            row.append(str(a["bucket_counts"].get(lvl, 0)))
            row.append(_fmt_rate(a["fractional_counts"].get(lvl, 0.0)))
        rows.append(tuple(row))
    return Table(
        "reasoning_levels", "Reasoning level distribution", tuple(cols),
        tuple(rows) if aggregates else (),
        None if aggregates else "no verdicts",
    )


def _table_open_closed(bundle: RunBundle) -> Table:
    cols = ("model", "mode", "open (%)", "closed (%)")
    reports = _metric_rows(_load_if(bundle, "metrics"))
    rows = tuple(
        (
            r["model_id"],
            r["input_mode"],
            _fmt_rate(r["open_accuracy_pct"]),
            _fmt_rate(r["closed_accuracy_pct"]),
        )
        for r in reports
    )
    return Table(
        "open_closed_accuracy", "Open/closed question accuracy", cols, rows,
        None if rows else "no metric report",
    )


def _table_overview(bundle: RunBundle) -> Table:
    cols = ("model", "mode", "accuracy (%)", "BLEU (%)", "semantic similarity")
    reports = _metric_rows(_load_if(bundle, "metrics"))
    rows = tuple(
        (
            r["model_id"],
            r["input_mode"],
            _fmt_rate(r["overall_accuracy_pct"]),
            _fmt_pct_of(r["corpus_bleu"]),
            _fmt_rate(r["mean_semantic_similarity"]),
        )
        for r in reports
    )
    return Table(
        "accuracy_similarity_overview", "Accuracy and similarity overview", cols, rows,
        None if rows else "no metric report",
    )


def _table_dataset(bundle: RunBundle) -> Table:
    cols = ("tally", "value")
    data = _load_if(bundle, "validation")
    if data is None or "counts" not in data:
        return Table("dataset_summary", "Dataset summary", cols, (), "manifest not validated")
    counts = data["counts"]
    rows = [("total", str(counts["total"]))]
    for split, n in sorted(counts["by_split"].items()):
        rows.append((f"split {split}", str(n)))
    for modality, n in sorted(counts["by_modality"].items()):
        rows.append((f"modality {modality}", str(n)))
    for key, n in sorted(counts["by_split_modality"].items()):
        rows.append((key.replace("/", " "), str(n)))
    return Table("dataset_summary", "Dataset summary", cols, tuple(rows))


def _table_agreement(bundle: RunBundle) -> Table:
    cols = ("rater a", "rater b", "n", "pearson r", "spearman rho", "status")
    data = _load_if(bundle, "agreement")
    results = (data or {}).get("results", [])
    rows = tuple(
        (
            r["rater_a"],
            r["rater_b"],
            str(r["n"]),
            _fmt_corr(r["pearson_r"]),
            _fmt_corr(r["spearman_rho"]),
            r["status"],
        )
        for r in results
    )
    return Table(
        "judge_agreement", "Judge agreement", cols, rows,
        None if rows else "no agreement results",
    )


_TABLE_BUILDERS = {
    "asr_error_rates": _table_asr,
    "text_generation_metrics": _table_textgen,
    "structure_assessment": _table_structure,
    "reasoning_levels": _table_levels,
    "open_closed_accuracy": _table_open_closed,
    "accuracy_similarity_overview": _table_overview,
    "dataset_summary": _table_dataset,
    "judge_agreement": _table_agreement,
}


def build_tables(bundle: RunBundle) -> list[Table]:
    ordered = [key for key, _ in TABLE_SECTIONS] + [key for key, _ in EXTRA_SECTIONS]
    return [_TABLE_BUILDERS[key](bundle) for key in ordered]


def _markdown(bundle: RunBundle, tables: list[Table]) -> str:
    # No timestamps or artifact digests in the body: volatile bytes (e.g.
    # measured latencies) must not leak into an otherwise identical report.
    lines = [f"# Evaluation report: run {bundle.run_id}", ""]
    for table in tables:
        lines.append(f"## {table.title}")
        lines.append("")
        lines.append("| " + " | ".join(table.columns) + " |")
        lines.append("|" + "|".join(" --- " for _ in table.columns) + "|")
        if table.rows:
            for row in table.rows:
                lines.append("| " + " | ".join(row) + " |")
        else:
            gap_row = [f"(no data: {table.gap})"] + [""] * (len(table.columns) - 1)
            lines.append("| " + " | ".join(gap_row) + " |")
        lines.append("")
    return "\n".join(lines)


def _csv(bundle: RunBundle, tables: list[Table]) -> str:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for table in tables:
        buf.write(f"# table: {table.key}\n")
        writer.writerow(table.columns)
        if table.rows:
            writer.writerows(table.rows)
        else:
            writer.writerow([f"(no data: {table.gap})"] + [""] * (len(table.columns) - 1))
        buf.write("\n")
    return buf.getvalue()


def _machine(bundle: RunBundle, tables: list[Table]) -> dict:
    return {
        "run_id": bundle.run_id,
        "tables": {
            t.key: {
                "title": t.title,
                "columns": list(t.columns),
                "rows": [list(r) for r in t.rows],
                "gap": t.gap,
            }
            for t in tables
        },
    }


class ReportFormat:
    MARKDOWN = "markdown"
    CSV = "csv"
    MACHINE = "machine"
    ALL = (MARKDOWN, CSV, MACHINE)


def render_report(run_dir: str | Path, fmt: str = ReportFormat.MARKDOWN) -> Path:
    """Render one report file from a verified bundle.

    Deterministic: a fixed bundle renders byte-identically. Digest
    mismatches on any referenced artifact raise BROKEN_REF.
    """
    bundle = load_bundle(run_dir, verify=True)
    tables = build_tables(bundle)
    run_dir = Path(run_dir)
    if fmt == ReportFormat.MARKDOWN:
        out = run_dir / "report.md"
        out.write_text(_markdown(bundle, tables), encoding="utf-8")
    elif fmt == ReportFormat.CSV:
        out = run_dir / "report.csv"
        out.write_text(_csv(bundle, tables), encoding="utf-8")
    elif fmt == ReportFormat.MACHINE:
        out = run_dir / "report.json"
        write_json(out, _machine(bundle, tables))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return out


# --- run diffing -----------------------------------------------------------------

_DIFF_METRICS = (
    "corpus_bleu",
    "mean_rouge_l_f1",
    "closed_accuracy_pct",
    "open_accuracy_pct",
    "overall_accuracy_pct",
    "mean_semantic_similarity",
)


def diff_runs(run_dir_a: str | Path, run_dir_b: str | Path) -> dict:
    """Signed per-metric and per-level-count deltas (b minus a) between two
    runs over the same manifest."""
    a = load_bundle(run_dir_a, verify=True)
    b = load_bundle(run_dir_b, verify=True)
    if not (a.has("manifest") and b.has("manifest")):
        raise ManifestMismatchError("both runs must reference a manifest")
    if a.refs["manifest"]["sha256"] != b.refs["manifest"]["sha256"]:
        raise ManifestMismatchError(
            "runs reference different manifests; deltas would be meaningless"
        )

    def metric_map(bundle):
        return {
            (r["model_id"], r["input_mode"]): r
            for r in _metric_rows(_load_if(bundle, "metrics"))
        }

    metrics_a, metrics_b = metric_map(a), metric_map(b)
    metric_deltas = {}
    for key in sorted(set(metrics_a) & set(metrics_b)):
        ra, rb = metrics_a[key], metrics_b[key]
        metric_deltas["/".join(key)] = {
            name: (
                None
                if ra.get(name) is None or rb.get(name) is None
                else rb[name] - ra[name]
            )
            for name in _DIFF_METRICS
        }

    def rubric_map(bundle):
        data = _load_if(bundle, "rubric") or {}
        return {agg["rater_id"]: agg for agg in data.get("raters", [])}

    rubric_a, rubric_b = rubric_map(a), rubric_map(b)
    level_deltas = {}
    for rater in sorted(set(rubric_a) & set(rubric_b)):
        level_deltas[rater] = {
            lvl: rubric_b[rater]["bucket_counts"].get(lvl, 0)
            - rubric_a[rater]["bucket_counts"].get(lvl, 0)
            for lvl in ("0", "1", "2", "3")
        }

    return {
        "run_a": a.run_id,
        "run_b": b.run_id,
        "manifest_sha256": a.refs["manifest"]["sha256"],
        "metric_deltas": metric_deltas,
        "level_count_deltas": level_deltas,
    }
