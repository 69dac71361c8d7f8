"""Line-delimited JSON record files.

All harness file formats (manifests, predictions, verdicts, count specs)
are UTF-8 JSONL: one object per line, so errors can always point at a
line number and large files stream.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator


def iter_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; line numbers are 1-based.

    Blank lines are skipped. Raises ValueError with the offending line
    number embedded for non-JSON or non-object lines; callers wrap it
    in their own typed error.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"line {lineno}: record is not an object")
            yield lineno, obj


def read_records(path: str | Path) -> list[dict]:
    return [rec for _, rec in iter_records(path)]


def dump_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def write_records(path: str | Path, records: Iterable[dict]) -> None:
    """Write records atomically (write to temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(dump_record(rec) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def append_record(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dump_record(record) + "\n")


def write_json(path: str | Path, obj) -> None:
    """Atomic single-document JSON write with stable key order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, ensure_ascii=False, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
