"""Synthetic dataset generation for demos and self-tests.

Generates manifests whose modality/split distribution matches the
reasoning-abnormality benchmark this harness targets (866 samples: 194
MRI, 143 CT, 529 X-ray; 716 train / 150 test), plus small ad hoc
manifests for pipeline dry runs. Images are written as tiny valid PNGs
so strict manifest validation and inference clients have real bytes to
read.
"""

from __future__ import annotations

import base64
from itertools import cycle
from pathlib import Path

from .dataset import DatasetManifest, Modality, QuestionType, Sample, Split, save_manifest
from .dataset import normalize_question
from .records import write_records

# Canonical distribution of the target benchmark.
BENCHMARK_SPLITS: dict[Split, dict[Modality, int]] = {
    Split.TRAIN: {Modality.MRI: 162, Modality.CT: 122, Modality.XRAY: 432},
    Split.TEST: {Modality.MRI: 32, Modality.CT: 21, Modality.XRAY: 97},
}

ORGANS = ("heart", "liver", "kidney", "lung", "spleen")

# 1x1 gray PNG; enough for image-bytes plumbing without an imaging dep.
_PNG_1PX = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGNiAAAABgADNjd8qAAA"
    "AABJRU5ErkJggg=="
)

_CLOSED_QUESTION = "Is the {organ} healthy?"
_OPEN_QUESTION = "What abnormalities are visible in the {organ}?"

_CLOSED_ANSWER = (
    "No, the {organ} appears abnormal. "
    "The scan shows focal changes consistent with disease in the {organ}."
)
_OPEN_ANSWER = (
    "The image shows an abnormality of the {organ}. "
    "There are irregular densities in the {organ} region that suggest pathology."
)


def _make_sample(idx: int, modality: Modality, split: Split, closed: bool) -> Sample:
    organ = ORGANS[idx % len(ORGANS)]
    question = (_CLOSED_QUESTION if closed else _OPEN_QUESTION).format(organ=organ)
    answer = (_CLOSED_ANSWER if closed else _OPEN_ANSWER).format(organ=organ)
    return Sample(
        id=f"s{idx:04d}",
        image_path=f"images/s{idx:04d}.png",
        modality=modality,
        organ=organ,
        question_text=question,
        normalized_question_text=normalize_question(question),
        answer_text=answer,
        split=split,
        question_type=QuestionType.CLOSED if closed else QuestionType.OPEN,
    )


def build_benchmark_manifest(name: str = "demo-benchmark") -> DatasetManifest:
    """Synthetic manifest matching the benchmark's published tallies."""
    samples = []
    idx = 0
    closed_flags = cycle((True, False))
    for split, per_modality in BENCHMARK_SPLITS.items():
        for modality, count in per_modality.items():
            for _ in range(count):
                samples.append(_make_sample(idx, modality, split, next(closed_flags)))
                idx += 1
    return DatasetManifest(name=name, samples=tuple(samples))


def build_small_manifest(n: int = 20, name: str = "demo-small") -> DatasetManifest:
    """Small test-split manifest for end-to-end dry runs."""
    modalities = cycle((Modality.XRAY, Modality.MRI, Modality.CT))
    samples = tuple(
        _make_sample(i, next(modalities), Split.TEST, closed=i % 2 == 0)
        for i in range(n)
    )
    return DatasetManifest(name=name, samples=samples)


def benchmark_count_spec_records() -> list[dict]:
    """Declarative tallies for the benchmark distribution, as count-spec
    records (total, per-modality with percentages, splits, test split by
    modality)."""
    totals = {
        m: sum(per[m] for per in BENCHMARK_SPLITS.values()) for m in Modality
    }
    grand = sum(totals.values())
    records: list[dict] = [{"check": "total", "expected": grand}]
    for modality, count in totals.items():
        records.append(
            {
                "check": "modality",
                "modality": modality.value,
                "expected": count,
                "expected_pct": round(100.0 * count / grand, 1),
            }
        )
    for split, per in BENCHMARK_SPLITS.items():
        records.append({"check": "split", "split": split.value, "expected": sum(per.values())})
    for modality, count in BENCHMARK_SPLITS[Split.TEST].items():
        records.append(
            {
                "check": "split_modality",
                "split": Split.TEST.value,
                "modality": modality.value,
                "expected": count,
            }
        )
    return records


def write_dataset_tree(
    manifest: DatasetManifest, root: str | Path, with_count_spec: bool = False
) -> dict[str, Path]:
    """Materialize a manifest plus placeholder images (and optionally the
    benchmark count spec) under ``root``. Returns the written paths."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for sample in manifest.samples:
        img = root / sample.image_path
        if not img.exists():
            img.write_bytes(_PNG_1PX)
    manifest_path = root / "manifest.jsonl"
    save_manifest(manifest, manifest_path)
    paths = {"manifest": manifest_path, "root": root}
    if with_count_spec:
        spec_path = root / "count_spec.jsonl"
        write_records(spec_path, benchmark_count_spec_records())
        paths["count_spec"] = spec_path
    return paths
