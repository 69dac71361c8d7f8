"""Evaluation harness for speech-driven medical visual question answering.

Manages the reasoning-abnormality dataset format, synthesizes spoken
queries, drives model endpoints, scores predictions (WER/CER, BLEU,
ROUGE, accuracy, semantic similarity), runs LLM-as-judge rubric scoring,
and measures agreement between judges and human experts.
"""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    DatasetManifest,
    Modality,
    NormalizationRuleSet,
    QuestionType,
    Sample,
    Split,
    classify_question,
    filter_samples,
    load_manifest,
    normalize_question,
    validate_counts,
)
from .asr import corpus_error_rates, edit_distance, wer, cer  # noqa: F401
from .metrics import bleu, corpus_bleu, rouge_l, score_run  # noqa: F401
from .agreement import agreement_matrix, pearson, spearman  # noqa: F401
from .judge import (  # noqa: F401
    aggregate_rubric,
    build_reasoning_prompt,
    build_structure_prompt,
    judge_run,
    parse_verdict,
)
from .tts import synthesize, synthesize_manifest  # noqa: F401
from .inference import run_inference  # noqa: F401
from .reporting import diff_runs, render_report  # noqa: F401
