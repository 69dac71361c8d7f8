"""Command-line entry point: one subcommand per pipeline stage plus a
``pipeline`` meta-command chaining them and a ``serve`` mode exposing the
review REST API.

Commands can run free-standing on explicit paths, or against a run
directory (``--run RUN_ID``) where inputs/outputs default into
``runs/<run_id>/`` and every artifact is digest-tracked in the run
bundle. Every command supports ``--dry-run``, which prints the planned
actions as JSON and performs no side effects.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import asr as asr_mod
from . import reporting
from .agreement import ScoreVector, agreement_matrix
from .config import HarnessConfig, load_config
from .dataset import load_count_spec, load_manifest, save_manifest, validate_counts
from .errors import ConfigError, HarnessError
from .inference import InferenceEndpointConfig, run_inference
from .judge import (
    JudgeClientConfig,
    aggregate_rubric,
    judge_run,
    load_verdicts,
    rater_ids,
    vectors_from_verdicts,
)
from .metrics import (
    EmbeddingServiceConfig,
    RougeVariant,
    ScoreConfig,
    Smoothing,
    score_run,
)
from .predictions import InputMode, load_predictions
from .records import read_json, write_json
from .tts import SpeechSynthesizer, VoiceConfig

PROG = "medvqa"


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, sort_keys=True))


def _emit_error(err: HarnessError) -> None:
    print(json.dumps({"error": err.to_record()}, ensure_ascii=False), file=sys.stderr)


def _plan(args, actions: list[dict]) -> bool:
    """When --dry-run, print the plan and signal the caller to stop."""
    if not args.dry_run:
        return False
    for action in actions:
        _emit({"plan": action})
    return True


# --- argument plumbing --------------------------------------------------------

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--runs-dir", help="directory holding run bundles")
    parser.add_argument("--run", help="run id; inputs/outputs default into runs/<id>/")
    parser.add_argument("--dataset-root", help="root for image paths")
    parser.add_argument("--cache-dir", help="audio cache directory")
    parser.add_argument("--dry-run", action="store_true",
                        help="print planned actions, change nothing")


def _load_cfg(args) -> HarnessConfig:
    flags = {
        "config": getattr(args, "config", None),
        "runs_dir": getattr(args, "runs_dir", None),
        "dataset_root": getattr(args, "dataset_root", None),
        "cache_dir": getattr(args, "cache_dir", None),
    }
    return load_config(flags=flags)


def _run_dir(cfg: HarnessConfig, args) -> Path | None:
    return cfg.runs_dir / args.run if args.run else None


def _resolve_in(args, attr: str, run_dir: Path | None, default_name: str) -> Path:
    value = getattr(args, attr, None)
    if value:
        return Path(value)
    if run_dir is not None:
        return run_dir / default_name
    raise ConfigError(f"--{attr.replace('_', '-')} is required without --run")


def _resolve_out(args, attr: str, run_dir: Path | None, default_name: str) -> Path:
    return _resolve_in(args, attr, run_dir, default_name)


def _bundle_for(cfg: HarnessConfig, args) -> reporting.RunBundle | None:
    if not args.run:
        return None
    return reporting.init_run(cfg.runs_dir, args.run, config=cfg.snapshot())


def _record(bundle, key: str, path: Path) -> None:
    if bundle is None:
        return
    if path.parent != bundle.run_dir:
        # Free-standing path: copy into the run dir so the bundle digest
        # refers to a file the run owns.
        target = bundle.run_dir / reporting.ARTIFACT_FILES[key]
        if target != path:
            shutil.copyfile(path, target)
        reporting.record_artifact(bundle, key)
    else:
        reporting.record_artifact(bundle, key, path.name)


# --- service config from flags -----------------------------------------------

def _voice_cfg(cfg: HarnessConfig, args) -> VoiceConfig:
    if getattr(args, "voice_url", None):
        return VoiceConfig(
            provider_base_url=args.voice_url,
            voice_name=args.voice_name or "neutral-1",
            sample_rate_hz=args.sample_rate or 16000,
            api_key_env=getattr(args, "voice_key_env", None),
            max_attempts=getattr(args, "max_attempts", None) or 3,
        )
    if cfg.voice is not None:
        return cfg.voice
    raise ConfigError("no voice configured: pass --voice-url or a config file")


def _judge_cfg(cfg: HarnessConfig, args) -> JudgeClientConfig:
    if getattr(args, "judge_url", None):
        return JudgeClientConfig(
            base_url=args.judge_url,
            model_name=args.judge_model or "judge",
            api_key_env=getattr(args, "judge_key_env", None),
            max_in_flight=cfg.max_in_flight,
        )
    if cfg.judges:
        if args.judge_model:
            for judge in cfg.judges:
                if judge.model_name == args.judge_model:
                    return judge
            raise ConfigError(f"judge {args.judge_model!r} not in config")
        return cfg.judges[0]
    raise ConfigError("no judge configured: pass --judge-url or a config file")


def _inference_cfg(cfg: HarnessConfig, args) -> InferenceEndpointConfig:
    mode = InputMode(args.mode) if getattr(args, "mode", None) else None
    if getattr(args, "endpoint", None):
        return InferenceEndpointConfig(
            base_url=args.endpoint,
            model_id=args.model or "model",
            input_mode=mode or InputMode.SPEECH,
            max_in_flight=cfg.max_in_flight,
        )
    if cfg.inference is not None:
        base = cfg.inference
        if mode is not None and mode is not base.input_mode:
            from dataclasses import replace

            base = replace(base, input_mode=mode)
        return base
    raise ConfigError("no inference endpoint configured: pass --endpoint or a config file")


def _embedding_cfg(cfg: HarnessConfig, args) -> EmbeddingServiceConfig | None:
    if getattr(args, "embedding_url", None):
        return EmbeddingServiceConfig(
            base_url=args.embedding_url,
            model_name=getattr(args, "embedding_model", None) or "embedder",
            dimension=getattr(args, "embedding_dim", None) or 8,
        )
    return cfg.embedding


# --- commands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    manifest_path = Path(args.manifest)
    actions = [{"action": "validate", "manifest": str(manifest_path),
                "count_spec": args.count_spec, "strict": args.strict}]
    if run_dir is not None:
        actions.append({"action": "record", "run_dir": str(run_dir)})
    if _plan(args, actions):
        return 0

    manifest = load_manifest(
        manifest_path,
        strict=args.strict,
        dataset_root=cfg.dataset_root if args.strict else None,
    )
    checks = load_count_spec(args.count_spec) if args.count_spec else []
    report = validate_counts(manifest, checks)

    counts = {
        "total": len(manifest),
        "by_modality": {m.value: n for m, n in manifest.counts_by_modality().items()},
        "by_split": {s.value: n for s, n in manifest.counts_by_split().items()},
        "by_split_modality": {
            f"{s.value}/{m.value}": n
            for (s, m), n in manifest.counts_by_split_modality().items()
        },
    }
    result = dict(report.to_dict(), counts=counts)

    bundle = _bundle_for(cfg, args)
    if bundle is not None:
        target = bundle.run_dir / reporting.ARTIFACT_FILES["manifest"]
        if target != manifest_path:
            shutil.copyfile(manifest_path, target)
        reporting.record_artifact(bundle, "manifest")
        write_json(bundle.run_dir / reporting.ARTIFACT_FILES["validation"], result)
        reporting.record_artifact(bundle, "validation")

    _emit(result)
    return 0 if report.ok else 1


def cmd_tts(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    manifest_path = _resolve_in(args, "manifest", run_dir, "manifest.jsonl")
    out_path = _resolve_out(args, "out", run_dir, "manifest.jsonl")
    voice = _voice_cfg(cfg, args)
    if _plan(args, [{"action": "tts", "manifest": str(manifest_path),
                     "out": str(out_path), "provider": voice.provider_base_url,
                     "voice": voice.voice_name, "cache_dir": str(cfg.cache_dir)}]):
        return 0

    manifest = load_manifest(manifest_path)
    with SpeechSynthesizer(voice, cfg.cache_dir) as synth:
        updated, report = synth.synthesize_manifest(
            manifest, max_in_flight=cfg.max_in_flight
        )
    save_manifest(updated, out_path)
    bundle = _bundle_for(cfg, args)
    if bundle is not None and out_path == bundle.run_dir / "manifest.jsonl":
        reporting.record_artifact(bundle, "manifest")
    _emit(report.to_dict())
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    manifest_path = _resolve_in(args, "manifest", run_dir, "manifest.jsonl")
    out_path = _resolve_out(args, "out", run_dir, "predictions.jsonl")
    endpoint = _inference_cfg(cfg, args)
    if _plan(args, [{"action": "infer", "manifest": str(manifest_path),
                     "out": str(out_path), "endpoint": endpoint.base_url,
                     "model": endpoint.model_id, "mode": endpoint.input_mode.value}]):
        return 0

    manifest = load_manifest(manifest_path)
    report = run_inference(
        manifest,
        endpoint,
        out_path,
        dataset_root=cfg.dataset_root,
        audio_root=cfg.cache_dir,
    )
    bundle = _bundle_for(cfg, args)
    _record(bundle, "predictions", out_path)
    _emit(report.to_dict())
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    manifest_path = _resolve_in(args, "manifest", run_dir, "manifest.jsonl")
    predictions_path = _resolve_in(args, "predictions", run_dir, "predictions.jsonl")
    out_path = _resolve_out(args, "out", run_dir, "metrics.json")
    embedding = _embedding_cfg(cfg, args)
    if _plan(args, [{"action": "eval", "manifest": str(manifest_path),
                     "predictions": str(predictions_path), "out": str(out_path),
                     "bleu_max_n": args.bleu_max_n,
                     "bleu_smoothing": args.bleu_smoothing,
                     "rouge_variant": args.rouge_variant,
                     "embedding": embedding.base_url if embedding else None}]):
        return 0

    manifest = load_manifest(manifest_path)
    predictions = load_predictions(predictions_path)
    score_cfg = ScoreConfig(
        bleu_max_n=args.bleu_max_n,
        bleu_smoothing=Smoothing(args.bleu_smoothing),
        rouge_variant=RougeVariant(args.rouge_variant),
        embedding=embedding,
    )
    reports = score_run(manifest, predictions, score_cfg)
    payload = {"reports": [r.to_dict() for r in reports]}
    write_json(out_path, payload)
    bundle = _bundle_for(cfg, args)
    _record(bundle, "metrics", out_path)
    _emit(
        {
            "reports": [
                {k: v for k, v in r.to_dict().items() if k != "per_sample"}
                for r in reports
            ]
        }
    )
    return 0


def cmd_asr(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    out_path = _resolve_out(args, "out", run_dir, "asr.json")
    if _plan(args, [{"action": "asr", "pairs": args.pairs, "out": str(out_path)}]):
        return 0

    pairs = asr_mod.load_transcript_pairs(args.pairs)
    report = asr_mod.corpus_error_rates(pairs)
    write_json(out_path, report.to_dict())
    bundle = _bundle_for(cfg, args)
    _record(bundle, "asr", out_path)
    summary = report.to_dict()
    summary.pop("pairs")
    _emit(summary)
    return 0


def _refresh_rubric(rubric_path: Path, verdicts_path: Path) -> dict:
    verdicts = load_verdicts(verdicts_path)
    payload = {
        "raters": [
            aggregate_rubric(verdicts, rater).to_dict() for rater in rater_ids(verdicts)
        ]
    }
    write_json(rubric_path, payload)
    return payload


def cmd_judge(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    manifest_path = _resolve_in(args, "manifest", run_dir, "manifest.jsonl")
    predictions_path = _resolve_in(args, "predictions", run_dir, "predictions.jsonl")
    out_path = _resolve_out(args, "out", run_dir, "verdicts.jsonl")
    judge_cfg = _judge_cfg(cfg, args)
    if _plan(args, [{"action": "judge", "manifest": str(manifest_path),
                     "predictions": str(predictions_path), "out": str(out_path),
                     "judge": judge_cfg.model_name, "rounds": args.rounds}]):
        return 0

    manifest = load_manifest(manifest_path)
    predictions = load_predictions(predictions_path)
    report = judge_run(manifest, predictions, judge_cfg, out_path, rounds=args.rounds)

    rubric_path = (
        run_dir / reporting.ARTIFACT_FILES["rubric"]
        if run_dir is not None
        else out_path.with_name("rubric.json")
    )
    _refresh_rubric(rubric_path, out_path)

    bundle = _bundle_for(cfg, args)
    _record(bundle, "verdicts", out_path)
    if bundle is not None:
        reporting.record_artifact(bundle, "rubric")
    _emit(report.to_dict())
    return 0


def cmd_correlate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(cfg, args)
    verdict_paths = [Path(p) for p in (args.verdicts or [])]
    if not verdict_paths:
        verdict_paths = [_resolve_in(args, "verdicts_default", run_dir, "verdicts.jsonl")]
    metrics_path = None
    if args.metrics:
        metrics_path = Path(args.metrics)
    elif run_dir is not None and (run_dir / "metrics.json").is_file():
        metrics_path = run_dir / "metrics.json"
    out_path = _resolve_out(args, "out", run_dir, "agreement.json")
    if _plan(args, [{"action": "correlate",
                     "verdicts": [str(p) for p in verdict_paths],
                     "metrics": str(metrics_path) if metrics_path else None,
                     "out": str(out_path)}]):
        return 0

    verdicts = []
    for path in verdict_paths:
        verdicts.extend(load_verdicts(path))
    vectors = vectors_from_verdicts(verdicts)

    if metrics_path is not None:
        data = read_json(metrics_path)
        reports = data.get("reports", [])
        for report in reports:
            suffix = (
                f":{report['model_id']}/{report['input_mode']}" if len(reports) > 1 else ""
            )
            per_sample = report.get("per_sample", [])
            if not per_sample:
                continue
            for metric, field_name in (
                ("metric:bleu", "bleu"),
                ("metric:rouge_l", "rouge_l"),
                ("metric:semantic", "semantic_similarity"),
            ):
                scores = tuple(
                    (s["sample_id"], float(s[field_name]))
                    for s in per_sample
                    if s.get(field_name) is not None
                )
                if scores:
                    vectors.append(ScoreVector(rater_id=metric + suffix, scores=scores))

    if len(vectors) < 2:
        raise ConfigError("correlation needs at least two score vectors")
    results = agreement_matrix(vectors)
    payload = {"results": [r.to_dict() for r in results]}
    write_json(out_path, payload)
    bundle = _bundle_for(cfg, args)
    _record(bundle, "agreement", out_path)
    _emit(payload)
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    if not args.run:
        raise ConfigError("report requires --run")
    run_dir = cfg.runs_dir / args.run
    formats = (
        list(reporting.ReportFormat.ALL) if args.format == "all" else [args.format]
    )
    if _plan(args, [{"action": "report", "run_dir": str(run_dir), "formats": formats}]):
        return 0
    written = [str(reporting.render_report(run_dir, fmt)) for fmt in formats]
    _emit({"written": written})
    return 0


def cmd_diff(args) -> int:
    cfg = _load_cfg(args)
    if _plan(args, [{"action": "diff", "run_a": args.run_a, "run_b": args.run_b}]):
        return 0
    result = reporting.diff_runs(cfg.runs_dir / args.run_a, cfg.runs_dir / args.run_b)
    _emit(result)
    return 0


def _latest_run_id(cfg: HarnessConfig) -> str:
    index = cfg.runs_dir / reporting.INDEX_NAME
    if not index.is_file():
        raise ConfigError(f"no runs recorded under {cfg.runs_dir}")
    from .records import read_records

    entries = read_records(index)
    if not entries:
        raise ConfigError(f"no runs recorded under {cfg.runs_dir}")
    return entries[-1]["run_id"]


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    cfg = _load_cfg(args)
    run_id = args.run or _latest_run_id(cfg)
    run_dir = cfg.runs_dir / run_id
    host, _, port = args.bind.rpartition(":")
    if _plan(args, [{"action": "serve", "run_dir": str(run_dir), "bind": args.bind}]):
        return 0
    app = create_app(
        run_dir,
        dataset_root=cfg.dataset_root,
        cache_dir=cfg.cache_dir,
        model_filter=args.model,
        ui_dir=args.ui_dir,
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def cmd_pipeline(args) -> int:
    """Chain validate -> tts -> infer -> [asr] -> eval -> judge -> correlate
    -> report into one run directory."""
    if not args.run:
        raise ConfigError("pipeline requires --run")
    stages: list[tuple] = []

    def stage(name: str, handler, **overrides):
        ns = argparse.Namespace(**vars(args))
        for key, value in overrides.items():
            setattr(ns, key, value)
        stages.append((name, handler, ns))

    stage("validate", cmd_validate)
    stage("tts", cmd_tts, manifest=None, out=None)
    stage("infer", cmd_infer, manifest=None, out=None)
    if args.transcripts:
        stage("asr", cmd_asr, pairs=args.transcripts, out=None)
    stage("eval", cmd_eval, manifest=None, predictions=None, out=None)
    stage("judge", cmd_judge, manifest=None, predictions=None, out=None)
    stage("correlate", cmd_correlate, verdicts=None, metrics=None, out=None)
    stage("report", cmd_report)

    for name, handler, ns in stages:
        if args.dry_run:
            handler(ns)  # each handler prints its own plan
            continue
        code = handler(ns)
        if code != 0:
            _emit({"pipeline": "failed", "stage": name, "exit_code": code})
            return code
    if not args.dry_run:
        _emit({"pipeline": "ok", "run": args.run})
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Evaluation harness for speech-driven medical VQA",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a manifest and its tallies")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--count-spec")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("tts", help="synthesize audio for every question")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--voice-url")
    p.add_argument("--voice-name")
    p.add_argument("--voice-key-env")
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--max-attempts", type=int)
    p.set_defaults(handler=cmd_tts)

    p = sub.add_parser("infer", help="collect predictions from a model endpoint")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--mode", choices=[m.value for m in InputMode])
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against the manifest")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.add_argument("--bleu-max-n", type=int, default=4)
    p.add_argument("--bleu-smoothing", default=Smoothing.NONE.value,
                   choices=[s.value for s in Smoothing])
    p.add_argument("--rouge-variant", default=RougeVariant.L.value,
                   choices=[v.value for v in RougeVariant])
    p.add_argument("--embedding-url")
    p.add_argument("--embedding-model")
    p.add_argument("--embedding-dim", type=int)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("asr", help="word/character error rates for transcript pairs")
    _common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_asr)

    p = sub.add_parser("judge", help="run LLM-as-judge scoring")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.add_argument("--judge-url")
    p.add_argument("--judge-model")
    p.add_argument("--judge-key-env")
    p.add_argument("--rounds", type=int, default=3)
    p.set_defaults(handler=cmd_judge)

    p = sub.add_parser("correlate", help="agreement between raters and metrics")
    _common(p)
    p.add_argument("--verdicts", nargs="*")
    p.add_argument("--metrics")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_correlate)

    p = sub.add_parser("report", help="render run reports")
    _common(p)
    p.add_argument("--format", default=reporting.ReportFormat.MARKDOWN,
                   choices=list(reporting.ReportFormat.ALL) + ["all"])
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("diff", help="per-metric deltas between two runs")
    _common(p)
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.set_defaults(handler=cmd_diff)

    p = sub.add_parser("serve", help="serve the review REST API")
    _common(p)
    p.add_argument("--bind", default="127.0.0.1:8799")
    p.add_argument("--model", help="restrict the review queue to one model id")
    p.add_argument("--ui-dir", help="static directory for the review UI build")
    p.set_defaults(handler=cmd_serve)

    p = sub.add_parser("pipeline", help="run the full evaluation chain")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--count-spec")
    p.add_argument("--transcripts")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--mode", choices=[m.value for m in InputMode])
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--voice-url")
    p.add_argument("--voice-name")
    p.add_argument("--voice-key-env")
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--judge-url")
    p.add_argument("--judge-model")
    p.add_argument("--judge-key-env")
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--bleu-max-n", type=int, default=4)
    p.add_argument("--bleu-smoothing", default=Smoothing.NONE.value,
                   choices=[s.value for s in Smoothing])
    p.add_argument("--rouge-variant", default=RougeVariant.L.value,
                   choices=[v.value for v in RougeVariant])
    p.add_argument("--embedding-url")
    p.add_argument("--embedding-model")
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--verdicts", nargs="*")
    p.add_argument("--metrics")
    p.add_argument("--predictions")
    p.add_argument("--out")
    p.add_argument("--format", default="all",
                   choices=list(reporting.ReportFormat.ALL) + ["all"])
    p.set_defaults(handler=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as err:
        _emit_error(err)
        return 2
    except HarnessError as err:
        _emit_error(err)
        return 1


def entrypoint() -> None:
    sys.exit(main())
