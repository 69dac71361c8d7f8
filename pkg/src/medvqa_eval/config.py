"""Harness configuration with flag > config-file > environment precedence."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .metrics import EmbeddingServiceConfig
from .judge import JudgeClientConfig
from .predictions import InputMode
from .inference import InferenceEndpointConfig
from .tts import VoiceConfig

ENV_PREFIX = "MEDVQA_"

_MISSING = object()


def resolve(flag_value, file_value=_MISSING, env_value=None, default=None):
    """Single-setting precedence: CLI flag, then config file, then
    environment variable, then built-in default."""
    if flag_value is not None:
        return flag_value
    if file_value is not _MISSING and file_value is not None:
        return file_value
    if env_value is not None:
        return env_value
    return default


def env_value(name: str) -> str | None:
    return os.environ.get(ENV_PREFIX + name.upper())


@dataclass
class HarnessConfig:
    dataset_root: Path = Path(".")
    cache_dir: Path = Path("cache")
    runs_dir: Path = Path("runs")
    max_in_flight: int = 4
    voice: VoiceConfig | None = None
    judges: list[JudgeClientConfig] = field(default_factory=list)
    embedding: EmbeddingServiceConfig | None = None
    inference: InferenceEndpointConfig | None = None

    def snapshot(self) -> dict:
        """JSON-safe view for embedding into run bundles."""

        def voice_dict(v: VoiceConfig):
            return {
                "provider_base_url": v.provider_base_url,
                "voice_name": v.voice_name,
                "sample_rate_hz": v.sample_rate_hz,
                "format": v.format.value,
            }

        return {
            "dataset_root": str(self.dataset_root),
            "cache_dir": str(self.cache_dir),
            "runs_dir": str(self.runs_dir),
            "max_in_flight": self.max_in_flight,
            "voice": voice_dict(self.voice) if self.voice else None,
            "judges": [
                {"base_url": j.base_url, "model_name": j.model_name,
                 "temperature": j.temperature}
                for j in self.judges
            ],
            "embedding": (
                {"base_url": self.embedding.base_url,
                 "model_name": self.embedding.model_name,
                 "dimension": self.embedding.dimension}
                if self.embedding
                else None
            ),
            "inference": (
                {"base_url": self.inference.base_url,
                 "model_id": self.inference.model_id,
                 "input_mode": self.inference.input_mode.value}
                if self.inference
                else None
            ),
        }


def _build_voice(raw: dict) -> VoiceConfig:
    try:
        return VoiceConfig(
            provider_base_url=raw["provider_base_url"],
            voice_name=raw.get("voice_name", "neutral-1"),
            sample_rate_hz=int(raw.get("sample_rate_hz", 16000)),
            api_key_env=raw.get("api_key_env"),
            max_attempts=int(raw.get("max_attempts", 3)),
            timeout_s=float(raw.get("timeout_s", 30.0)),
            backoff_base_s=float(raw.get("backoff_base_s", 0.2)),
        )
    except KeyError as exc:
        raise ConfigError(f"voice config missing {exc.args[0]!r}") from exc


def _build_judge(raw: dict) -> JudgeClientConfig:
    try:
        return JudgeClientConfig(
            base_url=raw["base_url"],
            model_name=raw["model_name"],
            api_key_env=raw.get("api_key_env"),
            temperature=float(raw.get("temperature", 0.0)),
            max_retries=int(raw.get("max_retries", 2)),
            timeout_s=float(raw.get("timeout_s", 60.0)),
            max_in_flight=int(raw.get("max_in_flight", 4)),
            backoff_base_s=float(raw.get("backoff_base_s", 0.2)),
        )
    except KeyError as exc:
        raise ConfigError(f"judge config missing {exc.args[0]!r}") from exc


def _build_embedding(raw: dict) -> EmbeddingServiceConfig:
    try:
        return EmbeddingServiceConfig(
            base_url=raw["base_url"],
            model_name=raw["model_name"],
            dimension=int(raw["dimension"]),
            api_key_env=raw.get("api_key_env"),
            timeout_s=float(raw.get("timeout_s", 30.0)),
            max_attempts=int(raw.get("max_attempts", 3)),
            backoff_base_s=float(raw.get("backoff_base_s", 0.2)),
        )
    except KeyError as exc:
        raise ConfigError(f"embedding config missing {exc.args[0]!r}") from exc


def _build_inference(raw: dict) -> InferenceEndpointConfig:
    try:
        return InferenceEndpointConfig(
            base_url=raw["base_url"],
            model_id=raw["model_id"],
            input_mode=InputMode(raw.get("input_mode", "speech")),
            timeout_s=float(raw.get("timeout_s", 60.0)),
            max_attempts=int(raw.get("max_attempts", 3)),
            max_in_flight=int(raw.get("max_in_flight", 4)),
            api_key_env=raw.get("api_key_env"),
            backoff_base_s=float(raw.get("backoff_base_s", 0.2)),
        )
    except KeyError as exc:
        raise ConfigError(f"inference config missing {exc.args[0]!r}") from exc


def load_config(
    config_path: str | Path | None = None,
    flags: dict | None = None,
) -> HarnessConfig:
    """Assemble the harness config.

    ``flags`` holds already-parsed CLI values (None meaning "not given").
    The config file is JSON; environment variables use the MEDVQA_ prefix.
    """
    flags = flags or {}
    file_cfg: dict = {}
    path = resolve(
        flags.get("config"), env_value=env_value("config"), default=config_path
    )
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"could not read config file {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a JSON object")

    def setting(name: str, default=None):
        return resolve(
            flags.get(name),
            file_cfg.get(name, _MISSING),
            env_value(name),
            default,
        )

    cfg = HarnessConfig(
        dataset_root=Path(setting("dataset_root", ".")),
        cache_dir=Path(setting("cache_dir", "cache")),
        runs_dir=Path(setting("runs_dir", "runs")),
        max_in_flight=int(setting("max_in_flight", 4)),
    )
    if file_cfg.get("voice"):
        cfg.voice = _build_voice(file_cfg["voice"])
    for raw in file_cfg.get("judges", []):
        cfg.judges.append(_build_judge(raw))
    if file_cfg.get("embedding"):
        cfg.embedding = _build_embedding(file_cfg["embedding"])
    if file_cfg.get("inference"):
        cfg.inference = _build_inference(file_cfg["inference"])
    return cfg
