"""Text-to-speech client with content-addressed caching.

Audio assets are keyed by a digest of (normalized text, voice name,
sample rate) and stored under ``cache/<first-2-hex>/<key>.wav``. Writes
are atomic (temp file + rename) so a partially written file is never
visible at its final path, and concurrent requests for the same key are
coalesced into a single provider call.
"""

from __future__ import annotations

import hashlib
import io
import os
import tempfile
import threading
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from .dataset import DatasetManifest
from .errors import HarnessError, IOFailure
from .httpclient import RetryBudgetExceeded, RetryingPoster, resolve_api_key


class ProviderUnavailableError(HarnessError):
    code = "PROVIDER_UNAVAILABLE"


class BadAudioError(HarnessError):
    code = "BAD_AUDIO"


class SynthesisRunError(HarnessError):
    code = "SYNTHESIS_INCOMPLETE"

    def __init__(self, message: str, report: "SynthesisReport"):
        super().__init__(message)
        self.report = report


class AudioFormat(str, Enum):
    WAV_PCM16_MONO = "WAV_PCM16_MONO"


@dataclass(frozen=True)
class VoiceConfig:
    provider_base_url: str
    voice_name: str
    sample_rate_hz: int = 16000  # canonical speech-model input rate
    format: AudioFormat = AudioFormat.WAV_PCM16_MONO
    api_key_env: str | None = None
    max_attempts: int = 3  # total provider requests allowed per synthesis
    timeout_s: float = 30.0
    backoff_base_s: float = 0.2

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class AudioAsset:
    cache_key: str
    path: Path
    duration_ms: int


@dataclass(frozen=True)
class SampleFailure:
    sample_id: str
    code: str
    message: str


@dataclass(frozen=True)
class SynthesisReport:
    total: int
    synthesized: int
    cache_hits: int
    requests_made: int
    failures: tuple[SampleFailure, ...]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "synthesized": self.synthesized,
            "cache_hits": self.cache_hits,
            "requests_made": self.requests_made,
            "failures": [
                {"sample_id": f.sample_id, "code": f.code, "message": f.message}
                for f in self.failures
            ],
        }


def cache_key(text: str, voice_name: str, sample_rate_hz: int) -> str:
    """Content address of one synthesis request."""
    payload = "\x1f".join((text, voice_name, str(sample_rate_hz)))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def asset_relpath(key: str) -> str:
    return f"{key[:2]}/{key}.wav"


def _wav_duration_ms(payload: bytes) -> int:
    if len(payload) < 12 or payload[:4] != b"RIFF" or payload[8:12] != b"WAVE":
        raise BadAudioError("response is not a RIFF/WAVE file")
    try:
        with wave.open(io.BytesIO(payload)) as wav:
            frames = wav.getnframes()
            rate = wav.getframerate()
    except (wave.Error, EOFError) as exc:
        raise BadAudioError(f"unreadable WAV payload: {exc}") from exc
    if frames <= 0 or rate <= 0:
        raise BadAudioError("WAV payload contains no audio frames")
    return max(1, round(1000.0 * frames / rate))


class SpeechSynthesizer:
    """Provider client bound to one voice configuration and cache dir."""

    def __init__(self, cfg: VoiceConfig, cache_dir: str | Path):
        self.cfg = cfg
        self.cache_dir = Path(cache_dir)
        self._poster = RetryingPoster(
            max_attempts=cfg.max_attempts,
            timeout_s=cfg.timeout_s,
            backoff_base_s=cfg.backoff_base_s,
            api_key=resolve_api_key(cfg.api_key_env),
        )
        self._key_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def close(self) -> None:
        self._poster.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def requests_made(self) -> int:
        return self._poster.requests_made

    def _key_lock(self, key: str) -> threading.Lock:
        with self._registry_lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def _load_cached(self, key: str) -> AudioAsset | None:
        path = self.cache_dir / asset_relpath(key)
        if not path.is_file():
            return None
        try:
            duration_ms = _wav_duration_ms(path.read_bytes())
        except BadAudioError:
            # corrupted cache entry: treat as a miss and refetch
            path.unlink(missing_ok=True)
            return None
        return AudioAsset(cache_key=key, path=path, duration_ms=duration_ms)

    def _fetch(self, text: str) -> bytes:
        try:
            response = self._poster.post(
                self.cfg.provider_base_url,
                json={
                    "text": text,
                    "voice_name": self.cfg.voice_name,
                    "sample_rate": self.cfg.sample_rate_hz,
                },
            )
        except RetryBudgetExceeded as exc:
            raise ProviderUnavailableError(str(exc)) from exc
        if response.status_code != 200:
            raise ProviderUnavailableError(
                f"provider returned HTTP {response.status_code}"
            )
        return response.content

    def synthesize(self, text: str) -> AudioAsset:
        """Return the audio asset for ``text``, from cache when possible.

        A cache hit performs no network request. On a miss the provider is
        called (with bounded retries), the payload is validated as WAV, and
        the file is written atomically.
        """
        if not text or not text.strip():
            raise ValueError("text must be non-empty")
        key = cache_key(text, self.cfg.voice_name, self.cfg.sample_rate_hz)
        with self._key_lock(key):
            cached = self._load_cached(key)
            if cached is not None:
                return cached

            payload = self._fetch(text)
            duration_ms = _wav_duration_ms(payload)
            path = self.cache_dir / asset_relpath(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=key, suffix=".part")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(payload)
                os.replace(tmp, path)
            except OSError as exc:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise IOFailure(f"could not write audio asset: {exc}") from exc
            return AudioAsset(cache_key=key, path=path, duration_ms=duration_ms)

    def synthesize_manifest(
        self, manifest: DatasetManifest, max_in_flight: int = 4
    ) -> tuple[DatasetManifest, SynthesisReport]:
        """Synthesize audio for every sample, bounded to ``max_in_flight``
        concurrent provider requests.

        Resumable: cached entries are skipped without a request. Output
        sample order equals input order. Raises SynthesisRunError if any
        sample is still unsynthesized after retries.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

        failures: list[SampleFailure] = []
        results: dict[str, str] = {}
        hits = 0
        hits_lock = threading.Lock()

        def work(sample) -> None:
            nonlocal hits
            text = sample.normalized_question_text
            key = cache_key(text, self.cfg.voice_name, self.cfg.sample_rate_hz)
            was_cached = (self.cache_dir / asset_relpath(key)).is_file()
            try:
                asset = self.synthesize(text)
            except HarnessError as exc:
                failures.append(
                    SampleFailure(sample_id=sample.id, code=exc.code, message=str(exc))
                )
                return
            if was_cached:
                with hits_lock:
                    hits += 1
            results[sample.id] = asset_relpath(asset.cache_key)

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            list(pool.map(work, manifest.samples))

        updated = manifest.with_samples(
            replace(s, audio_ref=results[s.id]) if s.id in results else s
            for s in manifest.samples
        )
        report = SynthesisReport(
            total=len(manifest),
            synthesized=len(results),
            cache_hits=hits,
            requests_made=self.requests_made,
            failures=tuple(failures),
        )
        if failures:
            raise SynthesisRunError(
                f"{len(failures)} of {len(manifest)} samples failed synthesis", report
            )
        return updated, report


def synthesize(text: str, cfg: VoiceConfig, cache_dir: str | Path) -> AudioAsset:
    """One-shot synthesis with a throwaway client."""
    with SpeechSynthesizer(cfg, cache_dir) as synth:
        return synth.synthesize(text)


def synthesize_manifest(
    manifest: DatasetManifest,
    cfg: VoiceConfig,
    cache_dir: str | Path,
    max_in_flight: int = 4,
) -> tuple[DatasetManifest, SynthesisReport]:
    with SpeechSynthesizer(cfg, cache_dir) as synth:
        return synth.synthesize_manifest(manifest, max_in_flight)
