from __future__ import annotations

import threading

import pytest

from medvqa_eval.fixtures import build_small_manifest
from medvqa_eval.tts import (
    BadAudioError,
    ProviderUnavailableError,
    SpeechSynthesizer,
    SynthesisRunError,
    VoiceConfig,
    cache_key,
)

from mockservers import MockTTSServer


def _cfg(server, **overrides) -> VoiceConfig:
    base = dict(
        provider_base_url=server.url,
        voice_name="neutral-1",
        max_attempts=3,
        backoff_base_s=0.01,
    )
    base.update(overrides)
    return VoiceConfig(**base)


class TestCacheKey:
    def test_pure_function_of_inputs(self):
        a = cache_key("text", "voice", 16000)
        assert a == cache_key("text", "voice", 16000)
        assert a != cache_key("text!", "voice", 16000)
        assert a != cache_key("text", "other", 16000)
        assert a != cache_key("text", "voice", 22050)

    def test_fields_cannot_collide_via_concatenation(self):
        assert cache_key("ab", "c", 1) != cache_key("a", "bc", 1)


class TestSynthesize:
    def test_cache_hit_is_free(self, tmp_path):
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                first = synth.synthesize("Is the lung healthy?")
                second = synth.synthesize("Is the lung healthy?")
            assert first.cache_key == second.cache_key
            assert server.requests == 1
            assert first.path.is_file()
            assert first.duration_ms > 0

    def test_cache_layout(self, tmp_path):
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                asset = synth.synthesize("hello")
        key = asset.cache_key
        assert asset.path == tmp_path / key[:2] / f"{key}.wav"

    def test_non_wav_response_is_bad_audio(self, tmp_path):
        with MockTTSServer(garbage=True) as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                with pytest.raises(BadAudioError):
                    synth.synthesize("hello")
        # nothing may be visible in the cache after a failure
        assert not list(tmp_path.rglob("*.wav"))

    def test_retry_budget_two_failures_then_success(self, tmp_path):
        with MockTTSServer() as server:
            server.fail_next = 2
            with SpeechSynthesizer(_cfg(server, max_attempts=3), tmp_path) as synth:
                asset = synth.synthesize("hello")
            assert asset.duration_ms > 0
            assert server.requests == 3

    def test_budget_exhausted_is_provider_unavailable(self, tmp_path):
        with MockTTSServer() as server:
            server.fail_next = 99
            with SpeechSynthesizer(_cfg(server, max_attempts=2), tmp_path) as synth:
                with pytest.raises(ProviderUnavailableError):
                    synth.synthesize("hello")
            assert server.requests == 2

    def test_no_partial_files_visible(self, tmp_path):
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                synth.synthesize("hello")
        leftovers = [p for p in tmp_path.rglob("*") if p.is_file() and p.suffix != ".wav"]
        assert leftovers == []

    def test_corrupted_cache_entry_refetched(self, tmp_path):
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                asset = synth.synthesize("hello")
                asset.path.write_bytes(b"junk, not a wav")
                again = synth.synthesize("hello")
            assert server.requests == 2
            assert again.duration_ms > 0

    def test_concurrent_same_key_coalesced(self, tmp_path):
        with MockTTSServer() as server:
            server.handler_delay = 0.05
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                results = []
                threads = [
                    threading.Thread(
                        target=lambda: results.append(synth.synthesize("same text"))
                    )
                    for _ in range(4)
                ]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()
            assert len({r.cache_key for r in results}) == 1
            assert server.requests == 1


class TestSynthesizeManifest:
    def test_cold_cache_three_requests(self, tmp_path):
        manifest = build_small_manifest(3)
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                updated, report = synth.synthesize_manifest(manifest)
        assert server.requests == 3
        assert all(s.audio_ref and s.audio_ref.endswith(".wav") for s in updated.samples)
        assert report.ok and report.synthesized == 3

    def test_warm_cache_zero_requests(self, tmp_path):
        manifest = build_small_manifest(3)
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                synth.synthesize_manifest(manifest)
            first_requests = server.requests
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth2:
                updated, report = synth2.synthesize_manifest(manifest)
            assert server.requests == first_requests
            assert report.cache_hits == 3
        assert all(s.audio_ref for s in updated.samples)

    def test_order_preserved(self, tmp_path):
        manifest = build_small_manifest(6)
        with MockTTSServer() as server:
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                updated, _ = synth.synthesize_manifest(manifest, max_in_flight=3)
        assert [s.id for s in updated.samples] == [s.id for s in manifest.samples]

    def test_max_in_flight_respected(self, tmp_path):
        manifest = build_small_manifest(8)
        with MockTTSServer() as server:
            server.handler_delay = 0.03
            with SpeechSynthesizer(_cfg(server), tmp_path) as synth:
                synth.synthesize_manifest(manifest, max_in_flight=2)
            assert server.peak_in_flight <= 2

    def test_failures_aggregate_and_raise(self, tmp_path):
        manifest = build_small_manifest(3)
        with MockTTSServer() as server:
            server.fail_next = 10 ** 6  # every request fails
            with SpeechSynthesizer(_cfg(server, max_attempts=1), tmp_path) as synth:
                with pytest.raises(SynthesisRunError) as exc:
                    synth.synthesize_manifest(manifest)
            report = exc.value.report
            assert len(report.failures) == 3
            assert {f.code for f in report.failures} == {"PROVIDER_UNAVAILABLE"}
