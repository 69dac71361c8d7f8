"""Shared HTTP plumbing: retrying POSTs with exponential backoff and an
instrumented request counter, used by the TTS, judge, embedding, and
inference clients."""

from __future__ import annotations

import os
import threading
import time

import httpx

from .errors import ConfigError

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class RetryBudgetExceeded(Exception):
    """Internal signal: the per-request attempt budget ran out. Callers map
    it to their module-specific unavailable error."""

    def __init__(self, url: str, attempts: int, last_error: str):
        super().__init__(f"{url}: gave up after {attempts} attempt(s): {last_error}")
        self.attempts = attempts
        self.last_error = last_error


def resolve_api_key(env_name: str | None) -> str | None:
    if not env_name:
        return None
    key = os.environ.get(env_name)
    if key is None:
        raise ConfigError(f"API key environment variable {env_name!r} is not set")
    return key


class RetryingPoster:
    """POSTs with bounded attempts and exponential backoff.

    ``max_attempts`` is the total request budget per call (1 = no retry).
    Every provider request increments ``requests_made``, which tests and
    resume checks rely on.
    """

    def __init__(
        self,
        max_attempts: int = 3,
        timeout_s: float = 30.0,
        backoff_base_s: float = 0.2,
        api_key: str | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self._lock = threading.Lock()
        self.requests_made = 0
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout_s, headers=headers)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _count(self) -> None:
        with self._lock:
            self.requests_made += 1

    def post(self, url: str, **kwargs) -> httpx.Response:
        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
            self._count()
            try:
                response = self._client.post(url, **kwargs)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {response.status_code}"
                continue
            return response
        raise RetryBudgetExceeded(url, self.max_attempts, last_error)
