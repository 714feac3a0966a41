"""Client for remote face-compare services.

Speaks one generic protocol: POST <endpoint>/compare with multipart
fields image_a/image_b (PNG-encoded); the service answers JSON
{"confidence": <0..100>}. Transient failures (429/5xx, connection
errors) are retried with exponential backoff; auth failures are not.
A shared rate limiter spaces request starts, also under the bounded
concurrency of batch_compare. Provider-specific request shapes would
live in adapters around this client.
"""
from __future__ import annotations

import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

from .data import encode_png
from .ddim import ImageBuffer

TRANSIENT_STATUSES = {429, 500, 502, 503, 504}
AUTH_STATUSES = {401, 403}


class ApiError(RuntimeError):
    pass


class AuthenticationError(ApiError):
    pass


class MalformedResponseError(ApiError):
    pass


class RetriesExhaustedError(ApiError):
    pass


class ConfidenceRangeError(ApiError):
    pass


@dataclass(frozen=True)
class CompareResult:
    confidence: float
    latency_ms: float
    provider: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 100.0:
            raise ConfidenceRangeError(f"confidence {self.confidence} outside [0, 100]")


class RateLimiter:
    """Spaces acquisitions at least 1/rps seconds apart; thread-safe."""

    def __init__(self, rps: float):
        if rps <= 0:
            raise ValueError("rate limit must be positive")
        self.interval = 1.0 / rps
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                if now >= self._next_at:
                    self._next_at = max(self._next_at, now) + self.interval
                    return
                wait = self._next_at - now
            time.sleep(wait)


class FaceCompareClient:
    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        *,
        provider: str = "generic",
        rate_limit_rps: float = 8.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_factor: float = 2.0,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.provider = provider
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.timeout = timeout
        self.limiter = RateLimiter(rate_limit_rps)
        self.session = session or requests.Session()

    def compare(self, image_a: ImageBuffer, image_b: ImageBuffer) -> CompareResult:
        """One comparison; retries transient failures with backoff."""
        files = {
            "image_a": ("image_a.png", encode_png(image_a), "image/png"),
            "image_b": ("image_b.png", encode_png(image_b), "image/png"),
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        started = time.monotonic()
        last_failure = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            self.limiter.acquire()
            try:
                resp = self.session.post(
                    f"{self.endpoint}/compare", files=files, headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_failure = f"connection error: {exc}"
                continue
            if resp.status_code in AUTH_STATUSES:
                raise AuthenticationError(f"authentication failed ({resp.status_code})")
            if resp.status_code in TRANSIENT_STATUSES:
                last_failure = f"transient HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ApiError(f"unexpected HTTP {resp.status_code}")
            try:
                confidence = float(resp.json()["confidence"])
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedResponseError(f"bad response body: {exc}") from exc
            latency_ms = (time.monotonic() - started) * 1000.0
            return CompareResult(
                confidence=confidence, latency_ms=latency_ms, provider=self.provider
            )
        raise RetriesExhaustedError(
            f"gave up after {self.max_retries} retries; last failure: {last_failure}"
        )

    def batch_compare(
        self,
        protected: list[ImageBuffer],
        target: ImageBuffer,
        *,
        max_workers: int = 4,
    ) -> tuple[list[CompareResult | None], dict]:
        """Compare each protected image against the target.

        Bounded-concurrency fan-out through the shared rate limiter.
        Per-item failures are recorded as None; the summary covers the
        successes and counts the failures.
        """
        results: list[CompareResult | None] = [None] * len(protected)
        errors: list[str] = []

        def work(i: int) -> None:
            try:
                results[i] = self.compare(protected[i], target)
            except ApiError as exc:
                errors.append(f"item {i}: {exc}")

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(work, range(len(protected))))
        confidences = [r.confidence for r in results if r is not None]
        summary = {
            "n_items": len(protected),
            "n_failures": len(protected) - len(confidences),
            "mean": statistics.fmean(confidences) if confidences else None,
            "median": statistics.median(confidences) if confidences else None,
            "std": statistics.pstdev(confidences) if len(confidences) > 1 else 0.0,
            "errors": sorted(errors),
        }
        return results, summary
