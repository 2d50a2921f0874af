"""
Remote text-completion client.

Sends the rendered prompt as {model, prompt, temperature, max_tokens, stop}
and takes `choices[0].text` verbatim. Timeouts, 429 and 5xx responses are
retried with exponential backoff (or the server's Retry-After); any other
4xx is surfaced immediately.
"""

import json
import logging
import os
import time
from pathlib import Path

import httpx
from tenacity import (
    AsyncRetrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
    wait_random_exponential,
)
from tenacity.wait import wait_base

from ..errors import BackendError, MissingCredentialError, RetryExhaustedError, TransientBackendError
from ..templates import PromptRequest
from .base import BackendConfig, BackendKind, BaseBackend, Completion, DecodingParams

logger = logging.getLogger(__name__)


class wait_retry_after(wait_base):
    """Waits for the server's Retry-After when it sent one, else defers to `fallback`."""

    def __init__(self, fallback: wait_base, max_wait: float):
        self.fallback = fallback
        self.max_wait = max_wait

    def __call__(self, retry_state) -> float:
        exc = retry_state.outcome.exception()
        if isinstance(exc, TransientBackendError) and exc.retry_after is not None:
            return min(exc.retry_after, self.max_wait)
        return self.fallback(retry_state)


def _parse_retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        # HTTP-date form is not worth supporting here
        return None


class RemoteCompletionBackend(BaseBackend):
    kind = BackendKind.REMOTE

    def __init__(self, config: BackendConfig, transport: httpx.AsyncBaseTransport | None = None):
        if config.kind != BackendKind.REMOTE:
            raise BackendError(f"RemoteCompletionBackend cannot serve kind {config.kind}")
        api_key = os.getenv(config.credential_env_var)
        if not api_key:
            raise MissingCredentialError(f"environment variable {config.credential_env_var} is not set")
        self.config = config
        self._client = httpx.AsyncClient(
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=httpx.Timeout(config.request_timeout),
            transport=transport,
        )

    def _payload(self, request: PromptRequest, params: DecodingParams) -> dict:
        payload = {
            self.config.wire_name("model"): self.config.model_id,
            self.config.wire_name("prompt"): request.rendered,
            self.config.wire_name("temperature"): params.temperature,
            self.config.wire_name("max_tokens"): params.max_tokens_for(request.query),
        }
        if params.stop_sequences:
            payload[self.config.wire_name("stop")] = list(params.stop_sequences)
        return payload

    def _retrying(self) -> AsyncRetrying:
        retry = self.config.retry
        if retry.jitter:
            fallback = wait_random_exponential(multiplier=retry.base_backoff, max=retry.max_backoff)
        else:
            fallback = wait_exponential(multiplier=retry.base_backoff, max=retry.max_backoff)
        return AsyncRetrying(
            retry=retry_if_exception_type(TransientBackendError),
            stop=stop_after_attempt(retry.max_attempts),
            wait=wait_retry_after(fallback, retry.max_backoff),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )

    def _log_transcript(self, payload: dict, status: int | None, body: str) -> None:
        if not self.config.transcript_path:
            return
        record = {"request": payload, "status": status, "response": body}
        path = Path(self.config.transcript_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    async def _post_once(self, payload: dict) -> tuple[str, str]:
        try:
            response = await self._client.post(self.config.endpoint, json=payload)
        except httpx.TimeoutException as exc:
            self._log_transcript(payload, None, f"timeout: {exc}")
            raise TransientBackendError(f"request timed out after {self.config.request_timeout}s") from exc
        except httpx.TransportError as exc:
            self._log_transcript(payload, None, f"transport error: {exc}")
            raise TransientBackendError(f"transport error: {exc}") from exc

        body = response.text
        self._log_transcript(payload, response.status_code, body)
        status = response.status_code
        if status == 429 or status >= 500:
            raise TransientBackendError(
                f"HTTP {status}: {body[:200]}",
                status=status,
                retry_after=_parse_retry_after(response.headers.get("retry-after")),
            )
        if status >= 400:
            raise BackendError(f"HTTP {status}: {body[:500]}", status=status)

        try:
            choice = response.json()["choices"][0]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {body[:200]}", status=status) from exc
        # null completions are recorded as empty text
        return choice.get("text") or "", choice.get("finish_reason") or ""

    async def __call__(self, request: PromptRequest, params: DecodingParams) -> Completion:
        payload = self._payload(request, params)
        started = time.perf_counter()
        attempts = 0
        try:
            async for attempt in self._retrying():
                with attempt:
                    attempts = attempt.retry_state.attempt_number
                    text, finish_reason = await self._post_once(payload)
        except TransientBackendError as exc:
            raise RetryExhaustedError(
                f"gave up after {attempts} attempts: {exc.message}", status=exc.status, attempts=attempts
            ) from exc
        return Completion(
            text=text,
            latency=time.perf_counter() - started,
            attempt_count=attempts,
            raw_finish_reason=finish_reason,
        )

    async def aclose(self) -> None:
        await self._client.aclose()
