import asyncio
import logging
from collections.abc import Callable, Sequence

import httpx

from ..errors import BackendError
from ..templates import PromptRequest
from .base import BackendConfig, BackendKind, BaseBackend, Completion, CompletionFailure, DecodingParams
from .remote import RemoteCompletionBackend
from .stub import CopyStubBackend, EchoStubBackend

logger = logging.getLogger(__name__)


def create_backend(config: BackendConfig, transport: httpx.AsyncBaseTransport | None = None) -> BaseBackend:
    if config.kind == BackendKind.REMOTE:
        return RemoteCompletionBackend(config, transport=transport)
    if config.kind == BackendKind.COPY:
        return CopyStubBackend()
    return EchoStubBackend()


async def translate(
    request: PromptRequest,
    params: DecodingParams,
    config: BackendConfig,
    backend: BaseBackend | None = None,
) -> Completion:
    owned = backend is None
    backend = backend or create_backend(config)
    try:
        return await backend(request, params)
    finally:
        if owned:
            await backend.aclose()


async def translate_batch(
    requests: Sequence[PromptRequest],
    params: DecodingParams,
    config: BackendConfig,
    *,
    backend: BaseBackend | None = None,
    fail_fast: bool = False,
    on_complete: Callable[[int, Completion], None] | None = None,
) -> list[Completion]:
    """
    Translate `requests` with at most `config.max_in_flight` outstanding.

    Results are in input order. A request that fails is recorded as a
    CompletionFailure in its slot unless `fail_fast` is set, in which case the
    first failure cancels the rest and is raised. `on_complete(i, completion)`
    fires as each slot is filled.
    """
    owned = backend is None
    backend = backend or create_backend(config)
    semaphore = asyncio.Semaphore(config.max_in_flight)
    results: list[Completion | None] = [None] * len(requests)

    async def _one(i: int, request: PromptRequest) -> None:
        async with semaphore:
            try:
                completion = await backend(request, params)
            except BackendError as exc:
                if fail_fast:
                    raise
                logger.warning("Request %d (query %s) failed: %s", i, request.query_id, exc.message)
                completion = CompletionFailure(
                    text="",
                    attempt_count=max(1, getattr(exc, "attempts", 1)),
                    error=exc.message,
                )
        results[i] = completion
        if on_complete is not None:
            on_complete(i, completion)

    try:
        async with asyncio.TaskGroup() as tg:
            for i, request in enumerate(requests):
                tg.create_task(_one(i, request))
    except BaseExceptionGroup as group:
        raise group.exceptions[0] from None
    finally:
        if owned:
            await backend.aclose()
    return results
