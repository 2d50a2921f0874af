"""Deterministic offline backends for exercising the pipeline without network access."""

import asyncio

from ..errors import NoDemonstrationError
from ..templates import PromptRequest
from .base import BackendKind, BaseBackend, Completion, DecodingParams


class StubBackend(BaseBackend):
    """Counts concurrent calls so tests can observe the batch concurrency cap."""

    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self.in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0

    def respond(self, request: PromptRequest) -> str:
        raise NotImplementedError

    async def __call__(self, request: PromptRequest, params: DecodingParams) -> Completion:
        self.calls += 1
        self.in_flight += 1
        self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            # always yield so concurrent callers interleave
            await asyncio.sleep(self.delay)
            text = self.respond(request)
        finally:
            self.in_flight -= 1
        return Completion(text=text, latency=self.delay, raw_finish_reason="stop")


class CopyStubBackend(StubBackend):
    """Returns the target of the demonstration adjacent to the query."""

    kind = BackendKind.COPY

    def respond(self, request: PromptRequest) -> str:
        if not request.demos:
            raise NoDemonstrationError(
                f"copy-stub needs a demonstration (query {request.query_id}, template #{request.template_id})"
            )
        return request.demos[-1].target


class EchoStubBackend(StubBackend):
    kind = BackendKind.ECHO

    def respond(self, request: PromptRequest) -> str:
        return request.query
