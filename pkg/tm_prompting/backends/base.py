from abc import ABCMeta, abstractmethod
from dataclasses import dataclass, field, fields, replace
from enum import StrEnum

from ..errors import BackendError
from ..templates import PromptRequest

DEFAULT_WIRE_FIELDS: dict[str, str] = {
    "model": "model",
    "prompt": "prompt",
    "temperature": "temperature",
    "max_tokens": "max_tokens",
    "stop": "stop",
}


class BackendKind(StrEnum):
    REMOTE = "remote-completion"
    COPY = "copy-stub"
    ECHO = "echo-stub"


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_output_tokens: int | None = None
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise BackendError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_output_tokens is not None and self.max_output_tokens < 1:
            raise BackendError(f"max_output_tokens must be >= 1, got {self.max_output_tokens}")

    def max_tokens_for(self, query: str) -> int:
        """Explicit bound, else 4 tokens per query token plus 16."""
        if self.max_output_tokens is not None:
            return self.max_output_tokens
        return 4 * len(query.split()) + 16

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "stop_sequences": list(self.stop_sequences),
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> "DecodingParams":
        data = dict(data or {})
        data["stop_sequences"] = tuple(data.get("stop_sequences", ()))
        return cls(**data)


@dataclass(frozen=True)
class RetryConfig:
    max_attempts: int = 5
    base_backoff: float = 1.0
    max_backoff: float = 30.0
    jitter: bool = True

    def __post_init__(self):
        if self.max_attempts < 1:
            raise BackendError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.base_backoff < 0 or self.max_backoff < 0:
            raise BackendError("backoff durations must be non-negative")


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.COPY
    endpoint: str | None = None
    model_id: str | None = None
    credential_env_var: str | None = None
    retry: RetryConfig = field(default_factory=RetryConfig)
    max_in_flight: int = 4
    request_timeout: float = 60.0
    wire_fields: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_WIRE_FIELDS))
    transcript_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind == BackendKind.REMOTE:
            missing = [
                name for name in ("endpoint", "model_id", "credential_env_var")
                if not getattr(self, name)
            ]
            if missing:
                raise BackendError(f"remote-completion backend requires {', '.join(missing)}")
        if self.max_in_flight < 1:
            raise BackendError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.request_timeout <= 0:
            raise BackendError(f"request_timeout must be positive, got {self.request_timeout}")
        unknown = set(self.wire_fields) - set(DEFAULT_WIRE_FIELDS)
        if unknown:
            raise BackendError(f"unknown wire fields {sorted(unknown)}")

    def wire_name(self, logical: str) -> str:
        return self.wire_fields.get(logical, DEFAULT_WIRE_FIELDS[logical])

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["kind"] = str(self.kind)
        data["retry"] = {f.name: getattr(self.retry, f.name) for f in fields(self.retry)}
        data["wire_fields"] = dict(sorted(self.wire_fields.items()))
        return data

    @classmethod
    def from_dict(cls, data: dict | None) -> "BackendConfig":
        data = dict(data or {})
        data["retry"] = RetryConfig(**data.get("retry", {}))
        data["wire_fields"] = {**DEFAULT_WIRE_FIELDS, **data.get("wire_fields", {})}
        return cls(**data)


@dataclass(kw_only=True, frozen=True)
class Completion:
    """The raw output of one translation request. Post-processing happens elsewhere."""

    text: str
    latency: float = 0.0
    attempt_count: int = 1
    raw_finish_reason: str = ""
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def replace(self, **kwargs):
        """Returns a new Completion with the given fields replaced."""
        return replace(self, **kwargs)


class CompletionFailure(Completion):
    """A Completion that represents a request recorded as failed inside a batch."""


class BaseBackend(metaclass=ABCMeta):
    """Abstract base class for translation backends."""

    kind: BackendKind

    @abstractmethod
    async def __call__(self, request: PromptRequest, params: DecodingParams) -> Completion:
        """Translates one request."""
        ...

    async def aclose(self) -> None:
        """Releases any network resources."""
