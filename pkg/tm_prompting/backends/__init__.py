from .base import (
    BackendConfig,
    BackendKind,
    BaseBackend,
    Completion,
    CompletionFailure,
    DecodingParams,
    RetryConfig,
)
from .batch import create_backend, translate, translate_batch
from .remote import RemoteCompletionBackend
from .stub import CopyStubBackend, EchoStubBackend, StubBackend

__all__ = [
    "BackendConfig",
    "BackendKind",
    "BaseBackend",
    "Completion",
    "CompletionFailure",
    "CopyStubBackend",
    "DecodingParams",
    "EchoStubBackend",
    "RemoteCompletionBackend",
    "RetryConfig",
    "StubBackend",
    "create_backend",
    "translate",
    "translate_batch",
]
