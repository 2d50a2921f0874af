"""Exception hierarchy shared by every stage of the pipeline."""


class TmPromptingError(Exception):
    """Base class for all errors raised by tm_prompting."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class CorpusError(TmPromptingError):
    """Raised when a corpus file cannot be loaded or split."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SplitFormatError(CorpusError):
    """Raised when a persisted split is corrupted or from another format version."""


class RetrievalError(TmPromptingError):
    pass


class IndexFormatError(RetrievalError):
    pass


class TemplateError(TmPromptingError):
    pass


class RoutingError(TmPromptingError):
    pass


class BackendError(TmPromptingError):
    """Raised by translation backends. `status` is the upstream HTTP status, if any."""

    def __init__(self, message: str, status: int | None = None, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


class TransientBackendError(BackendError):
    """Timeouts, rate limits and 5xx responses; retried with backoff."""

    def __init__(self, message: str, status: int | None = None, retry_after: float | None = None):
        super().__init__(message, status=status, retryable=True)
        self.retry_after = retry_after


class MissingCredentialError(BackendError):
    pass


class NoDemonstrationError(BackendError):
    pass


class RetryExhaustedError(BackendError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message, status=status)
        self.attempts = attempts


class EvaluationError(TmPromptingError):
    pass


class ExperimentError(TmPromptingError):
    """Stage failure inside an experiment run, tagged with the offending sentence."""

    def __init__(self, message: str, sentence_id: int | None = None):
        if sentence_id is not None:
            message = f"sentence {sentence_id}: {message}"
        super().__init__(message)
        self.sentence_id = sentence_id
