"""Exception hierarchy shared across the toolkit."""


class RareGerError(Exception):
    """Base class for all toolkit errors."""


# -- input / domain ---------------------------------------------------------

class EmptyList(RareGerError):
    pass


class DecodeError(RareGerError):
    pass


class ParseError(RareGerError):
    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class CoverageInfeasible(RareGerError):
    pass


class TemplateError(RareGerError):
    pass


class ShortGeneration(RareGerError):
    def __init__(self, found, items=()):
        super().__init__(f"only {found} usable transcript(s) in generation")
        self.found = found
        self.items = list(items)


class EmptyCorrection(RareGerError):
    pass


class EmptyConversion(RareGerError):
    pass


class ExportError(RareGerError):
    pass


class MissingHypotheses(RareGerError):
    def __init__(self, utterance_id):
        super().__init__(f"no hypotheses for utterance {utterance_id!r}")
        self.utterance_id = utterance_id


class AlignmentError(RareGerError):
    """Output ids do not line up with the evaluation set."""

    def __init__(self, missing=(), extra=()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if self.missing:
            parts.append("missing ids: " + ", ".join(self.missing))
        if self.extra:
            parts.append("unexpected ids: " + ", ".join(self.extra))
        super().__init__("; ".join(parts) or "id mismatch")


# -- services ---------------------------------------------------------------

class ServiceError(RareGerError):
    pass


class TransientServiceError(ServiceError):
    """Retryable failure (5xx, 429, timeouts, connection resets)."""


class ServiceUnavailable(ServiceError):
    pass


class ClientError(ServiceError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CacheCorruptionError(RareGerError):
    pass


class BuildAborted(ServiceError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class GerServiceError(ServiceError):
    def __init__(self, utterance_id, cause):
        super().__init__(f"service failure while correcting {utterance_id!r}: {cause}")
        self.utterance_id = utterance_id
