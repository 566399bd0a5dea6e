"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class AdLayoutError(Exception):
    """Base class for every error raised by adlayout."""


# -- layout codec / geometry -------------------------------------------------


class LayoutError(AdLayoutError):
    """Base for layout construction and codec failures."""


class NegativeDimension(LayoutError, ValueError):
    pass


class InvalidLayout(LayoutError, ValueError):
    """Layout-level invariant broken (canvas origin, duplicate index...)."""


class DegenerateIoU(LayoutError, ZeroDivisionError):
    pass


class LayoutSyntaxError(LayoutError):
    """The text does not follow the layout HTML grammar."""


class UnknownCategory(LayoutSyntaxError):
    pass


class MalformedStyle(LayoutSyntaxError):
    pass


class MalformedDiv(LayoutSyntaxError):
    pass


class NoCanvas(LayoutSyntaxError):
    pass


class NoLayoutFound(LayoutSyntaxError):
    pass


# -- imaging -----------------------------------------------------------------


class ImageError(AdLayoutError):
    pass


class EmptyImage(ImageError, ValueError):
    pass


class UnreadableImage(ImageError):
    pass


class UnsupportedFormat(ImageError):
    pass


class EmptyRegion(ImageError, ValueError):
    pass


class GridMismatch(ImageError, ValueError):
    pass


# -- metrics / aggregation ---------------------------------------------------


class EmptyAggregate(AdLayoutError, ValueError):
    pass


# -- prompting ---------------------------------------------------------------


class PromptError(AdLayoutError):
    pass


class InvalidConstraint(PromptError, ValueError):
    pass


class ExemplarMissingPlan(PromptError):
    pass


class ExemplarInvalid(PromptError):
    pass


class PlanConstraintMismatch(PromptError):
    pass


class PlanParseError(PromptError):
    pass


class MissingDirective(PlanParseError):
    def __init__(self, missing):
        self.missing = list(missing)
        refs = ", ".join(f"{c} {i}" for c, i in self.missing)
        super().__init__(f"placement plan has no directive for: {refs}")


class UnknownElementRef(PlanParseError):
    pass


class DuplicateDirective(PlanParseError):
    pass


class EmptyAnnotationSet(PromptError, ValueError):
    pass


# -- model transport ---------------------------------------------------------


class ClientError(AdLayoutError):
    pass


class AuthMissing(ClientError):
    pass


class TransportError(ClientError):
    """Network failure that persisted through all retries."""


class RateLimited(TransportError):
    pass


class RequestRejected(ClientError):
    """Non-retryable 4xx answer from the endpoint."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"endpoint rejected request with HTTP {status}: {body[:200]}")


class MalformedResponse(ClientError):
    pass


class CassetteMiss(ClientError):
    pass


# -- pipeline ----------------------------------------------------------------


class PipelineError(AdLayoutError):
    pass


class PlanParseFailed(PipelineError):
    pass


class LayoutParseFailed(PipelineError):
    pass


class DatasetError(PipelineError):
    pass


class MissingImage(DatasetError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} annotation row(s) reference missing images: "
                         + ", ".join(map(str, self.missing[:10])))


class MalformedAnnotation(DatasetError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"{len(self.rows)} malformed annotation row(s): "
                         + "; ".join(map(str, self.rows[:10])))


class RecordMismatch(PipelineError):
    """A record file on disk does not belong to the slot it was loaded for."""


class ConfigError(AdLayoutError, ValueError):
    pass


# -- judge / report ----------------------------------------------------------


class JudgeParseFailed(AdLayoutError):
    pass


class IncompleteRun(AdLayoutError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("run directory is missing: " + ", ".join(self.missing))
