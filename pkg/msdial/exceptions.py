"""Exceptions."""
from __future__ import annotations
from typing import Any as _Any

from pydantic import ValidationError

__all__ = (
    "MsDialError",
    "ShapeError",
    "DomainError",
    "GraphError",
    "SegmentError",
    "DataFormatError",
    "ConfigError",
    "TrainingDivergedError",
    "OutputError",
    "ValidationError",
)


class MsDialError(Exception):
    """Base error, with a public message and optional diagnostic details."""

    __slots__ = ["_detail", "_error_detail"]

    def __init__(
        self, detail: _Any = None, *, error_detail: _Any | None = None
    ) -> None:
        self._detail = detail
        self._error_detail = error_detail
        Exception.__init__(self, detail)

    @property
    def detail(self) -> _Any:
        """Error detail.

        Returns:
            Error detail.
        """
        return self._detail

    @property
    def error_detail(self) -> str | None:
        """Internal error details.

        Shown in logs in addition to the detail.

        Returns:
            Message.
        """
        if self._error_detail:
            return str(self._error_detail)
        elif self._detail:
            return str(self._detail)
        return None


class ShapeError(MsDialError, ValueError):
    """Operands have incompatible shapes."""

    __slots__ = ["shapes"]

    def __init__(self, detail: str, *shapes: tuple[int, ...]) -> None:
        self.shapes = shapes
        if shapes:
            detail = f"{detail} (shapes: {', '.join(str(s) for s in shapes)})"
        MsDialError.__init__(self, detail)


class DomainError(MsDialError, ValueError):
    """Value outside the mathematical domain of an operation."""


class GraphError(MsDialError):
    """Invalid model graph or graph rewrite."""


class SegmentError(MsDialError, ValueError):
    """Invalid domain segmentation of a batch."""


class DataFormatError(MsDialError):
    """Malformed dataset file or dataset content."""

    __slots__ = ["path", "offset", "line"]

    def __init__(
        self,
        detail: str,
        path: str | None = None,
        *,
        offset: int | None = None,
        line: int | None = None,
    ) -> None:
        self.path = path
        self.offset = offset
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            detail = f"{detail} ({', '.join(where)})"
        MsDialError.__init__(self, detail)


class ConfigError(MsDialError, ValueError):
    """Invalid experiment configuration."""


class TrainingDivergedError(MsDialError):
    """Non-finite loss during training."""

    __slots__ = ["epoch", "step"]

    def __init__(self, detail: str, *, epoch: int, step: int) -> None:
        self.epoch = epoch
        self.step = step
        MsDialError.__init__(
            self, detail, error_detail=f"{detail} (epoch {epoch}, step {step})"
        )


class OutputError(MsDialError):
    """Output file can not be written."""
