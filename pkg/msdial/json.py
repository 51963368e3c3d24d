"""JSON utilities, with NumPy values support."""
from __future__ import annotations
from typing import Any as _Any

import numpy as _np


def default(value: _Any) -> _Any:
    """Convert NumPy arrays and scalars to Python values.

    Args:
        value: Value the JSON encoder does not support.

    Returns:
        JSON serializable value.
    """
    if isinstance(value, _np.ndarray):
        return value.tolist()
    if isinstance(value, _np.generic):
        return value.item()
    raise TypeError(f"Type is not JSON serializable: {type(value).__name__}")


try:
    from orjson import dumps as _orjson_dumps, loads, OPT_SERIALIZE_NUMPY

    def dumps(value: _Any, **_: _Any) -> str:
        """Serialize to str JSON.

        Args:
            value: Input value.

        Returns:
            JSON string.
        """
        return _orjson_dumps(
            value, default=default, option=OPT_SERIALIZE_NUMPY
        ).decode()

except ImportError:
    from json import dumps as _json_dumps, loads  # type: ignore

    def dumps(value: _Any, **_: _Any) -> str:
        """Serialize to str JSON.

        Args:
            value: Input value.

        Returns:
            JSON string.
        """
        return _json_dumps(value, default=default)


__all__ = ("default", "dumps", "loads")
