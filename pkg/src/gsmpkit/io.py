"""Serialization helpers with a fixed 17-significant-digit number format."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

__all__ = ["fmt", "dumps", "write_json", "write_text", "read_json"]


def fmt(x: float) -> str:
    """Decimal text with 17 significant digits (``nan``/``inf`` spelled out, no negative zero)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    # x + 0.0 turns -0.0 into 0.0
    return format(x + 0.0, ".17g")


def _encode(obj: Any, indent: int | None, level: int) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no NaN/inf; they are written as strings
        return fmt(x) if math.isfinite(x) else json.dumps(fmt(x))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return _wrap("{", "}", items, indent, level)
    if isinstance(obj, (list, tuple)):
        return _wrap("[", "]", [_encode(v, indent, level + 1) for v in obj], indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _wrap(open_: str, close: str, items: list[str], indent: int | None, level: int) -> str:
    if not items:
        return open_ + close
    if indent is None or all(not (i.startswith("{") or i.startswith("[")) for i in items) and open_ == "[":
        return open_ + ", ".join(items) + close
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    return open_ + "\n" + ",\n".join(pad + i for i in items) + "\n" + end + close


def dumps(obj: Any, indent: int | None = None) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj, indent, 0)


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(dumps(obj, indent=2) + "\n")
    return path


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.write_text(text)
    return path


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text())
