"""Deterministic JSON writing with full-precision floats.

The stdlib encoder prints shortest round-trip representations; the file
formats here pin 17 significant digits so exports are byte-stable across
platforms and Python versions.
"""

from __future__ import annotations

import json
import math
from typing import Any


def fmt_float(x: float) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return "null"
    return format(float(x), ".17g")


def dumps(obj: Any, indent: int = 0) -> str:
    """Serialize nested dict/list/scalar structures to JSON text.

    Dict keys keep insertion order (callers build them deterministically);
    floats are printed with 17 significant digits.
    """
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{json.dumps(str(k))}: {dumps(v, indent + 2)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            return "[]"
        parts = [dumps(v, indent + 2) for v in obj]
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(parts) + "]"
        return "[\n" + ",\n".join(inner + p for p in parts) + f"\n{pad}]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, (int,)):
        return str(obj)
    return json.dumps(obj)
