"""JSON serialization with fixed float formatting.

All artifacts (datasets, models, reports) are written through ``dumps`` so
that floats always carry 17 significant digits -- enough to round-trip any
IEEE-754 double exactly -- and so that identical in-memory objects always
produce byte-identical files.  The stdlib encoder delegates float
formatting to ``repr`` with no override hook, hence this small writer.
"""

from __future__ import annotations

import json
import math
from typing import Any


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float cannot be serialized: {x!r}")
    return format(float(x), ".17g")


def _encode(obj: Any, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(", ")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key)!r}")
            if i:
                out.append(", ")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(": ")
            _encode(value, out)
        out.append("}")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def dumps(obj: Any) -> str:
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def dump_file(obj: Any, path) -> None:
    text = dumps(obj)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")


def load_file(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
