"""Number formatting and small serialization helpers shared by the exporters."""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

SIG_DIGITS = 12


def format_number(x) -> str:
    """Fixed-point decimal with 12 significant digits; integers and bools pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, Fraction):
        x = float(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "0"
    return np.format_float_positional(x, precision=SIG_DIGITS, unique=False, fractional=False, trim="-")


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and Fractions into JSON-friendly values.

    Floats are rounded to 12 significant digits so that emitted JSON is stable.
    """
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return {"num": obj.numerator, "den": obj.denominator}
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return format_number(x)
        return float(format_number(x))
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows: Iterable[Mapping], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_number(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return buf.getvalue()
