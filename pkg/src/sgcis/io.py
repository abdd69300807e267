"""CSV/JSON emission with round-trip-exact floats."""
from __future__ import annotations

import csv
import json
import math
import sys
from contextlib import contextmanager
from fractions import Fraction


def fmt_float(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(value), ".17g")


def fmt_twice_m(twice_m: int) -> str:
    return str(Fraction(int(twice_m), 2))


def parse_twice_m(text: str) -> int:
    twice = Fraction(str(text)) * 2
    if twice.denominator != 1:
        raise ValueError(f"{text!r} is not a multiple of 1/2")
    return int(twice)


@contextmanager
def open_output(path: str):
    if path in ("-", ""):
        yield sys.stdout
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        yield fh


def write_csv(path: str, header: list[str], rows) -> None:
    with open_output(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalars
        return _jsonable(obj.item())
    return obj


def dump_json(path: str, payload: dict) -> None:
    with open_output(path) as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
