"""Float formatting and JSON/CSV writers shared by the CLI and readers."""

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

MISSING_TOKENS = {"", "nan", "NaN", "NAN"}


def fmt_float(x):
    """Format a float with 17 significant digits; NaN becomes an empty field."""
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


def parse_float(text):
    """Parse a CSV value; missing tokens map to NaN. Raises ValueError otherwise."""
    text = text.strip()
    if text in MISSING_TOKENS:
        return math.nan
    value = float(text)
    if math.isinf(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _json_encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(float(obj)):
            return "null"
        return format(float(obj), ".17g")
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _json_encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_encode(str(k), indent, level + 1)}: {_json_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _json_encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent=2):
    """Deterministic JSON with floats at 17 significant digits and NaN as null."""
    return _json_encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_table_csv(path, frame):
    """Write a pandas DataFrame with pinned float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(frame.columns))
        for row in frame.itertuples(index=False):
            writer.writerow([_cell(v) for v in row])


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
