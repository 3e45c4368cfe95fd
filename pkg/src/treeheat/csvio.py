"""Deterministic CSV output."""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence

from . import __version__

__all__ = ["format_value", "render_csv", "write_csv"]


def format_value(v) -> str:
    """Floats with 17 significant digits; everything else via ``str``."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float) or hasattr(v, "dtype"):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".17g")
    return str(v)


def render_csv(header: Sequence[str], rows: Iterable[Sequence], digest: str,
               comments: Sequence[str] = ()) -> str:
    """CSV text with a ``#`` header block, comma separators and LF line endings."""
    buf = io.StringIO()
    buf.write(f"# treeheat {__version__}\n")
    buf.write(f"# config {digest}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence], digest: str,
              comments: Sequence[str] = ()) -> str:
    """Write :func:`render_csv` output to ``path`` and return the text."""
    text = render_csv(header, rows, digest, comments)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text
