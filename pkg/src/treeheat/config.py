"""Run configuration files.

Grammar (UTF-8, one statement per line)::

    # comment                 (also allowed after a value)
    [section]                 section header
    key = value               value is a word or whitespace-separated numbers

Keys are unique within a section and must appear under a header. Numbers
use Python float syntax, and ``inf`` is accepted where a radius may be
unbounded.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

__all__ = ["Entry", "RunConfig", "parse_config", "load_config"]

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z_][\w-]*)\s*\]\s*$")
_KEY = re.compile(r"^[A-Za-z_][\w-]*$")


@dataclass(frozen=True)
class Entry:
    """A raw value with its 1-based source position."""

    value: str
    line: int
    column: int


@dataclass
class RunConfig:
    """Parsed configuration: ``section -> key -> Entry``.

    Attributes:
        sections: Parsed entries.
        header_lines: Line number of each section header.
        digest: Hex digest of the source text.
    """

    sections: dict[str, dict[str, Entry]] = field(default_factory=dict)
    header_lines: dict[str, int] = field(default_factory=dict)
    digest: str = ""

    def has(self, section: str, key: Optional[str] = None) -> bool:
        if section not in self.sections:
            return False
        return key is None or key in self.sections[section]

    def require(self, section: str) -> dict[str, Entry]:
        if section not in self.sections:
            raise ConfigError(f"missing section [{section}]")
        return self.sections[section]

    def entry(self, section: str, key: str) -> Entry:
        sec = self.require(section)
        if key not in sec:
            raise ConfigError(f"missing key {key!r} in [{section}]", self.header_lines[section], 1)
        return sec[key]

    def get_str(self, section: str, key: str, default: Optional[str] = None, choices=None) -> str:
        if default is not None and not self.has(section, key):
            return default
        e = self.entry(section, key)
        if choices is not None and e.value not in choices:
            raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {e.value!r}", e.line, e.column)
        return e.value

    def get_floats(self, section: str, key: str, default=None) -> list[float]:
        if default is not None and not self.has(section, key):
            return list(default)
        e = self.entry(section, key)
        out = []
        col = e.column
        for tok in re.finditer(r"\S+", e.value):
            try:
                v = float(tok.group())
            except ValueError:
                raise ConfigError(f"{key}: {tok.group()!r} is not a number", e.line, col + tok.start()) from None
            if math.isnan(v):
                raise ConfigError(f"{key}: NaN is not allowed", e.line, col + tok.start())
            out.append(v)
        if not out:
            raise ConfigError(f"{key}: expected at least one number", e.line, e.column)
        return out

    def get_float(self, section: str, key: str, default: Optional[float] = None, *, lo=None, hi=None,
                  strict_lo=False) -> float:
        if default is not None and not self.has(section, key):
            return float(default)
        e = self.entry(section, key)
        vals = self.get_floats(section, key)
        if len(vals) != 1:
            raise ConfigError(f"{key}: expected a single number", e.line, e.column)
        v = vals[0]
        if lo is not None and (v < lo or (strict_lo and v == lo)):
            op = ">" if strict_lo else ">="
            raise ConfigError(f"{key} must be {op} {lo:g}; got {v:g}", e.line, e.column)
        if hi is not None and v > hi:
            raise ConfigError(f"{key} must be <= {hi:g}; got {v:g}", e.line, e.column)
        return v

    def get_int(self, section: str, key: str, default: Optional[int] = None, *, lo=None) -> int:
        if default is not None and not self.has(section, key):
            return int(default)
        e = self.entry(section, key)
        try:
            v = int(e.value)
        except ValueError:
            raise ConfigError(f"{key}: {e.value!r} is not an integer", e.line, e.column) from None
        if lo is not None and v < lo:
            raise ConfigError(f"{key} must be >= {lo}; got {v}", e.line, e.column)
        return v

    def get_ints(self, section: str, key: str) -> list[int]:
        e = self.entry(section, key)
        vals = self.get_floats(section, key)
        if any(v != int(v) for v in vals):
            raise ConfigError(f"{key}: expected integers", e.line, e.column)
        return [int(v) for v in vals]

    def get_words(self, section: str, key: str, default=None, choices=None) -> list[str]:
        if default is not None and not self.has(section, key):
            return list(default)
        e = self.entry(section, key)
        words = e.value.split()
        if choices is not None:
            col = e.column
            for tok in re.finditer(r"\S+", e.value):
                if tok.group() not in choices:
                    raise ConfigError(f"{key}: unknown entry {tok.group()!r}", e.line, col + tok.start())
        return words


def parse_config(text: str) -> RunConfig:
    """Parse configuration text.

    Raises:
        ConfigError: With the line and column of the offending token.
    """
    cfg = RunConfig(digest=hashlib.sha256(text.encode("utf-8")).hexdigest()[:16])
    current: Optional[str] = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if current in cfg.sections:
                raise ConfigError(f"duplicate section [{current}]", n, line.index("[") + 1)
            cfg.sections[current] = {}
            cfg.header_lines[current] = n
            continue
        if line.lstrip().startswith("["):
            raise ConfigError("malformed section header", n, line.index("[") + 1)
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise ConfigError("expected 'key = value'", n, col)
        if current is None:
            raise ConfigError("key outside of any section", n, 1)
        eq = line.index("=")
        key = line[:eq].strip()
        kcol = len(line) - len(line.lstrip()) + 1
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", n, kcol)
        rest = line[eq + 1 :]
        value = rest.strip()
        vcol = eq + 2 + (len(rest) - len(rest.lstrip()))
        if not value:
            raise ConfigError(f"empty value for {key!r}", n, eq + 1)
        if key in cfg.sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", n, kcol)
        cfg.sections[current][key] = Entry(value, n, vcol)
    return cfg


def load_config(path: str) -> RunConfig:
    """Read and parse a configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    return parse_config(text)
