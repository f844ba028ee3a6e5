"""Reader for the sectioned ``key = value`` text format used by scene and grid files.

Grammar (UTF-8, one statement per line)::

    line     := blank | comment | header | entry
    comment  := "#" anything
    header   := "[" name "]"
    entry    := key "=" value [ "#" comment ]

Sections may repeat (one ``[layer]`` per tissue layer). Keys are unique
within a section. Values are kept as stripped strings; the typed readers
below convert them and report the offending line on failure.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = ["ConfigError", "ConfigSyntaxError", "Section", "parse_sections"]

_HEADER = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(.*)$")


class ConfigError(ValueError):
    """Base class for every problem found while reading a config file."""


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


@dataclass
class Section:
    name: str
    line: int
    entries: dict = field(default_factory=dict)  # key -> (value, line)

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str, default=None):
        if key not in self.entries:
            if default is not None:
                return default
            raise ConfigSyntaxError(f"missing required field in [{self.name}]", self.line, key)
        return self.entries[key][0]

    def line_of(self, key: str) -> int:
        return self.entries[key][1] if key in self.entries else self.line

    def float(self, key: str, default: float | None = None) -> float:
        if key not in self.entries and default is not None:
            return float(default)
        value = self.raw(key)
        try:
            return float(value)
        except ValueError:
            raise ConfigSyntaxError(f"expected a number, got {value!r}", self.line_of(key), key) from None

    def int(self, key: str, default: int | None = None) -> int:
        if key not in self.entries and default is not None:
            return int(default)
        value = self.raw(key)
        try:
            return int(value)
        except ValueError:
            pass
        try:
            f = float(value)
        except ValueError:
            f = None
        if f is None or not f.is_integer():
            raise ConfigSyntaxError(f"expected an integer, got {value!r}", self.line_of(key), key)
        return int(f)

    def floats(self, key: str) -> list[float]:
        value = self.raw(key)
        try:
            return [float(p) for p in value.split(",") if p.strip()]
        except ValueError:
            raise ConfigSyntaxError(f"expected a comma-separated list of numbers, got {value!r}",
                                    self.line_of(key), key) from None

    def choice(self, key: str, options: tuple[str, ...], default: str | None = None) -> str:
        value = self.raw(key, default)
        if value not in options:
            raise ConfigSyntaxError(f"expected one of {', '.join(options)}, got {value!r}",
                                    self.line_of(key), key)
        return value

    def unknown_keys(self, allowed) -> None:
        for key, (_, line) in self.entries.items():
            if key not in allowed and not any(key.startswith(p) for p in allowed if p.endswith("_")):
                raise ConfigSyntaxError(f"unknown field in [{self.name}]", line, key)


def parse_sections(text: str) -> list[Section]:
    sections: list[Section] = []
    current: Section | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            current = Section(m.group(1), lineno)
            sections.append(current)
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigSyntaxError(f"cannot parse {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigSyntaxError("entry before any [section] header", lineno, m.group(1))
        key, value = m.group(1), m.group(2).strip()
        if key in current.entries:
            raise ConfigSyntaxError(f"duplicate field in [{current.name}]", lineno, key)
        if not value:
            raise ConfigSyntaxError("empty value", lineno, key)
        current.entries[key] = (value, lineno)
    return sections


def parse_range(section: Section, key: str) -> list[float]:
    """``start, stop, step`` with an inclusive stop."""
    parts = section.floats(key)
    if len(parts) != 3:
        raise ConfigSyntaxError("range needs exactly 'start, stop, step'", section.line_of(key), key)
    start, stop, step = parts
    if step <= 0 or stop < start:
        raise ConfigSyntaxError("range needs step > 0 and stop >= start", section.line_of(key), key)
    count = int(round((stop - start) / step)) + 1
    return [start + i * step for i in range(count)]
