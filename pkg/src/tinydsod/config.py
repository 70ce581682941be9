"""Architecture config files.

An INI-like grammar with four sections::

    [backbone]
    growth = "32-48-64-80"    # G/g0-g1-g2-g3
    repeats = "4-6-6-6"
    block = "ddb-b"           # or "ddb-a", which also needs `expand`
    transitions = "128-128-256-64"

    [dfpn]
    enabled = true
    channels = 128

    [head]
    categories = 21
    conf_thresh = 0.01
    nms_iou = 0.45
    topk = 200

    [input]
    height = 300
    width = 300
    means = "104,117,123"     # B,G,R

Every key is optional; an empty file yields the default model. Unknown
sections or keys, duplicates and out-of-range values raise
:class:`ConfigSyntaxError` carrying the offending line and field.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .backbone import BackboneConfig
from .dfpn import PyramidConfig
from .errors import ConfigError, ConfigSyntaxError
from .head import HeadConfig


@dataclass(frozen=True)
class InputConfig:
    height: int = 300
    width: int = 300
    means: tuple[float, float, float] = (104.0, 117.0, 123.0)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"height: input size must be >= 1, got {self.height}x{self.width}")
        if len(self.means) != 3:
            raise ConfigError(f"means: expected 3 values, got {len(self.means)}")


@dataclass(frozen=True)
class ArchConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dfpn: PyramidConfig = field(default_factory=PyramidConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    input: InputConfig = field(default_factory=InputConfig)

    @property
    def input_hw(self) -> tuple[int, int]:
        return (self.input.height, self.input.width)


def _series(sep):
    def parse(text):
        parts = text.split(sep)
        if not all(p.strip() for p in parts):
            raise ValueError(f"malformed {sep!r}-separated series")
        return tuple(int(p) for p in parts)

    return parse


def _means(text):
    vals = tuple(float(p) for p in text.split(","))
    if len(vals) != 3:
        raise ValueError("expected three comma-separated means")
    return vals


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _block(text):
    if text not in ("ddb-a", "ddb-b"):
        raise ValueError('expected "ddb-a" or "ddb-b"')
    return text


# section -> key -> (parser, dataclass field)
_SCHEMA = {
    "backbone": {
        "growth": (_series("-"), "growth"),
        "repeats": (_series("-"), "repeats"),
        "block": (_block, "block"),
        "expand": (int, "expand"),
        "transitions": (_series("-"), "transitions"),
    },
    "dfpn": {
        "enabled": (_bool, "enabled"),
        "channels": (int, "channels"),
    },
    "head": {
        "categories": (int, "categories"),
        "conf_thresh": (float, "conf_thresh"),
        "nms_iou": (float, "nms_iou"),
        "topk": (int, "topk"),
    },
    "input": {
        "height": (int, "height"),
        "width": (int, "width"),
        "means": (_means, "means"),
    },
}

_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
_KEY_RE = re.compile(r"^([A-Za-z_][\w]*)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"':
            quoted = not quoted
        elif ch in "#;" and not quoted:
            return line[:i]
    return line


def _unquote(raw: str, lineno: int, key: str) -> str:
    raw = raw.strip()
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"') or '"' in raw[1:-1]:
            raise ConfigSyntaxError("unterminated or malformed string", lineno, key)
        return raw[1:-1].strip()
    if not raw:
        raise ConfigSyntaxError("missing value", lineno, key)
    return raw


def parse_config(text: str) -> ArchConfig:
    values: dict[str, dict[str, tuple[object, int]]] = {s: {} for s in _SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1)
            if section not in _SCHEMA:
                raise ConfigSyntaxError(f"unknown section [{section}]", lineno)
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ConfigSyntaxError(f"cannot parse {raw.strip()!r}", lineno)
        key = m.group(1)
        if section is None:
            raise ConfigSyntaxError("key outside of any section", lineno, key)
        if key not in _SCHEMA[section]:
            raise ConfigSyntaxError(f"unknown key in [{section}]", lineno, key)
        if key in values[section]:
            raise ConfigSyntaxError("duplicate key", lineno, key)
        parser, _ = _SCHEMA[section][key]
        text_value = _unquote(m.group(2), lineno, key)
        try:
            values[section][key] = (parser(text_value), lineno)
        except ValueError as exc:
            raise ConfigSyntaxError(f"invalid value {text_value!r}: {exc}", lineno, key) from None

    defaults = ArchConfig()
    parts = {}
    for section, entries in values.items():
        base = getattr(defaults, section)
        kwargs = {_SCHEMA[section][k][1]: v for k, (v, _) in entries.items()}
        try:
            parts[section] = replace(base, **kwargs)
        except ConfigError as exc:
            lineno, fname = _blame(str(exc), entries)
            raise ConfigSyntaxError(str(exc), lineno, fname) from None
    return ArchConfig(**parts)


def _blame(message: str, entries):
    """Line and field a validation message refers to (messages start with ``field:``)."""
    key = message.split(":", 1)[0].strip()
    if key in entries:
        return entries[key][1], key
    # e.g. ddb-a without `expand`: the field is absent, blame the section's first key
    first_line = min(line for _, line in entries.values())
    return first_line, key if key.isidentifier() else None


def _fmt_float(v: float) -> str:
    return repr(float(v))


def print_config(cfg: ArchConfig) -> str:
    b, d, h, i = cfg.backbone, cfg.dfpn, cfg.head, cfg.input
    lines = [
        "[backbone]",
        f'growth = "{"-".join(map(str, b.growth))}"',
        f'repeats = "{"-".join(map(str, b.repeats))}"',
        f'block = "{b.block}"',
    ]
    if b.expand is not None:
        lines.append(f"expand = {b.expand}")
    lines += [
        f'transitions = "{"-".join(map(str, b.transitions))}"',
        "",
        "[dfpn]",
        f"enabled = {'true' if d.enabled else 'false'}",
        f"channels = {d.channels}",
        "",
        "[head]",
        f"categories = {h.categories}",
        f"conf_thresh = {_fmt_float(h.conf_thresh)}",
        f"nms_iou = {_fmt_float(h.nms_iou)}",
        f"topk = {h.topk}",
        "",
        "[input]",
        f"height = {i.height}",
        f"width = {i.width}",
        f'means = "{",".join(_fmt_float(m) for m in i.means)}"',
    ]
    return "\n".join(lines) + "\n"


def load_config(path) -> ArchConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
