"""Flat key-value configuration files.

One setting per line: a dotted key, whitespace, then the value
(`train.epochs 200`). `#` starts a comment; blank lines are ignored.
Every key mirrors a command-line flag, and explicit flags win over file
values, so a config file is just a reusable bundle of defaults.
"""

from .errors import DataError


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if not value:
            raise DataError(f"config line {line_no}: {key!r} has no value")
        if key in out:
            raise DataError(f"config line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
