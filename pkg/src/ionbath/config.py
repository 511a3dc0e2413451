"""Line-oriented key=value configuration files and run manifests.

The format is deliberately dumb: one ``key = value`` per line, ``#`` starts
a comment, keys are dotted lowercase.  A manifest is just a config file that
echoes every knob of a finished run, so feeding it back through ``--config``
reproduces the run byte for byte.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import ConfigError, DataFormatError

# keys written by the CLI into manifests that are not run parameters
META_KEYS = ("command", "version")


def parse_kv_lines(lines, source: str = "<config>") -> dict[str, str]:
    """Parse key=value lines into a dict; malformed lines raise ConfigError."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    """Load a key=value file.  Missing files raise ConfigError."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_kv_lines(p.read_text().splitlines(), source=str(p))


def apply_overrides(cfg: dict[str, str], pairs) -> dict[str, str]:
    """Merge command-line ``key=value`` override strings into cfg."""
    merged = dict(cfg)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        merged[key.strip()] = value.strip()
    return merged


def get_float(cfg: dict[str, str], key: str, default: float) -> float:
    raw = cfg.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from exc


def get_int(cfg: dict[str, str], key: str, default: int) -> int:
    raw = cfg.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from exc


def get_str(cfg: dict[str, str], key: str, default: str) -> str:
    return cfg.get(key, default)


def format_kv(cfg: dict[str, str | float | int]) -> str:
    """Serialize a mapping as sorted key=value lines (deterministic)."""
    lines = [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_manifest(path: str | Path, cfg: dict) -> None:
    Path(path).write_text(format_kv(cfg))


def strip_meta(cfg: dict[str, str]) -> dict[str, str]:
    """Drop manifest bookkeeping keys so a manifest can be replayed as config."""
    return {k: v for k, v in cfg.items() if k not in META_KEYS}


def default_output_root() -> Path:
    """Output root: $IONBATH_OUT if set, else the current directory."""
    return Path(os.environ.get("IONBATH_OUT", "."))


def read_xy_table(path: str | Path, min_cols: int = 2, max_cols: int = 3):
    """Read a whitespace- or comma-delimited numeric table.

    Returns a float array of shape (n, ncols).  Comment lines start with '#'.
    Ragged or non-numeric rows raise DataFormatError with the line number.
    """
    import numpy as np

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"data file not found: {p}")
    rows = []
    ncols = None
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise DataFormatError(f"{p}:{lineno}: non-numeric field in {raw.strip()!r}") from exc
        if ncols is None:
            ncols = len(vals)
            if not (min_cols <= ncols <= max_cols):
                raise DataFormatError(
                    f"{p}:{lineno}: expected {min_cols}..{max_cols} columns, got {ncols}"
                )
        elif len(vals) != ncols:
            raise DataFormatError(
                f"{p}:{lineno}: expected {ncols} columns, got {len(vals)}"
            )
        rows.append(vals)
    if not rows:
        raise DataFormatError(f"{p}: no data rows")
    return np.asarray(rows, dtype=float)
