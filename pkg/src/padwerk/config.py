"""Flat key-value experiment configs and run manifests."""

from __future__ import annotations

import os

from . import __version__


class UsageError(Exception):
    """Bad flags or config knobs; maps to exit code 1."""


def parse_config(text):
    """Parse `key = value` lines; # starts a comment, blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def write_manifest(out_dir, command, cfg):
    """Echo the effective config so a run can be reproduced byte-for-byte."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"command = {command}", f"padwerk_version = {__version__}"]
    for key in sorted(cfg):
        lines.append(f"{key} = {cfg[key]}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def get_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {cfg[key]!r}") from None


def get_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be a number, got {cfg[key]!r}") from None


def get_int_list(cfg, key):
    try:
        return [int(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{key} must be a comma-separated integer list") from None
