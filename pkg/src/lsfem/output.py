"""Metadata headers shared by all file writers."""

import json

from . import __version__


def header_lines(config=None):
    """Comment-free header lines echoing the run configuration and version.

    Writers prefix each line with their own comment marker.
    """
    lines = [f"lsfem {__version__}"]
    if config:
        lines.append("config: " + json.dumps(config, sort_keys=True, default=str))
    return lines


def metadata(config=None):
    return {"version": __version__, "config": dict(config or {})}


def comment_block(config=None, marker="#"):
    return "".join(f"{marker} {line}\n" for line in header_lines(config))


def fmt(x) -> str:
    """Shortest round-trip text of a real number (plain float repr)."""
    return repr(float(x))
