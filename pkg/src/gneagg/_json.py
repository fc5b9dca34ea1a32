"""JSON encoding with orjson when available and the standard library otherwise."""

from __future__ import annotations

try:
    import orjson  # type: ignore

    JSONDecodeError = orjson.JSONDecodeError
    _HAS_ORJSON = True
except ImportError:
    import json as orjson
    from json.decoder import JSONDecodeError

    _HAS_ORJSON = False

import hashlib
from pathlib import Path
from typing import Any

__all__ = ["JSONDecodeError", "canonical_hash", "dumps", "loads", "read_json", "write_json"]


def dumps(document: Any, *, pretty: bool = False) -> bytes:
    """Serializes a document with sorted keys.

    Args:
        document: A JSON-compatible object.
        pretty: Indent the output for files meant to be read by people.

    Returns:
        UTF-8 encoded JSON.
    """
    if _HAS_ORJSON:
        option = orjson.OPT_SORT_KEYS
        if pretty:
            option |= orjson.OPT_INDENT_2
        return orjson.dumps(document, option=option)
    text = orjson.dumps(
        document,
        sort_keys=True,
        indent=2 if pretty else None,
        separators=None if pretty else (",", ":"),
    )
    return text.encode("utf-8")


def loads(data: bytes | str) -> Any:
    """Parses JSON bytes or text."""
    return orjson.loads(data)


def canonical_hash(document: Any) -> str:
    """SHA-256 hex digest of the compact, key-sorted encoding of ``document``."""
    return hashlib.sha256(dumps(document)).hexdigest()


def read_json(path: str | Path) -> Any:
    """Reads a JSON file."""
    return loads(Path(path).read_bytes())


def write_json(path: str | Path, document: Any) -> Path:
    """Writes ``document`` as indented JSON and returns the path."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(dumps(document, pretty=True) + b"\n")
    return target
