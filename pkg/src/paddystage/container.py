"""Versioned text container for trained models.

Layout::

    PADDYSTAGE-CONTAINER 1
    [header] sha256=<hex>
    {"kind": "network", "format_version": 1, "sections": [...]}
    [layer.0] sha256=<hex>
    {...}

Each section body is one JSON line. Floats are written with ``repr`` so every
parameter round-trips bit for bit, and each body carries its own SHA-256 so a
damaged file is reported by section name.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = "PADDYSTAGE-CONTAINER"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    def __init__(self, section, message):
        self.section = section
        super().__init__(f"model container section '{section}': {message}")


def encode_array(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot store non-finite parameters")
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def decode_array(obj, section="?"):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(section, f"bad array encoding ({exc})") from None


def _body(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _digest(body):
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def dumps(kind, sections):
    """Serialize ``sections`` (list of ``(name, payload)``) under a header."""
    names = [name for name, _ in sections]
    if "header" in names or len(set(names)) != len(names):
        raise ValueError("section names must be unique and not 'header'")
    header = {"kind": kind, "format_version": FORMAT_VERSION, "sections": names}
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    for name, payload in [("header", header)] + list(sections):
        body = _body(payload)
        lines += [f"[{name}] sha256={_digest(body)}", body]
    return "\n".join(lines) + "\n"


def loads(text, expected_kind=None):
    """Parse a container; returns ``(kind, {name: payload})`` in file order."""
    lines = text.split("\n")
    if not lines or lines[0] != f"{MAGIC} {FORMAT_VERSION}":
        raise ContainerError("magic", f"expected '{MAGIC} {FORMAT_VERSION}' on the first line")
    sections = {}
    i = 1
    while i < len(lines) and lines[i]:
        marker = lines[i]
        if not (marker.startswith("[") and "] sha256=" in marker):
            raise ContainerError(f"line {i + 1}", "malformed section marker")
        name, digest = marker[1:].split("] sha256=", 1)
        if i + 1 >= len(lines):
            raise ContainerError(name, "missing body")
        body = lines[i + 1]
        if _digest(body) != digest:
            raise ContainerError(name, "checksum mismatch (file corrupted)")
        try:
            sections[name] = json.loads(body)
        except json.JSONDecodeError as exc:
            raise ContainerError(name, f"invalid JSON ({exc})") from None
        i += 2
    header = sections.pop("header", None)
    if header is None:
        raise ContainerError("header", "missing")
    if header.get("format_version") != FORMAT_VERSION:
        raise ContainerError("header", f"unsupported format version {header.get('format_version')}")
    if list(sections) != header.get("sections"):
        missing = [s for s in header.get("sections", []) if s not in sections]
        raise ContainerError(missing[0] if missing else "header", "section list does not match header")
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ContainerError("header", f"expected a '{expected_kind}' model, found '{kind}'")
    return kind, sections


def write(path, kind, sections):
    path = Path(path)
    path.write_text(dumps(kind, sections), encoding="utf-8")
    return path


def read(path, expected_kind=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ContainerError("magic", "not a UTF-8 text container") from None
    return loads(text, expected_kind)
