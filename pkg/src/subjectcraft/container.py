"""Single-file artifact container: one line of canonical UTF-8 JSON metadata,
a newline, then raw little-endian float32 arrays concatenated in the order the
header declares.

The header always carries ``format`` (which kind of artifact), ``format_version``
and ``payload_bytes`` (exact byte length of everything after the newline), so
truncation is detectable without parsing the payload. JSON is serialized with
sorted keys and no whitespace, making saves canonical: identical contents give
byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ContainerFormatError

FORMAT_CHECKPOINT = "subjectcraft/checkpoint"
FORMAT_ADAPTERS = "subjectcraft/adapters"
FORMAT_VERSION = 1

_MAX_HEADER_BYTES = 64 * 1024 * 1024


def write_container(path, header: dict, arrays: list[np.ndarray]) -> None:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    header = dict(header)
    header["payload_bytes"] = len(payload)
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(line)
        fh.write(b"\n")
        fh.write(payload)


def _parse_header(line: bytes, path) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"{path}: corrupt container header ({exc})") from None
    if not isinstance(header, dict):
        raise ContainerFormatError(f"{path}: corrupt container header (not a JSON object)")
    for key in ("format", "format_version", "payload_bytes"):
        if key not in header:
            raise ContainerFormatError(f"{path}: corrupt container header (missing {key!r})")
    return header


def read_header(path) -> dict:
    """Parse and validate the header without loading the payload."""
    with open(path, "rb") as fh:
        line = fh.readline(_MAX_HEADER_BYTES)
        if not line.endswith(b"\n"):
            raise ContainerFormatError(f"{path}: corrupt container (no header line)")
        header = _parse_header(line[:-1], path)
        size = os.fstat(fh.fileno()).st_size
    actual_payload = size - len(line)
    if actual_payload != header["payload_bytes"]:
        raise ContainerFormatError(
            f"{path}: corrupt container (payload is {actual_payload} bytes, "
            f"header declares {header['payload_bytes']})"
        )
    return header


def read_container(path, expected_format: str | None = None) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise ContainerFormatError(f"{path}: corrupt container (no header line)")
    header = _parse_header(data[:newline], path)
    payload = data[newline + 1:]
    if len(payload) != header["payload_bytes"]:
        raise ContainerFormatError(
            f"{path}: corrupt container (payload is {len(payload)} bytes, "
            f"header declares {header['payload_bytes']})"
        )
    if expected_format is not None and header["format"] != expected_format:
        raise ContainerFormatError(
            f"{path}: expected a {expected_format!r} container, found {header['format']!r}"
        )
    if header["format_version"] != FORMAT_VERSION:
        raise ContainerFormatError(
            f"{path}: unsupported format_version {header['format_version']!r}"
        )
    return header, payload


def split_payload(payload: bytes, shapes: list[tuple[int, ...]], path) -> list[np.ndarray]:
    """Slice the payload into float32 arrays of the declared shapes."""
    arrays = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(payload):
            raise ContainerFormatError(f"{path}: corrupt container (payload shorter than declared shapes)")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays.append(arr.copy())
        offset += nbytes
    if offset != len(payload):
        raise ContainerFormatError(f"{path}: corrupt container (payload longer than declared shapes)")
    return arrays
