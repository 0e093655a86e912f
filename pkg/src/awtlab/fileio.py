"""Binary container shared by dataset, checkpoint and batch files.

Layout: magic bytes, u32 little-endian header length, UTF-8 JSON header,
then raw payload bytes whose meaning the header describes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .errors import FormatError

FORMAT_VERSION = 1


def write_container(path: str | Path, magic: bytes, header: dict, payloads: list[bytes]) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for chunk in payloads:
            f.write(chunk)


def read_container(path: str | Path, magic: bytes) -> tuple[dict, bytes]:
    """Returns (header, payload bytes). Raises FormatError on any defect."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"{path}: cannot read file: {e}") from e
    if len(raw) < len(magic) + 4:
        raise FormatError(f"{path}: unexpected end of file")
    if raw[: len(magic)] != magic:
        raise FormatError(
            f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}"
        )
    off = len(magic)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + hlen:
        raise FormatError(f"{path}: unexpected end of file in header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: malformed header: {e}") from e
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not an object")
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version!r}")
    return header, raw[off + hlen :]


def take(payload: bytes, offset: int, n: int, path: str | Path, what: str) -> bytes:
    """Slice n bytes out of the payload, failing loudly on truncation."""
    if offset + n > len(payload):
        raise FormatError(f"{path}: unexpected end of file while reading {what}")
    return payload[offset : offset + n]
