"""Wire envelope: length-prefixed UTF-8 JSON frames.

Frame layout: 4-byte big-endian body length, then a JSON object::

    {"version": "smmd/1", "kind": ..., "seq": int, "scale": int, "payload": {...}}

Inside the payload every integer is written as a lowercase hex string
(``"0x1f"``, negatives ``"-0x1f"``), so ciphertexts and ring elements of
any size survive JSON.  Floats stay JSON numbers; they are only legal in
a few whitelisted places (see :mod:`.scanner`).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

VERSION = "smmd/1"
HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 28

KINDS = (
    "Hello",
    "PubKey",
    "EncMonomials",
    "EncScalar",
    "MaskedGradRequest",
    "DecryptedMaskedGrad",
    "LossReport",
    "Abort",
    "Done",
)


class ProtocolError(RuntimeError):
    """Sequencing, state-machine or validation failure."""


class ProtocolAbort(ProtocolError):
    """The run was stopped, by the peer or locally, with a stated reason."""

    def __init__(self, reason: str, partial: dict | None = None):
        super().__init__(reason)
        self.reason = reason
        self.partial = partial or {}


class FrameError(ProtocolError, ValueError):
    pass


class VersionError(FrameError):
    pass


@dataclass
class ProtocolMessage:
    kind: str
    seq: int
    payload: dict = field(default_factory=dict)
    scale: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProtocolError(f"unknown message kind {self.kind!r}")


def _to_wire(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (float, str)):
        return obj
    if isinstance(obj, int):
        return hex(obj)
    if isinstance(obj, dict):
        return {str(k): _to_wire(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_wire(v) for v in obj]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _parse_hex(s: str, path: str) -> int:
    neg = s.startswith("-")
    digits = s[3:] if neg else s[2:]
    if not digits or any(ch not in "0123456789abcdef" for ch in digits):
        raise FrameError(f"non-hex integer at {path}: {s[:40]!r}")
    v = int(digits, 16)
    return -v if neg else v


def _from_wire(obj: Any, path: str) -> Any:
    if isinstance(obj, str):
        if obj.startswith("0x") or obj.startswith("-0x"):
            return _parse_hex(obj, path)
        return obj
    if isinstance(obj, dict):
        return {k: _from_wire(v, f"{path}.{k}") for k, v in obj.items()}
    if isinstance(obj, list):
        return [_from_wire(v, f"{path}[{i}]") for i, v in enumerate(obj)]
    if isinstance(obj, int) and not isinstance(obj, bool):
        raise FrameError(f"bare JSON integer at {path}; integers must be hex strings")
    return obj


def encode_body(msg: ProtocolMessage) -> bytes:
    body = {"version": VERSION, "kind": msg.kind, "seq": msg.seq, "scale": msg.scale,
            "payload": _to_wire(msg.payload)}
    return json.dumps(body, separators=(",", ":")).encode("utf-8")


def serialize(msg: ProtocolMessage) -> bytes:
    body = encode_body(msg)
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame of {len(body)} bytes exceeds limit")
    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> ProtocolMessage:
    if not body:
        raise FrameError("zero-length frame")
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame is not UTF-8 JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FrameError("frame body must be a JSON object")
    if obj.get("version") != VERSION:
        raise VersionError(f"unsupported version {obj.get('version')!r}")
    for key, typ in (("kind", str), ("seq", int), ("scale", int), ("payload", dict)):
        if not isinstance(obj.get(key), typ) or isinstance(obj.get(key), bool):
            raise FrameError(f"missing or ill-typed field {key!r}")
    if obj["kind"] not in KINDS:
        raise FrameError(f"unknown message kind {obj['kind']!r}")
    return ProtocolMessage(obj["kind"], obj["seq"], _from_wire(obj["payload"], "payload"), obj["scale"])


def deserialize(data: bytes) -> ProtocolMessage:
    """Parse exactly one frame (header plus body)."""
    if len(data) < HEADER.size:
        raise FrameError("truncated frame header")
    (length,) = HEADER.unpack_from(data)
    if length == 0:
        raise FrameError("zero-length frame")
    if length > MAX_FRAME:
        raise FrameError(f"declared frame length {length} exceeds limit")
    body = data[HEADER.size:]
    if len(body) != length:
        raise FrameError(f"truncated frame: header says {length} bytes, got {len(body)}")
    return decode_body(body)
