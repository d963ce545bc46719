"""Machine Telemetry Protocol (MTP) codec.

Frame layout (little-endian length):

    ┌───────────┬────────────┬─────────────┬──────────────────┬─────────────┐
    │ magic 4B  │ version 1B │ msg_type 1B │ payload_len 4B   │ payload     │
    │ "MTP1"    │ 0x01       │ 1..6        │ u32 LE           │ UTF-8 JSON  │
    └───────────┴────────────┴─────────────┴──────────────────┴─────────────┘

The payload is the JSON serialization of the message body with keys in
lexicographic order, so encoding is deterministic.  The codec is pure and
stateless; it never raises anything but the typed errors below, no matter
what bytes it is fed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Any, Union

MAGIC = b"MTP1"
VERSION = 1
HEADER_LEN = 10
MAX_PAYLOAD = 1 << 24  # snapshots are <4 KiB; the cap bounds memory under fuzzing

MSG_HELLO = 1
MSG_READ_VARS = 2
MSG_VAR_VALUES = 3
MSG_SUBSCRIBE = 4
MSG_DATA = 5
MSG_ERROR = 6


class MTPError(Exception):
    """Base class for codec failures."""


class OversizePayload(MTPError):
    def __init__(self, size: int):
        self.size = size
        super().__init__(f"payload of {size} bytes exceeds cap of {MAX_PAYLOAD}")


class MTPDecodeError(MTPError):
    """Decode failure; ``offset`` is the byte position of the offending data."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class BadMagic(MTPDecodeError):
    def __init__(self, offset: int):
        super().__init__("bad magic", offset)


class BadVersion(MTPDecodeError):
    def __init__(self, version: int, offset: int):
        self.version = version
        super().__init__(f"unsupported version {version}", offset)


class UnknownMsgType(MTPDecodeError):
    def __init__(self, msg_type: int, offset: int):
        self.msg_type = msg_type
        super().__init__(f"unknown msg_type {msg_type}", offset)


class MalformedPayload(MTPDecodeError):
    def __init__(self, reason: str, offset: int):
        super().__init__(f"malformed payload: {reason}", offset)


@dataclass(frozen=True)
class Hello:
    client_id: str


@dataclass(frozen=True)
class ReadVars:
    names: tuple[str, ...]

    def __init__(self, names):
        object.__setattr__(self, "names", tuple(names))


@dataclass(frozen=True, eq=True)
class VarValues:
    values: dict[str, Union[int, float, str]]
    ts: int


@dataclass(frozen=True)
class Subscribe:
    interval_ms: int


@dataclass(frozen=True, eq=True)
class Data:
    snapshot: dict[str, Any]


@dataclass(frozen=True)
class Error:
    code: int
    text: str


Message = Union[Hello, ReadVars, VarValues, Subscribe, Data, Error]

_TYPE_OF_MESSAGE = {
    Hello: MSG_HELLO,
    ReadVars: MSG_READ_VARS,
    VarValues: MSG_VAR_VALUES,
    Subscribe: MSG_SUBSCRIBE,
    Data: MSG_DATA,
    Error: MSG_ERROR,
}


class NeedMoreBytes:
    """Non-error signal: the buffer holds only a partial frame."""

    def __repr__(self):
        return "NeedMoreBytes"


NEED_MORE_BYTES = NeedMoreBytes()


@dataclass(frozen=True)
class Decoded:
    message: Message
    consumed: int


def _message_body(msg: Message) -> dict[str, Any]:
    if isinstance(msg, Hello):
        return {"client_id": msg.client_id}
    if isinstance(msg, ReadVars):
        return {"names": list(msg.names)}
    if isinstance(msg, VarValues):
        return {"values": msg.values, "ts": msg.ts}
    if isinstance(msg, Subscribe):
        return {"interval_ms": msg.interval_ms}
    if isinstance(msg, Data):
        return {"snapshot": msg.snapshot}
    if isinstance(msg, Error):
        return {"code": msg.code, "text": msg.text}
    raise TypeError(f"not an MTP message: {msg!r}")


def encode_frame(msg: Message) -> bytes:
    """Encode a message into a complete wire frame.

    Raises:
        OversizePayload: if the serialized payload exceeds 2**24 bytes.
    """
    msg_type = _TYPE_OF_MESSAGE[type(msg)]
    payload = json.dumps(
        _message_body(msg), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise OversizePayload(len(payload))
    return MAGIC + struct.pack("<BBI", VERSION, msg_type, len(payload)) + payload


def _require(cond: bool, reason: str, offset: int) -> None:
    if not cond:
        raise MalformedPayload(reason, offset)


def _is_number(v: Any) -> bool:
    return type(v) in (int, float)


def _parse_body(msg_type: int, body: Any, payload_offset: int) -> Message:
    _require(isinstance(body, dict), "body is not an object", payload_offset)

    def keys_are(*names: str) -> None:
        _require(set(body) == set(names), f"expected keys {sorted(names)}", payload_offset)

    if msg_type == MSG_HELLO:
        keys_are("client_id")
        _require(isinstance(body["client_id"], str), "client_id must be text", payload_offset)
        return Hello(body["client_id"])
    if msg_type == MSG_READ_VARS:
        keys_are("names")
        names = body["names"]
        _require(
            isinstance(names, list) and all(isinstance(n, str) for n in names),
            "names must be a list of text",
            payload_offset,
        )
        return ReadVars(names)
    if msg_type == MSG_VAR_VALUES:
        keys_are("values", "ts")
        values = body["values"]
        _require(isinstance(values, dict), "values must be a map", payload_offset)
        _require(
            all(isinstance(k, str) and (_is_number(v) or isinstance(v, str)) for k, v in values.items()),
            "values must map names to numbers or text",
            payload_offset,
        )
        _require(type(body["ts"]) is int, "ts must be an integer", payload_offset)
        return VarValues(values, body["ts"])
    if msg_type == MSG_SUBSCRIBE:
        keys_are("interval_ms")
        iv = body["interval_ms"]
        _require(type(iv) is int and iv > 0, "interval_ms must be a positive integer", payload_offset)
        return Subscribe(iv)
    if msg_type == MSG_DATA:
        keys_are("snapshot")
        _require(isinstance(body["snapshot"], dict), "snapshot must be an object", payload_offset)
        return Data(body["snapshot"])
    if msg_type == MSG_ERROR:
        keys_are("code", "text")
        code = body["code"]
        _require(type(code) is int and 0 <= code < 1 << 16, "code must be u16", payload_offset)
        _require(isinstance(body["text"], str), "text must be text", payload_offset)
        return Error(code, body["text"])
    raise AssertionError("unreachable")


def decode_frame(buf: bytes | bytearray | memoryview) -> Decoded | NeedMoreBytes:
    """Decode one frame from the head of ``buf``.

    Returns ``NEED_MORE_BYTES`` when the buffer is a valid-so-far partial
    frame; trailing bytes after a complete frame are left untouched
    (``consumed`` tells the caller where the frame ended).

    Raises:
        BadMagic, BadVersion, UnknownMsgType, MalformedPayload: each names
        the byte offset of the offending data.
    """
    buf = bytes(buf)
    # Validate whatever prefix of the header is present, so a NeedMoreBytes
    # verdict can never turn into a magic/version/type error on extension.
    n = len(buf)
    for i in range(min(n, 4)):
        if buf[i] != MAGIC[i]:
            raise BadMagic(i)
    if n >= 5 and buf[4] != VERSION:
        raise BadVersion(buf[4], 4)
    if n >= 6 and not MSG_HELLO <= buf[5] <= MSG_ERROR:
        raise UnknownMsgType(buf[5], 5)
    if n < HEADER_LEN:
        return NEED_MORE_BYTES
    (payload_len,) = struct.unpack_from("<I", buf, 6)
    if payload_len > MAX_PAYLOAD:
        raise MalformedPayload(f"payload_len {payload_len} exceeds cap", 6)
    end = HEADER_LEN + payload_len
    if n < end:
        return NEED_MORE_BYTES
    raw = buf[HEADER_LEN:end]
    try:
        text = raw.decode("utf-8")
        body = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedPayload(str(exc), HEADER_LEN) from None
    message = _parse_body(buf[5], body, HEADER_LEN)
    return Decoded(message, end)


class FrameReader:
    """Incremental frame reader over a socket-like object with ``recv``.

    Keeps bytes beyond the first frame buffered for the next call.
    """

    def __init__(self, sock):
        self._sock = sock
        self._buf = b""

    def read(self) -> Message | None:
        """Next message, or None on clean EOF at a frame boundary.

        Raises the decode errors above on a corrupt stream.
        """
        while True:
            result = decode_frame(self._buf)
            if isinstance(result, Decoded):
                self._buf = self._buf[result.consumed:]
                return result.message
            chunk = self._sock.recv(65536)
            if not chunk:
                if not self._buf:
                    return None
                raise MalformedPayload("stream ended mid-frame", len(self._buf))
            self._buf += chunk


def write_frame(sock, msg: Message) -> None:
    sock.sendall(encode_frame(msg))
