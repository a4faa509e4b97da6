"""Canonical message encoding and length-prefixed framing.

A payload is one JSON object with keys sorted, no insignificant whitespace,
integers in minimal decimal form and byte strings as padded standard base64.
Decoding is strict: anything that parses but does not re-encode to the exact
same bytes is rejected as :class:`NonCanonical`, so a signature over the
canonical form can never be bypassed by an alternative spelling.
"""

from __future__ import annotations

import base64
import binascii
import json
import struct
from dataclasses import dataclass, fields as dc_fields
from typing import Any, BinaryIO, ClassVar, Optional

from .crypto import MAX_PLAINTEXT
from .errors import (
    FrameTooLarge,
    InvalidName,
    Malformed,
    NonCanonical,
    NotSignable,
    OversizeField,
    TruncatedFrame,
    UnknownType,
)
from .model import (
    MAX_U64,
    RedactedView,
    check_dossier,
    check_field_name,
    check_field_value,
    check_user,
    check_version,
)

MAX_FRAME = 2 * 1024 * 1024
MAX_BYTES_FIELD = MAX_PLAINTEXT + 1024
MAX_TEXT_FIELD = 1024
PROTOCOL_TAG = "DC1"

_HEADER = struct.Struct(">I")


# ---------------------------------------------------------------- primitives

def dumps(obj: Any) -> bytes:
    """Canonical bytes for a JSON-compatible object (no floats)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _no_dupes(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise Malformed(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_float(text: str) -> Any:
    raise Malformed(f"non-integer number {text}")


def parse(b: bytes) -> Any:
    """Parse JSON without any canonicality check."""
    try:
        text = bytes(b).decode("utf-8")
        return json.loads(
            text, object_pairs_hook=_no_dupes, parse_float=_reject_float, parse_constant=_reject_float
        )
    except Malformed:
        raise
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise Malformed(str(exc)) from exc


def loads(b: bytes) -> Any:
    """Parse and require that ``b`` is exactly the canonical encoding."""
    obj = parse(b)
    if dumps(obj) != bytes(b):
        raise NonCanonical("payload is not in canonical form")
    return obj


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: Any, name: str = "field") -> bytes:
    if not isinstance(text, str):
        raise Malformed(f"{name} must be a base64 string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise Malformed(f"{name} is not valid base64") from exc
    if base64.b64encode(raw).decode("ascii") != text:
        raise NonCanonical(f"{name} base64 is not canonical")
    return raw


# ------------------------------------------------------------- field kinds

def _enc_field(kind: str, name: str, value: Any) -> Any:
    if kind == "user":
        return _checked(check_user, value, name)
    if kind == "dossier":
        return _checked(check_dossier, value, name)
    if kind == "bytes":
        if not isinstance(value, (bytes, bytearray)):
            raise Malformed(f"{name} must be bytes")
        if len(value) > MAX_BYTES_FIELD:
            raise OversizeField(f"{name} is {len(value)} bytes")
        return b64(bytes(value))
    if kind == "u64":
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= MAX_U64:
            raise Malformed(f"{name} must be an unsigned 64-bit integer")
        return value
    if kind == "version":
        return _checked(check_version, value, name)
    if kind == "text":
        if not isinstance(value, str):
            raise Malformed(f"{name} must be a string")
        if len(value.encode("utf-8", "strict")) > MAX_TEXT_FIELD:
            raise OversizeField(f"{name} too long")
        return value
    if kind == "ids":
        return [_enc_field("u64", name, v) for v in value]
    if kind == "entries":
        return [_to_obj(e) for e in value]
    raise AssertionError(kind)


def _dec_field(kind: str, name: str, value: Any) -> Any:
    if kind == "bytes":
        raw = unb64(value, name)
        if len(raw) > MAX_BYTES_FIELD:
            raise OversizeField(f"{name} is {len(raw)} bytes")
        return raw
    if kind == "ids":
        if not isinstance(value, list):
            raise Malformed(f"{name} must be a list")
        return tuple(_dec_field("u64", name, v) for v in value)
    if kind == "entries":
        if not isinstance(value, list):
            raise Malformed(f"{name} must be a list")
        return tuple(_from_obj(v, PendingWire) for v in value)
    if kind in ("user", "dossier", "text") and not isinstance(value, str):
        raise Malformed(f"{name} must be a string")
    return _enc_field(kind, name, value)


def _checked(fn, value: Any, name: str) -> Any:
    try:
        return fn(value)
    except InvalidName as exc:
        raise Malformed(f"{name}: {exc}") from exc


# ----------------------------------------------------------------- messages

class Message:
    """Base of all protocol variants."""

    TYPE: ClassVar[str]
    FIELDS: ClassVar[dict[str, str]]
    REQUEST: ClassVar[bool] = False
    SIGNED: ClassVar[bool] = False


@dataclass(frozen=True)
class PendingWire:
    FIELDS: ClassVar[dict[str, str]] = {
        "entry_id": "u64", "dossier": "dossier", "owner": "user", "version": "version",
        "nonce": "bytes", "ciphertext": "bytes", "signature": "bytes",
    }
    entry_id: int
    dossier: str
    owner: str
    version: int
    nonce: bytes
    ciphertext: bytes
    signature: bytes


@dataclass(frozen=True)
class Register(Message):
    TYPE = "register"
    FIELDS = {"user": "user", "enc_public": "bytes", "sig_public": "bytes"}
    REQUEST = True
    user: str
    enc_public: bytes
    sig_public: bytes


@dataclass(frozen=True)
class Lookup(Message):
    TYPE = "lookup"
    FIELDS = {"user": "user"}
    REQUEST = True
    user: str


@dataclass(frozen=True)
class Grant(Message):
    TYPE = "grant"
    FIELDS = {"dossier": "dossier", "owner": "user", "receiver": "user",
              "wrapped": "bytes", "signature": "bytes"}
    REQUEST = SIGNED = True
    dossier: str
    owner: str
    receiver: str
    wrapped: bytes
    signature: bytes = b""


@dataclass(frozen=True)
class Send(Message):
    TYPE = "send"
    FIELDS = {"dossier": "dossier", "owner": "user", "receiver": "user", "version": "version",
              "nonce": "bytes", "ciphertext": "bytes", "signature": "bytes"}
    REQUEST = SIGNED = True
    dossier: str
    owner: str
    receiver: str
    version: int
    nonce: bytes
    ciphertext: bytes
    signature: bytes = b""


@dataclass(frozen=True)
class Fetch(Message):
    TYPE = "fetch"
    FIELDS = {"receiver": "user", "request_seq": "u64", "signature": "bytes"}
    REQUEST = SIGNED = True
    receiver: str
    request_seq: int
    signature: bytes = b""


@dataclass(frozen=True)
class Ack(Message):
    TYPE = "ack"
    FIELDS = {"receiver": "user", "entry_ids": "ids", "request_seq": "u64", "signature": "bytes"}
    REQUEST = SIGNED = True
    receiver: str
    entry_ids: tuple[int, ...]
    request_seq: int
    signature: bytes = b""


@dataclass(frozen=True)
class GetKey(Message):
    TYPE = "getkey"
    FIELDS = {"dossier": "dossier", "receiver": "user", "request_seq": "u64", "signature": "bytes"}
    REQUEST = SIGNED = True
    dossier: str
    receiver: str
    request_seq: int
    signature: bytes = b""


@dataclass(frozen=True)
class Revoke(Message):
    TYPE = "revoke"
    FIELDS = {"dossier": "dossier", "owner": "user", "receiver": "user", "signature": "bytes"}
    REQUEST = SIGNED = True
    dossier: str
    owner: str
    receiver: str
    signature: bytes = b""


@dataclass(frozen=True)
class OkKey(Message):
    TYPE = "ok_key"
    FIELDS = {"wrapped": "bytes"}
    wrapped: bytes


@dataclass(frozen=True)
class OkPending(Message):
    TYPE = "ok_pending"
    FIELDS = {"entries": "entries"}
    entries: tuple[PendingWire, ...]


@dataclass(frozen=True)
class OkBundle(Message):
    TYPE = "ok_bundle"
    FIELDS = {"user": "user", "enc_public": "bytes", "sig_public": "bytes"}
    user: str
    enc_public: bytes
    sig_public: bytes


@dataclass(frozen=True)
class OkEmpty(Message):
    TYPE = "ok_empty"
    FIELDS: ClassVar[dict[str, str]] = {}


@dataclass(frozen=True)
class Err(Message):
    TYPE = "err"
    FIELDS = {"code": "text", "detail": "text"}
    code: str
    detail: str = ""


MESSAGE_TYPES: dict[str, type] = {
    cls.TYPE: cls
    for cls in (Register, Lookup, Grant, Send, Fetch, Ack, GetKey, Revoke,
                OkKey, OkPending, OkBundle, OkEmpty, Err)
}


def _to_obj(m: Any, *, omit_signature: bool = False) -> dict[str, Any]:
    obj = {}
    for name, kind in m.FIELDS.items():
        if omit_signature and name == "signature":
            continue
        obj[name] = _enc_field(kind, name, getattr(m, name))
    if isinstance(m, Message):
        obj["type"] = m.TYPE
    return obj


def _from_obj(obj: Any, cls: type) -> Any:
    if not isinstance(obj, dict):
        raise Malformed("expected an object")
    expected = set(cls.FIELDS) | ({"type"} if issubclass(cls, Message) else set())
    if set(obj) != expected:
        extra = sorted(set(obj) - expected)
        missing = sorted(expected - set(obj))
        raise Malformed(f"{cls.__name__}: unexpected keys {extra}, missing {missing}")
    kwargs = {name: _dec_field(kind, name, obj[name]) for name, kind in cls.FIELDS.items()}
    return cls(**kwargs)


def to_obj(m: Message) -> dict[str, Any]:
    return _to_obj(m)


def from_obj(obj: Any) -> Message:
    if not isinstance(obj, dict) or not isinstance(obj.get("type"), str):
        raise Malformed("message must be an object with a string 'type'")
    cls = MESSAGE_TYPES.get(obj["type"])
    if cls is None:
        raise UnknownType(obj["type"])
    return _from_obj(obj, cls)


def canonical_encode(m: Message) -> bytes:
    return dumps(_to_obj(m))


def decode(b: bytes) -> Message:
    m = from_obj(parse(b))
    if canonical_encode(m) != bytes(b):
        raise NonCanonical(f"{m.TYPE} payload is not in canonical form")
    return m


def signing_bytes(m: Message) -> bytes:
    """Canonical encoding with the signature field left out entirely."""
    if not m.SIGNED:
        raise NotSignable(m.TYPE)
    return dumps(_to_obj(m, omit_signature=True))


def pending_signing_bytes(entry: PendingWire, receiver: str) -> bytes:
    """Signing bytes of the Send that produced ``entry``."""
    return signing_bytes(Send(entry.dossier, entry.owner, receiver, entry.version,
                              entry.nonce, entry.ciphertext))


# -------------------------------------------------------------------- views

def encode_view(view: RedactedView) -> bytes:
    return dumps({
        "fields": {name: b64(value) for name, value in view.fields.items()},
        "id": view.id, "owner": view.owner, "type": "view", "version": view.version,
    })


def decode_view(b: bytes) -> RedactedView:
    obj = loads(b)
    if not isinstance(obj, dict) or set(obj) != {"fields", "id", "owner", "type", "version"} \
            or obj["type"] != "view" or not isinstance(obj["fields"], dict):
        raise Malformed("not a dossier view")
    fields = {}
    for name, value in obj["fields"].items():
        fields[_checked(check_field_name, name, "field name")] = _checked(
            check_field_value, unb64(value, name), name)
    try:
        return RedactedView(obj["id"], obj["owner"], obj["version"], fields)
    except InvalidName as exc:
        raise Malformed(str(exc)) from exc


# ------------------------------------------------------------------ framing

def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"{len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            break
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Optional[bytes]:
    """Read one frame; None on a clean end of stream between frames."""
    header = _read_exact(stream, _HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise TruncatedFrame("stream ended inside a frame header")
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameTooLarge(f"declared length {length} exceeds {MAX_FRAME}")
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise TruncatedFrame(f"stream ended after {len(payload)} of {length} payload bytes")
    return payload


def deframe(stream: BinaryIO) -> bytes:
    payload = read_frame(stream)
    if payload is None:
        raise TruncatedFrame("stream ended before a frame")
    return payload


def split_frames(buf: bytes) -> tuple[list[tuple[int, bytes]], int]:
    """Split a buffer of concatenated frames.

    Returns ``[(offset, payload), ...]`` for every complete frame and the
    offset where an incomplete tail starts (``len(buf)`` if there is none).
    """
    out = []
    pos = 0
    while pos < len(buf):
        if len(buf) - pos < _HEADER.size:
            break
        (length,) = _HEADER.unpack_from(buf, pos)
        if length > MAX_FRAME:
            raise FrameTooLarge(f"frame at offset {pos} declares {length} bytes")
        end = pos + _HEADER.size + length
        if end > len(buf):
            break
        out.append((pos, buf[pos + _HEADER.size:end]))
        pos = end
    return out, pos


def handshake_line(suite_id: str) -> bytes:
    return f"{PROTOCOL_TAG} {suite_id}\n".encode("ascii")


def message_fields(m: Message) -> list[str]:
    return [f.name for f in dc_fields(m)]
