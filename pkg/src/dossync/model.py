"""Dossiers, access lists, redaction and the version merge rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import (
    EmptyGrant,
    IdentityMismatch,
    InvalidName,
    OversizeField,
    OwnerAsReceiver,
    UnknownField,
)

UserId = str
DossierId = str
FieldName = str

MAX_USER_BYTES = 64
MAX_DOSSIER_BYTES = 128
MAX_FIELD_NAME_BYTES = 64
MAX_FIELD_VALUE_BYTES = 64 * 1024
MAX_U64 = 2**64 - 1


def _check_name(kind: str, value: object, limit: int) -> str:
    if not isinstance(value, str) or not value:
        raise InvalidName(f"{kind} must be a non-empty string, got {value!r}")
    try:
        raw = value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidName(f"{kind} is not valid UTF-8") from exc
    if len(raw) > limit:
        raise OversizeField(f"{kind} is {len(raw)} bytes, limit {limit}")
    return value


def check_user(value: object) -> UserId:
    return _check_name("user id", value, MAX_USER_BYTES)


def check_dossier(value: object) -> DossierId:
    return _check_name("dossier id", value, MAX_DOSSIER_BYTES)


def check_field_name(value: object) -> FieldName:
    return _check_name("field name", value, MAX_FIELD_NAME_BYTES)


def check_field_value(value: object) -> bytes:
    if not isinstance(value, (bytes, bytearray)):
        raise InvalidName(f"field value must be bytes, got {type(value).__name__}")
    if len(value) > MAX_FIELD_VALUE_BYTES:
        raise OversizeField(f"field value is {len(value)} bytes, limit {MAX_FIELD_VALUE_BYTES}")
    return bytes(value)


def check_version(value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= MAX_U64:
        raise InvalidName(f"version must be an integer in [1, 2^64), got {value!r}")
    return value


def _check_fields(fields: Mapping[str, bytes]) -> dict[str, bytes]:
    return {check_field_name(k): check_field_value(v) for k, v in fields.items()}


@dataclass(frozen=True)
class Dossier:
    """Owner-held plaintext record."""

    id: DossierId
    owner: UserId
    version: int
    fields: Mapping[FieldName, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_dossier(self.id)
        check_user(self.owner)
        check_version(self.version)
        object.__setattr__(self, "fields", _check_fields(self.fields))

    def with_field(self, name: FieldName, value: Optional[bytes]) -> "Dossier":
        """Return the next version with ``name`` set, or removed when ``value`` is None."""
        fields = dict(self.fields)
        if value is None:
            if name not in fields:
                raise UnknownField(name)
            del fields[name]
        else:
            fields[check_field_name(name)] = check_field_value(value)
        return Dossier(self.id, self.owner, self.version + 1, fields)

    def bumped(self) -> "Dossier":
        return Dossier(self.id, self.owner, self.version + 1, self.fields)


@dataclass(frozen=True)
class RedactedView:
    """The part of a dossier one receiver is allowed to see."""

    id: DossierId
    owner: UserId
    version: int
    fields: Mapping[FieldName, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_dossier(self.id)
        check_user(self.owner)
        check_version(self.version)
        object.__setattr__(self, "fields", _check_fields(self.fields))

    def as_dossier(self) -> Dossier:
        return Dossier(self.id, self.owner, self.version, self.fields)


def redact(d: Dossier, allowed: Iterable[FieldName]) -> RedactedView:
    allowed = set(allowed)
    missing = allowed - d.fields.keys()
    if missing:
        raise UnknownField(", ".join(sorted(missing)))
    kept = {name: value for name, value in d.fields.items() if name in allowed}
    return RedactedView(d.id, d.owner, d.version, kept)


def apply_incoming(local: Optional[RedactedView], incoming: RedactedView) -> RedactedView:
    """Last-writer-wins by version; stale and duplicate updates are no-ops."""
    if local is None:
        return incoming
    if local.id != incoming.id or local.owner != incoming.owner:
        raise IdentityMismatch(
            f"local {local.owner}/{local.id} vs incoming {incoming.owner}/{incoming.id}"
        )
    return incoming if incoming.version > local.version else local


@dataclass(frozen=True)
class Acl:
    """Per (dossier, receiver) sets of readable field names."""

    entries: Mapping[tuple[DossierId, UserId], frozenset[FieldName]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", {k: frozenset(v) for k, v in self.entries.items()})

    def fields_for(self, dossier: DossierId, receiver: UserId) -> Optional[frozenset[FieldName]]:
        return self.entries.get((dossier, receiver))

    def receivers(self, dossier: DossierId) -> list[UserId]:
        return sorted(r for d, r in self.entries if d == dossier)


def acl_grant(
    acl: Acl, dossier: DossierId, receiver: UserId, fields: Iterable[FieldName], *, owner: UserId
) -> Acl:
    fields = frozenset(fields)
    if not fields:
        raise EmptyGrant(f"grant of {dossier} to {receiver} names no fields")
    if receiver == owner:
        raise OwnerAsReceiver(f"{owner} owns {dossier}")
    for name in fields:
        check_field_name(name)
    entries = dict(acl.entries)
    entries[(check_dossier(dossier), check_user(receiver))] = fields
    return Acl(entries)


def acl_revoke(acl: Acl, dossier: DossierId, receiver: UserId) -> Acl:
    if (dossier, receiver) not in acl.entries:
        return acl
    entries = dict(acl.entries)
    del entries[(dossier, receiver)]
    return Acl(entries)
