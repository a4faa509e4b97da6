"""Exception hierarchy.

Every error that can cross the wire is named after its class: the
synchronizer answers ``Err{code=<class name>}`` and the client maps the code
back to the same class with :func:`error_for_code`.
"""

from __future__ import annotations


class DossierError(Exception):
    """Base class for every domain error raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# model
class InvalidName(DossierError, ValueError):
    pass


class UnknownField(DossierError, KeyError):
    pass


class IdentityMismatch(DossierError):
    pass


class EmptyGrant(DossierError, ValueError):
    pass


class OwnerAsReceiver(DossierError, ValueError):
    pass


# crypto
class EntropyUnavailable(DossierError):
    pass


class MalformedPublicKey(DossierError, ValueError):
    pass


class UnwrapFailed(DossierError):
    pass


class PlaintextTooLarge(DossierError, ValueError):
    pass


class OpenFailed(DossierError):
    pass


# wire
class WireError(DossierError):
    pass


class Malformed(WireError):
    pass


class NonCanonical(WireError):
    pass


class UnknownType(WireError):
    pass


class OversizeField(WireError):
    pass


class NotSignable(WireError):
    pass


class FrameTooLarge(WireError):
    pass


class TruncatedFrame(WireError):
    pass


class UnexpectedMessage(WireError):
    pass


# synchronizer rejections (all travel as Err codes)
class SyncReject(DossierError):
    pass


class KeyConflict(SyncReject):
    pass


class UnknownOwner(SyncReject):
    pass


class UnknownUser(SyncReject):
    pass


class BadSignature(SyncReject):
    pass


class ReplayedRequest(SyncReject):
    pass


class NoKey(SyncReject):
    pass


class NotGrantOwner(SyncReject):
    pass


class RemoteError(DossierError):
    """An ``Err`` response whose code has no local class."""

    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self._code = code
        self.detail = detail

    @property
    def code(self) -> str:
        return self._code


# agent
class DuplicateDossier(DossierError):
    pass


class NotOwner(DossierError):
    pass


class UnknownDossier(DossierError, KeyError):
    pass


class UnknownReceiver(DossierError):
    pass


class SyncUnreachable(DossierError):
    pass


class AccessRevoked(DossierError):
    pass


class CorruptRecord(DossierError):
    pass


# store
class StoreError(DossierError):
    pass


class CorruptSnapshot(StoreError):
    pass


class CorruptLog(StoreError):
    pass


class LogGap(StoreError):
    pass


class SuiteMismatch(StoreError):
    pass


class DiskFull(StoreError):
    pass


class LockLost(StoreError):
    pass


class LockHeld(StoreError):
    pass


# simnet
class InvalidScenario(DossierError, ValueError):
    pass


class QueuesNotDrained(DossierError):
    pass


def _all_subclasses(cls: type) -> list[type]:
    out = []
    for sub in cls.__subclasses__():
        out.append(sub)
        out.extend(_all_subclasses(sub))
    return out


_BY_CODE = {c.__name__: c for c in _all_subclasses(DossierError) if c is not RemoteError}


def error_for_code(code: str, detail: str = "") -> DossierError:
    """Rebuild the local exception for an ``Err`` code received over the wire."""
    cls = _BY_CODE.get(code)
    if cls is None:
        return RemoteError(code, detail)
    return cls(detail)
