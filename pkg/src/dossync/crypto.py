"""Identity keys, key wrapping, signatures and salted authenticated encryption.

Suite: X25519 + HKDF-SHA256 + ChaCha20-Poly1305 for wrapping, Ed25519 for
signatures, ChaCha20-Poly1305 with a fresh random 96-bit nonce for sealing.
Every function that needs randomness takes an ``entropy`` callable
``(n) -> n bytes`` so simulations can run from a seed.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (
    EntropyUnavailable,
    MalformedPublicKey,
    OpenFailed,
    PlaintextTooLarge,
    UnwrapFailed,
)
from .model import UserId, check_user

SUITE_ID = "x25519-ed25519-chacha20poly1305-hkdfsha256"

KEY_BYTES = 32
NONCE_BYTES = 12
TAG_BYTES = 16
SIGNATURE_BYTES = 64
WRAPPED_BYTES = KEY_BYTES + NONCE_BYTES + KEY_BYTES + TAG_BYTES
MAX_PLAINTEXT = 1024 * 1024

_WRAP_INFO = b"dossync/wrap/v1"

Entropy = Callable[[int], bytes]
_RAW = serialization.Encoding.Raw


def system_entropy(n: int) -> bytes:
    return os.urandom(n)


def seeded_entropy(seed: int) -> Entropy:
    """Deterministic entropy for simulations and tests. Never use for real keys."""
    return random.Random(seed).randbytes


def _draw(entropy: Entropy, n: int) -> bytes:
    try:
        out = entropy(n)
    except Exception as exc:
        raise EntropyUnavailable(str(exc) or type(exc).__name__) from exc
    if not isinstance(out, (bytes, bytearray)) or len(out) != n:
        raise EntropyUnavailable(f"entropy source returned {len(out) if out else 0} of {n} bytes")
    return bytes(out)


@dataclass(frozen=True)
class PublicKeyBundle:
    user: UserId
    enc_public: bytes
    sig_public: bytes

    def __post_init__(self) -> None:
        check_user(self.user)

    def validate(self) -> "PublicKeyBundle":
        if len(self.enc_public) != KEY_BYTES or len(self.sig_public) != KEY_BYTES:
            raise MalformedPublicKey(f"bundle for {self.user} has wrong key lengths")
        return self


@dataclass(frozen=True, repr=False)
class Identity:
    user: UserId
    enc_private: bytes
    sig_private: bytes

    def __post_init__(self) -> None:
        check_user(self.user)
        if len(self.enc_private) != KEY_BYTES or len(self.sig_private) != KEY_BYTES:
            raise ValueError("private keys must be 32 bytes")

    @property
    def public(self) -> PublicKeyBundle:
        enc = X25519PrivateKey.from_private_bytes(self.enc_private).public_key()
        sig = Ed25519PrivateKey.from_private_bytes(self.sig_private).public_key()
        return PublicKeyBundle(
            self.user, enc.public_bytes(_RAW, serialization.PublicFormat.Raw),
            sig.public_bytes(_RAW, serialization.PublicFormat.Raw),
        )

    def __repr__(self) -> str:
        return f"Identity(user={self.user!r})"


def gen_identity(user: UserId, entropy: Entropy = system_entropy) -> Identity:
    return Identity(user, _draw(entropy, KEY_BYTES), _draw(entropy, KEY_BYTES))


def gen_sym_key(entropy: Entropy = system_entropy) -> bytes:
    return _draw(entropy, KEY_BYTES)


def _wrap_key_material(shared: bytes, eph_pub: bytes, recv_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None,
        info=_WRAP_INFO + eph_pub + recv_pub,
    ).derive(shared)


def wrap_key(key: bytes, receiver: PublicKeyBundle, entropy: Entropy = system_entropy) -> bytes:
    """Encrypt ``key`` to the receiver's X25519 key.

    Layout: ephemeral public (32) | nonce (12) | ciphertext+tag (48).
    """
    if len(key) != KEY_BYTES:
        raise ValueError("symmetric keys are 32 bytes")
    try:
        recv = X25519PublicKey.from_public_bytes(receiver.enc_public)
    except (ValueError, TypeError) as exc:
        raise MalformedPublicKey(f"encryption key of {receiver.user}") from exc
    eph = X25519PrivateKey.from_private_bytes(_draw(entropy, KEY_BYTES))
    eph_pub = eph.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
    try:
        shared = eph.exchange(recv)
    except ValueError as exc:
        raise MalformedPublicKey(f"encryption key of {receiver.user} is a low-order point") from exc
    nonce = _draw(entropy, NONCE_BYTES)
    kek = _wrap_key_material(shared, eph_pub, receiver.enc_public)
    ct = ChaCha20Poly1305(kek).encrypt(nonce, key, eph_pub + receiver.enc_public)
    return eph_pub + nonce + ct


def unwrap_key(wrapped: bytes, enc_private: bytes) -> bytes:
    if len(wrapped) != WRAPPED_BYTES:
        raise UnwrapFailed(f"wrapped key is {len(wrapped)} bytes, expected {WRAPPED_BYTES}")
    eph_pub = wrapped[:KEY_BYTES]
    nonce = wrapped[KEY_BYTES:KEY_BYTES + NONCE_BYTES]
    ct = wrapped[KEY_BYTES + NONCE_BYTES:]
    priv = X25519PrivateKey.from_private_bytes(enc_private)
    own_pub = priv.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw)
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        kek = _wrap_key_material(shared, eph_pub, own_pub)
        return ChaCha20Poly1305(kek).decrypt(nonce, ct, eph_pub + own_pub)
    except (ValueError, InvalidTag) as exc:
        raise UnwrapFailed("wrapped key does not open under this private key") from exc


@dataclass(frozen=True)
class WrappedKey:
    """A symmetric key wrapped for one receiver, signed by the dossier owner."""

    dossier: str
    owner: UserId
    receiver: UserId
    wrapped: bytes
    signature: bytes


@dataclass(frozen=True)
class SealedBox:
    nonce: bytes
    ciphertext: bytes


def seal(plaintext: bytes, key: bytes, entropy: Entropy = system_entropy) -> SealedBox:
    if len(plaintext) > MAX_PLAINTEXT:
        raise PlaintextTooLarge(f"{len(plaintext)} bytes exceeds {MAX_PLAINTEXT}")
    nonce = _draw(entropy, NONCE_BYTES)
    return SealedBox(nonce, ChaCha20Poly1305(key).encrypt(nonce, plaintext, None))


def open_box(box: SealedBox, key: bytes) -> bytes:
    if len(box.nonce) != NONCE_BYTES or len(key) != KEY_BYTES:
        raise OpenFailed("bad nonce or key length")
    try:
        return ChaCha20Poly1305(key).decrypt(box.nonce, box.ciphertext, None)
    except InvalidTag as exc:
        raise OpenFailed("authentication failed") from exc


def sign(msg: bytes, sig_private: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(sig_private).sign(msg)


def verify(msg: bytes, signature: bytes, pub: PublicKeyBundle) -> bool:
    """True iff ``signature`` is valid for ``msg``; never raises."""
    try:
        if len(signature) != SIGNATURE_BYTES:
            return False
        Ed25519PublicKey.from_public_bytes(pub.sig_public).verify(signature, msg)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False
