"""Owner key pairs and owner-signed trusted-publisher certificates.

A certificate binds a publisher's Ed25519 verification key to the content
prefixes the owner authorizes it to serve. It is a compact TLV structure
(type 0x0010) rather than X.509; the prefix list plays the role of the
subject-alternative-name extension.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import tlv
from .errors import (
    BadSignature,
    EmptyAuthorization,
    Expired,
    InvalidValidityWindow,
    MalformedField,
    NotYetValid,
    UnknownType,
)
from .names import ContentName, RandomSource, parse_name

CERTIFICATE = 0x0010
KEY_FILE = 0x0020

F_PUBLISHER_KEY = 0x0401
F_PREFIX = 0x0402
F_NOT_BEFORE = 0x0403
F_NOT_AFTER = 0x0404
F_OWNER_ID = 0x0405
F_OWNER_SIGNATURE = 0x0406

F_KEY_ID = 0x0701
F_KEY_PUBLIC = 0x0702
F_KEY_PRIVATE = 0x0703

PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64

TrustStore = Mapping[str, bytes]


def public_from_private(private_key: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(private_key).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def sign(private_key: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)


def verify(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    """An Ed25519 key pair. ``repr`` never shows the private half."""

    key_id: str
    public_key: bytes
    private_key: bytes = field(repr=False)

    @classmethod
    def generate(cls, key_id: str, rng: RandomSource = secrets.token_bytes) -> "KeyPair":
        private = rng(32)
        return cls(key_id, public_from_private(private), private)

    def sign(self, message: bytes) -> bytes:
        return sign(self.private_key, message)

    def to_file_bytes(self) -> bytes:
        """Fixture format for ``keys gen-owner``; the only place a private key is serialized."""
        body = tlv.pack_str(F_KEY_ID, self.key_id) + tlv.pack(F_KEY_PUBLIC, self.public_key) + tlv.pack(F_KEY_PRIVATE, self.private_key)
        return tlv.pack(KEY_FILE, body)

    @classmethod
    def from_file_bytes(cls, data: bytes) -> "KeyPair":
        type_code, body = tlv.unpack_single(data)
        if type_code != KEY_FILE:
            raise UnknownType(f"not a key file (type 0x{type_code:04x})")
        reader = tlv.FieldReader(body, "key file")
        key_id = reader.take_str(F_KEY_ID, minimum=1)
        public = reader.take(F_KEY_PUBLIC, PUBLIC_KEY_SIZE)
        private = reader.take(F_KEY_PRIVATE, 32)
        reader.finish()
        if public_from_private(private) != public:
            raise MalformedField("key file public key does not match private key")
        return cls(key_id, public, private)


class OwnerKeyPair(KeyPair):
    @property
    def owner_id(self) -> str:
        return self.key_id


@dataclass(frozen=True)
class PublisherCertificate:
    publisher_public_key: bytes
    authorized_prefixes: tuple[tuple[str, ...], ...]
    not_before: int
    not_after: int
    owner_id: str
    owner_signature: bytes = b""

    def signed_bytes(self) -> bytes:
        """Canonical encoding of every field preceding the signature."""
        out = [tlv.pack(F_PUBLISHER_KEY, self.publisher_public_key)]
        out += [tlv.pack_str(F_PREFIX, "/".join(p)) for p in self.authorized_prefixes]
        out += [
            tlv.pack_u64(F_NOT_BEFORE, self.not_before),
            tlv.pack_u64(F_NOT_AFTER, self.not_after),
            tlv.pack_str(F_OWNER_ID, self.owner_id),
        ]
        return b"".join(out)

    def encode(self) -> bytes:
        tlv.check_size("certificate publisher key", self.publisher_public_key, PUBLIC_KEY_SIZE)
        tlv.check_size("certificate signature", self.owner_signature, SIGNATURE_SIZE)
        if not self.authorized_prefixes:
            raise EmptyAuthorization("certificate lists no prefixes")
        return tlv.pack(CERTIFICATE, self.signed_bytes() + tlv.pack(F_OWNER_SIGNATURE, self.owner_signature))

    @classmethod
    def decode_value(cls, value: bytes) -> "PublisherCertificate":
        reader = tlv.FieldReader(value, "certificate")
        publisher_key = reader.take(F_PUBLISHER_KEY, PUBLIC_KEY_SIZE)
        prefixes = []
        while reader.peek_type() == F_PREFIX:
            text = reader.take_str(F_PREFIX, minimum=1)
            try:
                prefixes.append(parse_name(text).prefix)
            except ValueError as exc:
                raise MalformedField(f"certificate prefix {text!r}: {exc}") from exc
        if not prefixes:
            raise MalformedField("certificate lists no prefixes")
        not_before = reader.take_u64(F_NOT_BEFORE)
        not_after = reader.take_u64(F_NOT_AFTER)
        owner_id = reader.take_str(F_OWNER_ID, minimum=1)
        signature = reader.take(F_OWNER_SIGNATURE, SIGNATURE_SIZE)
        reader.finish()
        return cls(publisher_key, tuple(prefixes), not_before, not_after, owner_id, signature)

    @classmethod
    def decode(cls, data: bytes) -> "PublisherCertificate":
        type_code, value = tlv.unpack_single(data)
        if type_code != CERTIFICATE:
            raise UnknownType(f"not a certificate (type 0x{type_code:04x})")
        return cls.decode_value(value)


def _prefix_tuple(prefix) -> tuple[str, ...]:
    if isinstance(prefix, ContentName):
        return prefix.prefix
    if isinstance(prefix, str):
        return parse_name(prefix).prefix
    return ContentName(tuple(prefix)).prefix


def issue_certificate(
    owner: KeyPair,
    publisher_pk: bytes,
    prefixes: Iterable,
    validity: Sequence[int],
) -> PublisherCertificate:
    """Sign a certificate authorizing ``publisher_pk`` for ``prefixes``.

    ``prefixes`` may hold :class:`ContentName` objects, label tuples or
    ``/``-joined strings.
    """
    authorized = tuple(_prefix_tuple(p) for p in prefixes)
    if not authorized:
        raise EmptyAuthorization("a certificate must authorize at least one prefix")
    not_before, not_after = validity
    if not not_before < not_after:
        raise InvalidValidityWindow(f"not_before={not_before} must precede not_after={not_after}")
    unsigned = PublisherCertificate(publisher_pk, authorized, int(not_before), int(not_after), owner.key_id)
    signature = owner.sign(unsigned.signed_bytes())
    return PublisherCertificate(publisher_pk, authorized, int(not_before), int(not_after), owner.key_id, signature)


def verify_certificate(cert: PublisherCertificate, owner_pk: bytes, now: int) -> None:
    """Raise unless the owner signature verifies and ``now`` lies inside the window."""
    if not verify(owner_pk, cert.owner_signature, cert.signed_bytes()):
        raise BadSignature(f"certificate signature does not verify for owner {cert.owner_id!r}")
    if now < cert.not_before:
        raise NotYetValid(f"certificate valid from {cert.not_before}, now={now}")
    if now > cert.not_after:
        raise Expired(f"certificate expired at {cert.not_after}, now={now}")


def authorizes(cert: PublisherCertificate, name: ContentName) -> bool:
    return any(name.has_prefix(prefix) for prefix in cert.authorized_prefixes)
