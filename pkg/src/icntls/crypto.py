"""Cipher suites, the key schedule and record-protection primitives.

Only ephemeral X25519 suites exist in the registry, so a static key exchange
cannot be represented. Two record protections are available: AES-128-GCM, and
an unauthenticated AES-128-CTR paired with HMAC-SHA-256, the latter being the
only case where the schedule carries an HMAC key.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AuthFailure, NoEphemeralSuite, ZeroSharedSecret
from .names import ForwardingId

KEX_X25519 = "x25519"
AEAD_AES128_GCM = "aes-128-gcm"
AEAD_AES128_CTR_HMAC = "aes-128-ctr+hmac-sha256"
HASH_SHA256 = "sha256"

MASTER_SECRET_SIZE = 48
IV_SIZE = 12
HMAC_TAG_SIZE = 32

LABEL_MASTER = b"icn master"
LABEL_SUB_WRITE = b"sub write"
LABEL_PUB_WRITE = b"pub write"
LABEL_HMAC = b"icn hmac"
LABEL_SUB_FINISHED = b"sub finished"
LABEL_PUB_FINISHED = b"pub finished"

TBS_CONTEXT = b"icn-tls server key exchange\x00"


@dataclass(frozen=True)
class CipherSuite:
    id: int
    kex: str
    aead: str
    hash: str
    key_size: int = 16

    @property
    def authenticated(self) -> bool:
        """True when the AEAD authenticates on its own (no HMAC key needed)."""
        return self.aead == AEAD_AES128_GCM


X25519_AES128GCM_SHA256 = CipherSuite(0x1301, KEX_X25519, AEAD_AES128_GCM, HASH_SHA256)
X25519_AES128CTR_HMAC_SHA256 = CipherSuite(0x13A1, KEX_X25519, AEAD_AES128_CTR_HMAC, HASH_SHA256)

SUITES = {s.id: s for s in (X25519_AES128GCM_SHA256, X25519_AES128CTR_HMAC_SHA256)}
DEFAULT_SUITES = (X25519_AES128GCM_SHA256.id,)


def get_suite(suite_id: int) -> CipherSuite:
    try:
        return SUITES[suite_id]
    except KeyError:
        raise NoEphemeralSuite(f"suite 0x{suite_id:04x} is not an ephemeral (EC)DHE suite") from None


# --- key exchange -------------------------------------------------------------


def x25519_public(secret: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(bytes(secret)).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def x25519_shared(secret: bytes, peer_public: bytes) -> bytes:
    try:
        shared = X25519PrivateKey.from_private_bytes(bytes(secret)).exchange(X25519PublicKey.from_public_bytes(peer_public))
    except ValueError as exc:
        # the library refuses low-order points that produce an all-zero secret
        raise ZeroSharedSecret(str(exc)) from exc
    if not any(shared):
        raise ZeroSharedSecret("degenerate Diffie-Hellman result")
    return shared


def zeroize(buf: Optional[bytearray]) -> None:
    if buf is not None:
        for i in range(len(buf)):
            buf[i] = 0


# --- key schedule -------------------------------------------------------------


def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    return hmac.digest(salt, ikm, "sha256")


def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    return HKDFExpand(hashes.SHA256(), length, info).derive(prk)


@dataclass(frozen=True)
class KeySchedule:
    master_secret: bytes = field(repr=False)
    subscriber_write_key: bytes = field(repr=False)
    publisher_write_key: bytes = field(repr=False)
    subscriber_iv: bytes = field(repr=False)
    publisher_iv: bytes = field(repr=False)
    hmac_key: Optional[bytes] = field(default=None, repr=False)

    def fingerprint(self) -> str:
        """Short public digest for logs and demos; never the keys themselves."""
        return hashlib.sha256(b"fingerprint" + self.master_secret).hexdigest()[:16]

    def finished_key(self, subscriber: bool) -> bytes:
        return hkdf_expand(self.master_secret, LABEL_SUB_FINISHED if subscriber else LABEL_PUB_FINISHED, 32)

    def fields(self) -> dict[str, bytes]:
        out = {
            "master_secret": self.master_secret,
            "subscriber_write_key": self.subscriber_write_key,
            "publisher_write_key": self.publisher_write_key,
            "subscriber_iv": self.subscriber_iv,
            "publisher_iv": self.publisher_iv,
        }
        if self.hmac_key is not None:
            out["hmac_key"] = self.hmac_key
        return out


def schedule_from_master(master_secret: bytes, suite: CipherSuite) -> KeySchedule:
    """Expand directional traffic keys from a master secret."""
    size = suite.key_size + IV_SIZE
    sub = hkdf_expand(master_secret, LABEL_SUB_WRITE, size)
    pub = hkdf_expand(master_secret, LABEL_PUB_WRITE, size)
    hmac_key = None if suite.authenticated else hkdf_expand(master_secret, LABEL_HMAC, 32)
    k = suite.key_size
    return KeySchedule(master_secret, sub[:k], pub[:k], sub[k:], pub[k:], hmac_key)


def derive_keys(
    shared_secret: bytes,
    client_random: bytes,
    server_random: bytes,
    transcript_hash: bytes,
    suite: CipherSuite,
) -> KeySchedule:
    """HKDF extract over the randoms, then expand the master and directional keys.

    The transcript hash is mixed into the master secret so that both sides only
    agree when they saw the same handshake bytes.
    """
    if not any(shared_secret):
        raise ZeroSharedSecret("shared secret is all zero")
    prk = hkdf_extract(client_random + server_random, shared_secret)
    master = hkdf_expand(prk, LABEL_MASTER + transcript_hash, MASTER_SECRET_SIZE)
    return schedule_from_master(master, suite)


def finished_mac(key: bytes, transcript_hash: bytes) -> bytes:
    return hmac.digest(key, transcript_hash, "sha256")


def mac_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


# --- signed server key exchange ------------------------------------------------


def to_be_signed(
    client_random: bytes,
    server_random: bytes,
    ephemeral_public: bytes,
    suite_id: int,
    forwarding_id: ForwardingId,
) -> bytes:
    """Bytes the publisher (or its delegate) signs in the server flight.

    A fixed context string and the length-prefixed forwarding id precede the
    digest, so a signer that never sees the handshake can still check what
    name it is vouching for.
    """
    fid = bytes(forwarding_id)
    digest = hashlib.sha256(client_random + server_random + ephemeral_public + struct.pack(">H", suite_id) + fid).digest()
    return TBS_CONTEXT + struct.pack(">H", len(fid)) + fid + digest


def parse_to_be_signed(data: bytes) -> Optional[bytes]:
    """Return the embedded forwarding id, or ``None`` if ``data`` is not a well-formed tuple."""
    n = len(TBS_CONTEXT)
    if len(data) < n + 2 + 32 or data[:n] != TBS_CONTEXT:
        return None
    (fid_len,) = struct.unpack_from(">H", data, n)
    if len(data) != n + 2 + fid_len + 32 or fid_len == 0:
        return None
    return data[n + 2 : n + 2 + fid_len]


# --- record protection --------------------------------------------------------


def record_nonce(iv: bytes, seq: int) -> bytes:
    return bytes(a ^ b for a, b in zip(iv, seq.to_bytes(IV_SIZE, "big")))


def aead_seal(suite: CipherSuite, key: bytes, nonce: bytes, plaintext: bytes, aad: bytes, hmac_key: Optional[bytes] = None) -> bytes:
    if suite.authenticated:
        return AESGCM(key).encrypt(nonce, plaintext, aad)
    encryptor = Cipher(algorithms.AES(key), modes.CTR(nonce + bytes(4))).encryptor()
    body = encryptor.update(plaintext) + encryptor.finalize()
    tag = hmac.digest(hmac_key, aad + nonce + body, "sha256")
    return body + tag


def aead_open(suite: CipherSuite, key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes, hmac_key: Optional[bytes] = None) -> bytes:
    if suite.authenticated:
        try:
            return AESGCM(key).decrypt(nonce, ciphertext, aad)
        except InvalidTag:
            raise AuthFailure("record authentication failed") from None
    if len(ciphertext) < HMAC_TAG_SIZE:
        raise AuthFailure("record shorter than its tag")
    body, tag = ciphertext[:-HMAC_TAG_SIZE], ciphertext[-HMAC_TAG_SIZE:]
    if not hmac.compare_digest(tag, hmac.digest(hmac_key, aad + nonce + body, "sha256")):
        raise AuthFailure("record authentication failed")
    decryptor = Cipher(algorithms.AES(key), modes.CTR(nonce + bytes(4))).decryptor()
    return decryptor.update(body) + decryptor.finalize()
