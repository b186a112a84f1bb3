"""Established sessions: record protection, session tickets and migration.

A ticket seals a session's master secret, suite and name under a group ticket
key. Any trusted publisher holding that key can resume the session with a
two-message exchange (SubHello carrying the ticket, PubFinish), mixing fresh
randoms into new traffic keys.
"""

from __future__ import annotations

import enum
import hashlib
import secrets
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import tlv
from .crypto import (
    CipherSuite,
    KeySchedule,
    aead_open,
    aead_seal,
    derive_keys,
    finished_mac,
    get_suite,
    record_nonce,
)
from .errors import (
    AuthFailure,
    ExpiredTicketKey,
    FallbackToFull,
    Replay,
    SequenceExhausted,
    TicketAuthFailure,
    TicketNameMismatch,
    TooEarly,
    UnexpectedMessage,
    UnknownKeyId,
    UnknownType,
    WrongDirection,
)
from .names import ContentName, RandomSource, parse_name, routable, split_wire_name
from .wire import (
    DataRecord,
    Direction,
    Envelope,
    Flags,
    PubFinish,
    SessionTicket,
    SubHello,
    encode_payload,
    pub_finish_body,
    publication,
    subscription,
)

TICKET_CONTENTS = 0x0012
KEY_RING = 0x0021
TICKET_KEY = 0x0022

F_TC_MASTER = 0x0601
F_TC_SUITE = 0x0602
F_TC_NAME = 0x0603
F_TC_ISSUED = 0x0604

F_TK_ID = 0x0801
F_TK_KEY = 0x0802
F_TK_ISSUED = 0x0803
F_TK_LIFETIME = 0x0804

DEFAULT_TICKET_LIFETIME = 12 * 3600
DEFAULT_HISTORY_DEPTH = 2
MAX_SEQ = 2**64 - 1


class Role(enum.Enum):
    SUBSCRIBER = "subscriber"
    PUBLISHER = "publisher"


@dataclass(eq=False)
class EstablishedSession:
    keys: KeySchedule
    suite: CipherSuite
    name: ContentName
    role: Role
    wire_name: str
    session_id: bytes = bytes(32)
    send_seq: int = 0
    # lowest sequence number still acceptable
    recv_seq: int = 0
    ticket: Optional[SessionTicket] = None
    resumed: bool = False

    def resumption(self) -> "ResumptionTicket":
        if self.ticket is None:
            raise ValueError("session holds no ticket")
        return ResumptionTicket(self.ticket, self.keys.master_secret, self.suite.id, self.name.prefix)


@dataclass(frozen=True)
class ResumptionTicket:
    """What a subscriber keeps to resume later: the opaque ticket plus its own copy of the secret."""

    ticket: SessionTicket
    master_secret: bytes = field(repr=False)
    suite_id: int
    prefix: tuple[str, ...]


def _aad(session: EstablishedSession) -> bytes:
    return struct.pack(">H", session.suite.id) + bytes(routable(session.name))


def _direction_keys(session: EstablishedSession, sending: bool) -> tuple[bytes, bytes]:
    k = session.keys
    subscriber_side = (session.role is Role.SUBSCRIBER) == sending
    return (k.subscriber_write_key, k.subscriber_iv) if subscriber_side else (k.publisher_write_key, k.publisher_iv)


def seal_record(session: EstablishedSession, plaintext: bytes) -> Envelope:
    seq = session.send_seq
    if seq >= MAX_SEQ:
        raise SequenceExhausted("send sequence number space is exhausted")
    key, iv = _direction_keys(session, sending=True)
    ciphertext = aead_seal(session.suite, key, record_nonce(iv, seq), plaintext, _aad(session), session.keys.hmac_key)
    session.send_seq = seq + 1
    record = DataRecord(seq, ciphertext)
    fid = routable(session.name)
    if session.role is Role.SUBSCRIBER:
        return subscription(session.wire_name, fid, record, Flags.NON_AGGREGATABLE)
    return publication(session.wire_name, fid, record, Flags.NON_CACHEABLE)


def open_record(session: EstablishedSession, rec: Envelope) -> bytes:
    own = Direction.SUBSCRIPTION if session.role is Role.SUBSCRIBER else Direction.PUBLICATION
    if rec.direction is own:
        raise WrongDirection("record travels in this endpoint's own sending direction")
    if not isinstance(rec.payload, DataRecord):
        raise UnexpectedMessage(f"expected DataRecord, got {type(rec.payload).__name__}")
    # routing metadata is not covered by the AEAD, so pin it to the flow instead
    peer_flags = Flags.NON_CACHEABLE if own is Direction.SUBSCRIPTION else Flags.NON_AGGREGATABLE
    if rec.wire_name != session.wire_name or rec.forwarding_id != routable(session.name) or rec.flags != peer_flags:
        raise AuthFailure("record metadata does not match this session")
    seq = rec.payload.seq
    if seq < session.recv_seq:
        raise Replay(f"record seq {seq} already passed (next acceptable {session.recv_seq})")
    key, iv = _direction_keys(session, sending=False)
    plaintext = aead_open(session.suite, key, record_nonce(iv, seq), rec.payload.ciphertext, _aad(session), session.keys.hmac_key)
    session.recv_seq = seq + 1
    return plaintext


# --- ticket keys ----------------------------------------------------------------


@dataclass(frozen=True)
class TicketKey:
    key_id: bytes
    key: bytes = field(repr=False)
    issued_at: int
    lifetime: int = DEFAULT_TICKET_LIFETIME

    @classmethod
    def generate(cls, now: int, rng: RandomSource = secrets.token_bytes, lifetime: int = DEFAULT_TICKET_LIFETIME) -> "TicketKey":
        return cls(rng(8), rng(16), int(now), lifetime)

    @property
    def expires_at(self) -> int:
        return self.issued_at + self.lifetime

    def can_issue(self, now: int) -> bool:
        return self.issued_at <= now < self.expires_at

    def encode(self) -> bytes:
        body = tlv.pack(F_TK_ID, self.key_id) + tlv.pack(F_TK_KEY, self.key)
        body += tlv.pack_u64(F_TK_ISSUED, self.issued_at) + tlv.pack_u64(F_TK_LIFETIME, self.lifetime)
        return tlv.pack(TICKET_KEY, body)

    @classmethod
    def decode_value(cls, value: bytes) -> "TicketKey":
        r = tlv.FieldReader(value, "ticket key")
        out = cls(r.take(F_TK_ID, 8), r.take(F_TK_KEY, 16), r.take_u64(F_TK_ISSUED), r.take_u64(F_TK_LIFETIME))
        r.finish()
        return out


def encode_key_ring(keys: Sequence[TicketKey]) -> bytes:
    return tlv.pack(KEY_RING, b"".join(k.encode() for k in keys))


def decode_key_ring(data: bytes) -> list[TicketKey]:
    code, body = tlv.unpack_single(data)
    if code != KEY_RING:
        raise UnknownType(f"not a key ring (type 0x{code:04x})")
    out = []
    for entry_code, value in tlv.iter_tlvs(body):
        if entry_code != TICKET_KEY:
            raise UnknownType(f"unexpected entry 0x{entry_code:04x} in key ring")
        out.append(TicketKey.decode_value(value))
    return out


@dataclass
class KeyGenerator:
    """Periodically mints the group ticket key and pushes the ring to every member."""

    members: list[str]
    current: TicketKey
    history: list[TicketKey] = field(default_factory=list)
    depth: int = DEFAULT_HISTORY_DEPTH
    rings: dict[str, list[TicketKey]] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def create(cls, members: Sequence[str], now: int, rng: RandomSource = secrets.token_bytes, lifetime: int = DEFAULT_TICKET_LIFETIME) -> "KeyGenerator":
        gen = cls(list(members), TicketKey.generate(now, rng, lifetime))
        gen.distribute()
        return gen

    def ring(self) -> list[TicketKey]:
        return [self.current, *self.history]

    def distribute(self) -> None:
        ring = tuple(self.ring())
        # rebinding each member list at once stands in for an atomic epoch swap
        self.rings = {m: list(ring) for m in self.members}

    def ring_for(self, member: str) -> list[TicketKey]:
        return self.rings.get(member, [])


def rotate(gen: KeyGenerator, now: int, rng: RandomSource = secrets.token_bytes) -> TicketKey:
    with gen._lock:
        if now < gen.current.expires_at:
            raise TooEarly(f"current ticket key valid until {gen.current.expires_at}, now={now}")
        fresh = TicketKey.generate(now, rng, gen.current.lifetime)
        gen.history = [gen.current, *gen.history][: gen.depth]
        gen.current = fresh
        gen.distribute()
        return fresh


# --- tickets --------------------------------------------------------------------


@dataclass(frozen=True)
class TicketContents:
    master_secret: bytes = field(repr=False)
    suite_id: int
    prefix: tuple[str, ...]
    issued_at: int


def _ticket_aad(key_id: bytes) -> bytes:
    return b"icn ticket" + key_id


def issue_ticket(session: EstablishedSession, tk: TicketKey, now: int, rng: RandomSource = secrets.token_bytes) -> SessionTicket:
    if not tk.can_issue(now):
        raise ExpiredTicketKey(f"ticket key {tk.key_id.hex()} cannot issue at {now}")
    plain = tlv.pack(
        TICKET_CONTENTS,
        tlv.pack(F_TC_MASTER, session.keys.master_secret)
        + tlv.pack_u16(F_TC_SUITE, session.suite.id)
        + tlv.pack_str(F_TC_NAME, str(session.name))
        + tlv.pack_u64(F_TC_ISSUED, int(now)),
    )
    nonce = rng(12)
    sealed = aead_seal(get_suite(0x1301), tk.key, nonce, plain, _ticket_aad(tk.key_id))
    return SessionTicket(tk.key_id, nonce, sealed)


def open_ticket_with(ticket: SessionTicket, tk: TicketKey) -> TicketContents:
    try:
        plain = aead_open(get_suite(0x1301), tk.key, ticket.nonce, ticket.sealed, _ticket_aad(ticket.key_id))
    except AuthFailure:
        raise TicketAuthFailure(f"ticket {ticket.key_id.hex()} does not open under key {tk.key_id.hex()}") from None
    code, value = tlv.unpack_single(plain)
    if code != TICKET_CONTENTS:
        raise TicketAuthFailure("ticket plaintext has the wrong type")
    r = tlv.FieldReader(value, "ticket contents")
    master = r.take(F_TC_MASTER, 48)
    suite_id = r.take_u16(F_TC_SUITE)
    prefix = parse_name(r.take_str(F_TC_NAME, minimum=1)).prefix
    issued = r.take_u64(F_TC_ISSUED)
    r.finish()
    return TicketContents(master, suite_id, prefix, issued)


def open_ticket(ticket: SessionTicket, key_ring: Sequence[TicketKey]) -> TicketContents:
    for tk in key_ring:
        if tk.key_id == ticket.key_id:
            return open_ticket_with(ticket, tk)
    raise UnknownKeyId(f"no ticket key with id {ticket.key_id.hex()}")


def compromise_demo(ticket: SessionTicket, stolen: TicketKey) -> bytes:
    """Recover a ticketed session's master secret from a stolen ticket key.

    Exists to show that ticketing trades away forward secrecy for every
    session whose ticket was sealed under the stolen key.
    """
    return open_ticket_with(ticket, stolen).master_secret


# --- resumption -----------------------------------------------------------------


def resumption_keys(master_secret: bytes, hello: SubHello, server_random: bytes, suite: CipherSuite) -> tuple[KeySchedule, "hashlib._Hash"]:
    """Fresh schedule for a resumed session plus the running transcript it was bound to."""
    transcript = hashlib.sha256(encode_payload(hello))
    bound = transcript.copy()
    bound.update(server_random)
    return derive_keys(master_secret, hello.client_random, server_random, bound.digest(), suite), transcript


def pub_finished_mac(keys: KeySchedule, transcript: "hashlib._Hash", fin: PubFinish) -> bytes:
    t = transcript.copy()
    t.update(pub_finish_body(fin))
    return finished_mac(keys.finished_key(subscriber=False), t.digest())


def resume(
    hello: Envelope,
    key_ring: Sequence[TicketKey],
    now: int,
    rng: RandomSource = secrets.token_bytes,
    issue_new: bool = True,
) -> tuple[EstablishedSession, Envelope]:
    """Publisher side of the abbreviated handshake.

    Raises :class:`FallbackToFull` when this publisher does not hold the
    ticket's key (or cannot use its suite); the caller then answers with a
    full server flight.
    """
    payload = hello.payload
    if not isinstance(payload, SubHello) or payload.ticket is None:
        raise UnexpectedMessage("resume needs a SubHello carrying a ticket")
    name = split_wire_name(hello.wire_name, payload.binding)
    try:
        contents = open_ticket(payload.ticket, key_ring)
    except UnknownKeyId as exc:
        raise FallbackToFull(str(exc)) from exc
    if contents.prefix != name.prefix:
        raise TicketNameMismatch(f"ticket is for {'/'.join(contents.prefix)!r}, hello asks for {str(name)!r}")
    if contents.suite_id not in payload.offered_suites:
        raise FallbackToFull(f"ticket suite 0x{contents.suite_id:04x} not offered")
    suite = get_suite(contents.suite_id)
    server_random = rng(32)
    keys, transcript = resumption_keys(contents.master_secret, payload, server_random, suite)
    session = EstablishedSession(keys, suite, name, Role.PUBLISHER, hello.wire_name, resumed=True)
    new_ticket = None
    if issue_new and key_ring and key_ring[0].can_issue(now):
        new_ticket = issue_ticket(session, key_ring[0], now, rng)
        session.ticket = new_ticket
    unsigned = PubFinish(bytes(32), server_random, new_ticket)
    fin = PubFinish(pub_finished_mac(keys, transcript, unsigned), server_random, new_ticket)
    return session, publication(hello.wire_name, routable(name), fin)
