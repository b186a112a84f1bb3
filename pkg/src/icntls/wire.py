"""Bit-exact encoding of subscriptions, publications and their payloads.

Every object is a TLV (big-endian u16 type, u32 length, value). The envelope is
type 0x0001 and carries, in order: direction, wire name, forwarding id, flags
and exactly one payload TLV (0x0101..0x0108). Composite values are sequences of
field TLVs in a fixed order; optional fields are simply omitted.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional, Union

from . import tlv
from .credentials import CERTIFICATE, PublisherCertificate
from .errors import MalformedField, UnknownType, WireError
from .names import (
    EMPTY_SESSION_ID,
    NONCE_SIZE,
    SESSION_ID_SIZE,
    BindingKind,
    ContentName,
    ForwardingId,
    HandshakeBinding,
    parse_name,
)

ENVELOPE = 0x0001
TICKET = 0x0011

SUB_HELLO = 0x0101
PUB_HELLO = 0x0102
SUB_FINISH = 0x0103
PUB_FINISH = 0x0104
DATA_RECORD = 0x0105
SIG_REQUEST = 0x0106
SIG_RESPONSE = 0x0107
ALERT = 0x0108

F_DIRECTION = 0x0201
F_WIRE_NAME = 0x0202
F_FORWARDING_ID = 0x0203
F_FLAGS = 0x0204

F_CLIENT_RANDOM = 0x0301
F_SERVER_RANDOM = 0x0302
F_SUITES = 0x0303
F_CHOSEN_SUITE = 0x0304
F_BINDING = 0x0305
F_EPHEMERAL = 0x0306
F_TRANSCRIPT_SIG = 0x0307
F_SESSION_ID = 0x0308
F_CERT_REQUEST = 0x0309
F_FINISHED_MAC = 0x030A
F_SEQ = 0x030B
F_CIPHERTEXT = 0x030C
F_NAME = 0x030D
F_NAME_SUFFIX = 0x030E
F_TO_BE_SIGNED = 0x030F
F_SIGNATURE = 0x0310
F_ALERT_CODE = 0x0311
F_ALERT_REASON = 0x0312

F_TICKET_KEY_ID = 0x0501
F_TICKET_NONCE = 0x0502
F_TICKET_SEALED = 0x0503

RANDOM_SIZE = 32
EPHEMERAL_SIZE = 32
SIGNATURE_SIZE = 64
MAC_SIZE = 32
TICKET_KEY_ID_SIZE = 8
TICKET_NONCE_SIZE = 12
AEAD_TAG_SIZE = 16


class Direction(enum.IntEnum):
    SUBSCRIPTION = 0
    PUBLICATION = 1


class Flags(enum.IntFlag):
    NONE = 0
    NON_AGGREGATABLE = 0x01
    NON_CACHEABLE = 0x02


class AlertCode(enum.IntEnum):
    REFUSED = 1
    UNKNOWN_MIDDLEBOX = 2
    BAD_REQUEST = 3
    HANDSHAKE_FAILURE = 4
    NOT_AUTHORIZED = 5


@dataclass(frozen=True)
class SessionTicket:
    key_id: bytes
    nonce: bytes
    sealed: bytes

    def encode(self) -> bytes:
        tlv.check_size("ticket key_id", self.key_id, TICKET_KEY_ID_SIZE)
        tlv.check_size("ticket nonce", self.nonce, TICKET_NONCE_SIZE)
        tlv.check_size("ticket ciphertext", self.sealed, minimum=AEAD_TAG_SIZE)
        body = tlv.pack(F_TICKET_KEY_ID, self.key_id) + tlv.pack(F_TICKET_NONCE, self.nonce) + tlv.pack(F_TICKET_SEALED, self.sealed)
        return tlv.pack(TICKET, body)

    @classmethod
    def decode_value(cls, value: bytes) -> "SessionTicket":
        reader = tlv.FieldReader(value, "ticket")
        key_id = reader.take(F_TICKET_KEY_ID, TICKET_KEY_ID_SIZE)
        nonce = reader.take(F_TICKET_NONCE, TICKET_NONCE_SIZE)
        sealed = reader.take(F_TICKET_SEALED, minimum=AEAD_TAG_SIZE)
        reader.finish()
        return cls(key_id, nonce, sealed)


@dataclass(frozen=True)
class SubHello:
    client_random: bytes
    offered_suites: tuple[int, ...]
    binding: HandshakeBinding
    ticket: Optional[SessionTicket] = None


@dataclass(frozen=True)
class PubHello:
    server_random: bytes
    chosen_suite: int
    certificate: PublisherCertificate
    ephemeral_public: bytes
    transcript_signature: bytes
    session_id: bytes
    # client authentication is never used; must stay False
    certificate_request_flag: bool = False


@dataclass(frozen=True)
class SubFinish:
    ephemeral_public: bytes
    finished_mac: bytes
    binding: HandshakeBinding


@dataclass(frozen=True)
class PubFinish:
    finished_mac: bytes
    server_random: Optional[bytes] = None  # resumption only
    ticket: Optional[SessionTicket] = None


@dataclass(frozen=True)
class DataRecord:
    seq: int
    ciphertext: bytes


@dataclass(frozen=True)
class SigRequest:
    name: ContentName
    to_be_signed: bytes


@dataclass(frozen=True)
class SigResponse:
    signature: bytes


@dataclass(frozen=True)
class Alert:
    code: int
    reason: str = ""


Payload = Union[SubHello, PubHello, SubFinish, PubFinish, DataRecord, SigRequest, SigResponse, Alert]

PAYLOAD_CODES = {
    SubHello: SUB_HELLO,
    PubHello: PUB_HELLO,
    SubFinish: SUB_FINISH,
    PubFinish: PUB_FINISH,
    DataRecord: DATA_RECORD,
    SigRequest: SIG_REQUEST,
    SigResponse: SIG_RESPONSE,
    Alert: ALERT,
}

HANDSHAKE_SUBSCRIPTIONS = (SubHello, SubFinish)
HANDSHAKE_PUBLICATIONS = (PubHello, PubFinish)

_DIRECTION_FLAG = {Direction.SUBSCRIPTION: Flags.NON_AGGREGATABLE, Direction.PUBLICATION: Flags.NON_CACHEABLE}


class InvalidEnvelope(MalformedField):
    pass


@dataclass(frozen=True)
class Envelope:
    direction: Direction
    wire_name: str
    forwarding_id: ForwardingId
    flags: Flags
    payload: Payload

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "flags", Flags(self.flags))
        object.__setattr__(self, "forwarding_id", ForwardingId(self.forwarding_id))
        allowed = _DIRECTION_FLAG[self.direction]
        if self.flags & ~allowed:
            raise InvalidEnvelope(f"flags {self.flags!r} not valid on a {self.direction.name.lower()}")
        if isinstance(self.payload, HANDSHAKE_SUBSCRIPTIONS + HANDSHAKE_PUBLICATIONS):
            expected = Direction.SUBSCRIPTION if isinstance(self.payload, HANDSHAKE_SUBSCRIPTIONS) else Direction.PUBLICATION
            if self.direction is not expected or self.flags != allowed:
                raise InvalidEnvelope(f"{type(self.payload).__name__} must be a {expected.name.lower()} flagged {allowed.name}")
        parse_name(self.wire_name)
        fid = bytes(self.forwarding_id).decode("utf-8", errors="strict") if self.forwarding_id else ""
        # the wire name may extend the routable prefix by one discriminator label
        rest = self.wire_name[len(fid) :]
        if not fid or not self.wire_name.startswith(fid) or not (rest == "" or (rest.startswith("/") and "/" not in rest[1:] and len(rest) > 1)):
            raise InvalidEnvelope(f"forwarding id {fid!r} does not route wire name {self.wire_name!r}")

    @property
    def is_handshake(self) -> bool:
        return isinstance(self.payload, HANDSHAKE_SUBSCRIPTIONS + HANDSHAKE_PUBLICATIONS)


def subscription(wire_name: str, forwarding_id: bytes, payload: Payload, flags: Flags = Flags.NON_AGGREGATABLE) -> Envelope:
    return Envelope(Direction.SUBSCRIPTION, wire_name, ForwardingId(forwarding_id), flags, payload)


def publication(wire_name: str, forwarding_id: bytes, payload: Payload, flags: Flags = Flags.NON_CACHEABLE) -> Envelope:
    return Envelope(Direction.PUBLICATION, wire_name, ForwardingId(forwarding_id), flags, payload)


# --- encoding ---------------------------------------------------------------


def _binding_bytes(binding: HandshakeBinding) -> bytes:
    return bytes([binding.kind]) + binding.value


def _parse_binding(raw: bytes) -> HandshakeBinding:
    if not raw:
        raise tlv.BadFieldLength("binding: empty")
    try:
        kind = BindingKind(raw[0])
    except ValueError as exc:
        raise MalformedField(f"binding kind {raw[0]}") from exc
    size = NONCE_SIZE if kind is BindingKind.NONCE else SESSION_ID_SIZE
    tlv.check_size(f"{kind.name} binding", raw[1:], size)
    return HandshakeBinding(kind, raw[1:])


def _encode_fields(payload: Payload) -> bytes:
    c = tlv.check_size
    if isinstance(payload, SubHello):
        if not payload.offered_suites:
            raise tlv.BadFieldLength("SubHello offers no suites")
        out = tlv.pack(F_CLIENT_RANDOM, c("client_random", payload.client_random, RANDOM_SIZE))
        out += tlv.pack(F_SUITES, b"".join(struct.pack(">H", s) for s in payload.offered_suites))
        out += tlv.pack(F_BINDING, _binding_bytes(payload.binding))
        if payload.ticket is not None:
            out += payload.ticket.encode()
        return out
    if isinstance(payload, PubHello):
        if payload.certificate_request_flag:
            raise MalformedField("certificate_request_flag must be false")
        return b"".join(
            [
                tlv.pack(F_SERVER_RANDOM, c("server_random", payload.server_random, RANDOM_SIZE)),
                tlv.pack_u16(F_CHOSEN_SUITE, payload.chosen_suite),
                payload.certificate.encode(),
                tlv.pack(F_EPHEMERAL, c("ephemeral_public", payload.ephemeral_public, EPHEMERAL_SIZE)),
                tlv.pack(F_TRANSCRIPT_SIG, c("transcript_signature", payload.transcript_signature, SIGNATURE_SIZE)),
                tlv.pack(F_SESSION_ID, c("session_id", payload.session_id, SESSION_ID_SIZE)),
                tlv.pack_u8(F_CERT_REQUEST, 0),
            ]
        )
    if isinstance(payload, SubFinish):
        return (
            tlv.pack(F_EPHEMERAL, c("ephemeral_public", payload.ephemeral_public, EPHEMERAL_SIZE))
            + tlv.pack(F_FINISHED_MAC, c("finished_mac", payload.finished_mac, MAC_SIZE))
            + tlv.pack(F_BINDING, _binding_bytes(payload.binding))
        )
    if isinstance(payload, PubFinish):
        return tlv.pack(F_FINISHED_MAC, c("finished_mac", payload.finished_mac, MAC_SIZE)) + pub_finish_body(payload)
    if isinstance(payload, DataRecord):
        if not 0 <= payload.seq < 2**64:
            raise MalformedField(f"record seq {payload.seq} out of range")
        return tlv.pack_u64(F_SEQ, payload.seq) + tlv.pack(F_CIPHERTEXT, payload.ciphertext)
    if isinstance(payload, SigRequest):
        out = tlv.pack_str(F_NAME, str(payload.name))
        if payload.name.suffix is not None:
            out += tlv.pack(F_NAME_SUFFIX, payload.name.suffix)
        return out + tlv.pack(F_TO_BE_SIGNED, c("to_be_signed", payload.to_be_signed, minimum=1))
    if isinstance(payload, SigResponse):
        return tlv.pack(F_SIGNATURE, c("signature", payload.signature, SIGNATURE_SIZE))
    if isinstance(payload, Alert):
        return tlv.pack_u16(F_ALERT_CODE, payload.code) + tlv.pack_str(F_ALERT_REASON, payload.reason)
    raise UnknownType(f"not a payload: {type(payload).__name__}")


def pub_finish_body(payload: PubFinish) -> bytes:
    """The PubFinish fields covered by its own finished MAC."""
    out = b""
    if payload.server_random is not None:
        out += tlv.pack(F_SERVER_RANDOM, tlv.check_size("server_random", payload.server_random, RANDOM_SIZE))
    if payload.ticket is not None:
        out += payload.ticket.encode()
    return out


def encode_payload(payload: Payload) -> bytes:
    return tlv.pack(PAYLOAD_CODES[type(payload)], _encode_fields(payload))


def encode(env: Envelope) -> bytes:
    body = b"".join(
        [
            tlv.pack_u8(F_DIRECTION, env.direction),
            tlv.pack_str(F_WIRE_NAME, env.wire_name),
            tlv.pack(F_FORWARDING_ID, bytes(env.forwarding_id)),
            tlv.pack_u8(F_FLAGS, env.flags),
            encode_payload(env.payload),
        ]
    )
    return tlv.pack(ENVELOPE, body)


# --- decoding ---------------------------------------------------------------


def _decode_fields(code: int, value: bytes) -> Payload:
    r = tlv.FieldReader(value, f"payload 0x{code:04x}")
    if code == SUB_HELLO:
        client_random = r.take(F_CLIENT_RANDOM, RANDOM_SIZE)
        raw_suites = r.take(F_SUITES, minimum=2)
        if len(raw_suites) % 2:
            raise tlv.BadFieldLength("suite list has odd length")
        suites = tuple(struct.unpack(f">{len(raw_suites) // 2}H", raw_suites))
        binding = _parse_binding(r.take(F_BINDING))
        raw_ticket = r.optional(TICKET)
        ticket = SessionTicket.decode_value(raw_ticket) if raw_ticket is not None else None
        out: Payload = SubHello(client_random, suites, binding, ticket)
    elif code == PUB_HELLO:
        server_random = r.take(F_SERVER_RANDOM, RANDOM_SIZE)
        suite = r.take_u16(F_CHOSEN_SUITE)
        cert = PublisherCertificate.decode_value(r.take(CERTIFICATE))
        eph = r.take(F_EPHEMERAL, EPHEMERAL_SIZE)
        sig = r.take(F_TRANSCRIPT_SIG, SIGNATURE_SIZE)
        session_id = r.take(F_SESSION_ID, SESSION_ID_SIZE)
        if r.take_u8(F_CERT_REQUEST) != 0:
            raise MalformedField("certificate_request_flag must be false")
        out = PubHello(server_random, suite, cert, eph, sig, session_id, False)
    elif code == SUB_FINISH:
        eph = r.take(F_EPHEMERAL, EPHEMERAL_SIZE)
        mac = r.take(F_FINISHED_MAC, MAC_SIZE)
        out = SubFinish(eph, mac, _parse_binding(r.take(F_BINDING)))
    elif code == PUB_FINISH:
        mac = r.take(F_FINISHED_MAC, MAC_SIZE)
        server_random = r.optional(F_SERVER_RANDOM, RANDOM_SIZE)
        raw_ticket = r.optional(TICKET)
        ticket = SessionTicket.decode_value(raw_ticket) if raw_ticket is not None else None
        out = PubFinish(mac, server_random, ticket)
    elif code == DATA_RECORD:
        out = DataRecord(r.take_u64(F_SEQ), r.take(F_CIPHERTEXT))
    elif code == SIG_REQUEST:
        text = r.take_str(F_NAME, minimum=1)
        suffix = r.optional(F_NAME_SUFFIX)
        try:
            name = ContentName(parse_name(text).prefix, suffix)
        except ValueError as exc:
            raise MalformedField(f"SigRequest name {text!r}: {exc}") from exc
        out = SigRequest(name, r.take(F_TO_BE_SIGNED, minimum=1))
    elif code == SIG_RESPONSE:
        out = SigResponse(r.take(F_SIGNATURE, SIGNATURE_SIZE))
    elif code == ALERT:
        out = Alert(r.take_u16(F_ALERT_CODE), r.take_str(F_ALERT_REASON))
    else:
        raise UnknownType(f"unknown payload type 0x{code:04x}")
    r.finish()
    return out


def decode_payload(data: bytes) -> Payload:
    code, value = tlv.unpack_single(data)
    return _decode_fields(code, value)


def decode(data: bytes) -> Envelope:
    code, body = tlv.unpack_single(data)
    if code != ENVELOPE:
        raise UnknownType(f"unknown top-level type 0x{code:04x}")
    r = tlv.FieldReader(body, "envelope")
    raw_direction = r.take_u8(F_DIRECTION)
    wire_name = r.take_str(F_WIRE_NAME, minimum=1)
    fid = r.take(F_FORWARDING_ID, minimum=1)
    raw_flags = r.take_u8(F_FLAGS)
    payload_code, payload_value, r.pos = tlv.read_one(r.data, r.pos)
    payload = _decode_fields(payload_code, payload_value)
    r.finish()
    try:
        direction = Direction(raw_direction)
        flags = Flags(raw_flags)
        return Envelope(direction, wire_name, ForwardingId(fid), flags, payload)
    except WireError:
        raise
    except ValueError as exc:
        raise MalformedField(str(exc)) from exc


__all__ = [
    "EMPTY_SESSION_ID",
    "Alert",
    "AlertCode",
    "DataRecord",
    "Direction",
    "Envelope",
    "Flags",
    "PubFinish",
    "PubHello",
    "SessionTicket",
    "SigRequest",
    "SigResponse",
    "SubFinish",
    "SubHello",
    "decode",
    "decode_payload",
    "encode",
    "encode_payload",
    "publication",
    "subscription",
]
