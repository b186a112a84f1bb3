"""Delegated signing for regular publishers (middleboxes).

A middlebox holds the trusted publisher's certificate but not its private
key. To answer a subscriber it builds the whole server flight itself and asks
the trusted publisher, over one long-lived secure channel, to sign the
key-exchange tuple. The trusted publisher applies its policy per request,
counts granted requests per name, and may refuse at any time. Subscribers run
the ordinary handshake and cannot tell the difference.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence, Union

from . import tlv
from .credentials import KeyPair, PublisherCertificate, TrustStore, authorizes, verify
from .crypto import DEFAULT_SUITES, parse_to_be_signed
from .errors import (
    AuthFailure,
    BadDelegatedSignature,
    MalformedField,
    NoContent,
    NoDownstream,
    NoUpstreamChannel,
    Refused,
    SignerRefused,
    UnexpectedMessage,
    UnknownMiddlebox,
    UnknownType,
    UpstreamAuthFailure,
)
from .handshake import (
    HandshakeState,
    PendingFlight,
    StateStore,
    TranscriptSigner,
    finish_flight,
    hello_name,
    prepare_flight,
    publisher_complete,
    subscriber_process_flight,
    subscriber_start,
    subscriber_verify_finish,
)
from .names import ContentName, RandomSource, parse_name, routable
from .session import EstablishedSession, open_record, seal_record
from .wire import Alert, AlertCode, Envelope, SigRequest, SigResponse, decode_payload, encode_payload

if TYPE_CHECKING:
    from .nodes import TrustedPublisher

POLICY_FILE = 0x0023
CHANNEL_AUTH = 0x0024

F_POLICY_ENABLED = 0x0901
F_POLICY_DENY = 0x0902
F_POLICY_ALLOW = 0x0903
F_AUTH_KEY = 0x0A01
F_AUTH_SIG = 0x0A02

CHANNEL_LABEL = "_delegation"
CHANNEL_AUTH_CONTEXT = b"icn middlebox channel\x00"

SignatureReply = Union[SigResponse, Alert]


@dataclass
class SigningPolicy:
    deny_prefixes: list[tuple[str, ...]] = field(default_factory=list)
    allow_middleboxes: set[bytes] = field(default_factory=set)
    enabled: bool = True

    def denies(self, name: ContentName) -> bool:
        return any(name.has_prefix(p) for p in self.deny_prefixes)

    def encode(self) -> bytes:
        body = tlv.pack_u8(F_POLICY_ENABLED, int(self.enabled))
        body += b"".join(tlv.pack_str(F_POLICY_DENY, "/".join(p)) for p in self.deny_prefixes)
        body += b"".join(tlv.pack(F_POLICY_ALLOW, k) for k in sorted(self.allow_middleboxes))
        return tlv.pack(POLICY_FILE, body)

    @classmethod
    def decode(cls, data: bytes) -> "SigningPolicy":
        code, body = tlv.unpack_single(data)
        if code != POLICY_FILE:
            raise UnknownType(f"not a policy file (type 0x{code:04x})")
        r = tlv.FieldReader(body, "policy")
        enabled = r.take_u8(F_POLICY_ENABLED)
        if enabled not in (0, 1):
            raise MalformedField("policy enabled flag must be 0 or 1")
        deny = []
        while r.peek_type() == F_POLICY_DENY:
            deny.append(parse_name(r.take_str(F_POLICY_DENY, minimum=1)).prefix)
        allow = set()
        while r.peek_type() == F_POLICY_ALLOW:
            allow.add(r.take(F_POLICY_ALLOW, 32))
        r.finish()
        return cls(deny, allow, bool(enabled))


@dataclass
class AccessStats:
    """Granted signature requests per content prefix."""

    counts: dict[tuple[str, ...], int] = field(default_factory=dict)

    def record(self, name: ContentName) -> None:
        self.counts[name.prefix] = self.counts.get(name.prefix, 0) + 1

    def __getitem__(self, name: ContentName) -> int:
        return self.counts.get(name.prefix, 0)

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(eq=False)
class DelegationChannel:
    """Trusted-publisher view of a middlebox channel."""

    session: EstablishedSession
    middlebox_key: Optional[bytes] = None


@dataclass(eq=False)
class MiddleboxNode:
    held_certificate: PublisherCertificate
    middlebox_keypair: KeyPair = field(repr=False)
    trust_store: TrustStore
    suites: Sequence[int] = DEFAULT_SUITES
    upstream_session: Optional[EstablishedSession] = None
    content_store: dict[tuple[str, ...], bytes] = field(default_factory=dict)
    downstream_sessions: dict[bytes, EstablishedSession] = field(default_factory=dict)
    upstream_reachable: bool = True
    store: StateStore = field(default_factory=StateStore)
    outstanding: list[PendingFlight] = field(default_factory=list)
    fetching: dict[tuple[str, ...], HandshakeState] = field(default_factory=dict)
    upstream_content: dict[tuple[str, ...], EstablishedSession] = field(default_factory=dict)
    received: dict[tuple[str, ...], list[bytes]] = field(default_factory=dict)
    channel_state: Optional[HandshakeState] = None

    def channel_name(self) -> ContentName:
        return ContentName(self.held_certificate.authorized_prefixes[0] + (CHANNEL_LABEL,))


# --- channel bootstrap ------------------------------------------------------------


def channel_binding(session: EstablishedSession) -> bytes:
    """Value both ends derive from the channel's master secret."""
    return hmac.digest(session.keys.master_secret, b"icn mb channel binding", "sha256")


def channel_auth_record(mb: MiddleboxNode) -> Envelope:
    """First record on a fresh channel: the middlebox key signed over the channel binding."""
    session = mb.upstream_session
    sig = mb.middlebox_keypair.sign(CHANNEL_AUTH_CONTEXT + channel_binding(session))
    body = tlv.pack(F_AUTH_KEY, mb.middlebox_keypair.public_key) + tlv.pack(F_AUTH_SIG, sig)
    return seal_record(session, tlv.pack(CHANNEL_AUTH, body))


def start_channel(mb: MiddleboxNode, rng: RandomSource = secrets.token_bytes) -> Envelope:
    state, hello = subscriber_start(mb.channel_name(), rng=rng)
    mb.channel_state = state
    return hello


def open_channel(mb: MiddleboxNode, tp: "TrustedPublisher", now: int, rng: RandomSource = secrets.token_bytes) -> EstablishedSession:
    """Run the channel handshake and authentication in-process (no network time)."""
    hello = start_channel(mb, rng)
    flight, _ = tp.handle_hello(hello, now, rng)
    _, finish = subscriber_process_flight(mb.channel_state, flight, mb.trust_store, now, rng)
    _, fin = tp.handle_finish(finish, now, rng)
    mb.upstream_session = subscriber_verify_finish(mb.channel_state, fin)
    tp.handle_record(channel_auth_record(mb))
    return mb.upstream_session


# --- middlebox side -----------------------------------------------------------------


def intercept_start(mb: MiddleboxNode, hello: Envelope, rng: RandomSource = secrets.token_bytes) -> PendingFlight:
    """Build the server flight for an intercepted SubHello, leaving the signature slot empty.

    If the item is not cached the middlebox opens its own upstream
    subscription for it (at most one per name); the SubHello for that is
    returned in ``upstream_hello``.
    """
    name = hello_name(hello)
    upstream_hello = None
    if name.prefix not in mb.content_store:
        if not mb.upstream_reachable:
            raise NoContent(f"{name} is neither cached nor fetchable")
        if name.prefix not in mb.fetching and name.prefix not in mb.upstream_content:
            state, upstream_hello = subscriber_start(name, rng=rng)
            mb.fetching[name.prefix] = state
    pending = prepare_flight(hello, mb.held_certificate, mb.suites, rng, allow_ticket=True)
    pending.upstream_hello = upstream_hello
    return pending


def request_signature(mb: MiddleboxNode, pending: PendingFlight) -> Envelope:
    if mb.upstream_session is None:
        raise NoUpstreamChannel("no secure channel to the trusted publisher")
    req = SigRequest(pending.state.name, pending.to_be_signed)
    record = seal_record(mb.upstream_session, encode_payload(req))
    mb.outstanding.append(pending)
    return record


def _open_reply(mb: MiddleboxNode, rec: Envelope) -> SignatureReply:
    if mb.upstream_session is None:
        raise NoUpstreamChannel("no secure channel to the trusted publisher")
    reply = decode_payload(open_record(mb.upstream_session, rec))
    if not isinstance(reply, (SigResponse, Alert)):
        raise UnexpectedMessage(f"unexpected {type(reply).__name__} on the delegation channel")
    return reply


def read_signature_reply(mb: MiddleboxNode, rec: Envelope) -> tuple[PendingFlight, SignatureReply]:
    """Open a channel reply and pair it with the oldest outstanding request."""
    reply = _open_reply(mb, rec)
    if not mb.outstanding:
        raise UnexpectedMessage("unsolicited reply on the delegation channel")
    return mb.outstanding.pop(0), reply


def raise_for_alert(alert: Alert) -> None:
    if alert.code == AlertCode.UNKNOWN_MIDDLEBOX:
        raise UnknownMiddlebox(alert.reason)
    raise Refused(alert.reason or "signature request refused")


def complete_intercepted(mb: MiddleboxNode, pending: PendingFlight, sig: SigResponse) -> Envelope:
    if not verify(mb.held_certificate.publisher_public_key, sig.signature, pending.to_be_signed):
        raise BadDelegatedSignature("delegated signature does not verify under the held certificate")
    return finish_flight(mb.store, pending, sig.signature)


def refusal_alert(pending: PendingFlight, alert: Alert) -> Envelope:
    """Alert to pass downstream when the trusted publisher refuses."""
    from .wire import publication

    state = pending.state
    pending.state.drop_ephemeral()
    return publication(state.wire_name, routable(state.name), Alert(alert.code, alert.reason))


def complete_downstream(mb: MiddleboxNode, finish: Envelope, now: int = 0, rng: RandomSource = secrets.token_bytes) -> tuple[EstablishedSession, list[Envelope]]:
    """Finish a downstream handshake; returns the PubFinish followed by any content already available."""
    session, fin = publisher_complete(mb.store, finish, None, now, rng)
    mb.downstream_sessions[session.session_id] = session
    out = [fin]
    if session.name.prefix in mb.content_store:
        from .nodes import chunks

        out += [seal_record(session, part) for part in chunks(mb.content_store[session.name.prefix])]
    else:
        out += [seal_record(session, part) for part in mb.received.get(session.name.prefix, [])]
    return session, out


def aggregate_and_fanout(mb: MiddleboxNode, upstream_record: Envelope) -> list[Envelope]:
    """Decrypt one upstream record and re-encrypt it for every downstream session of that name."""
    upstream = next((s for s in mb.upstream_content.values() if s.wire_name == upstream_record.wire_name), None)
    if upstream is None:
        raise UnexpectedMessage(f"no upstream content session for {upstream_record.wire_name!r}")
    try:
        plaintext = open_record(upstream, upstream_record)
    except AuthFailure as exc:
        raise UpstreamAuthFailure(str(exc)) from exc
    prefix = upstream.name.prefix
    mb.received.setdefault(prefix, []).append(plaintext)
    downstream = [s for s in mb.downstream_sessions.values() if s.name.prefix == prefix]
    if not downstream:
        raise NoDownstream(f"no downstream session for {upstream.name}")
    return [seal_record(s, plaintext) for s in downstream]


def delegated_signer(mb: MiddleboxNode, tp: "TrustedPublisher") -> TranscriptSigner:
    """Synchronous signer running the request/response round trip in-process."""

    def sign(data: bytes) -> bytes:
        fid = parse_to_be_signed(data)
        if fid is None:
            raise SignerRefused("not a key-exchange tuple")
        if mb.upstream_session is None:
            raise NoUpstreamChannel("no secure channel to the trusted publisher")
        req = SigRequest(parse_name(fid.decode("utf-8")), data)
        (reply_rec,) = tp.handle_record(seal_record(mb.upstream_session, encode_payload(req)))
        reply = _open_reply(mb, reply_rec)
        if isinstance(reply, Alert):
            raise SignerRefused(f"alert {reply.code}: {reply.reason}")
        return reply.signature

    return sign


# --- trusted publisher side ---------------------------------------------------------


def trusted_sign(
    tp: "TrustedPublisher",
    req: SigRequest,
    requester: Optional[bytes],
    policy: Optional[SigningPolicy] = None,
    stats: Optional[AccessStats] = None,
) -> SignatureReply:
    """Sign a middlebox's key-exchange tuple if policy allows; otherwise an Alert.

    The publisher never sees the subscriber's handshake, so it can only check
    that the bytes are a well-formed tuple naming the same content as the
    request.
    """
    policy = policy if policy is not None else tp.policy
    stats = stats if stats is not None else tp.stats
    if requester is None or requester not in policy.allow_middleboxes:
        return Alert(AlertCode.UNKNOWN_MIDDLEBOX, "middlebox not on the allowlist")
    if not policy.enabled:
        return Alert(AlertCode.REFUSED, "middleboxes disabled by publisher")
    if policy.denies(req.name):
        return Alert(AlertCode.REFUSED, f"{req.name} is sensitive")
    fid = parse_to_be_signed(req.to_be_signed)
    if fid is None or fid != bytes(routable(req.name)):
        return Alert(AlertCode.BAD_REQUEST, "to-be-signed bytes do not name the requested content")
    if not authorizes(tp.certificate, req.name):
        return Alert(AlertCode.NOT_AUTHORIZED, f"publisher is not authorized for {req.name}")
    signature = tp.sign(req.to_be_signed)
    stats.record(req.name)
    return SigResponse(signature)


def serve_channel_record(tp: "TrustedPublisher", session: EstablishedSession, rec: Envelope) -> list[Envelope]:
    plaintext = open_record(session, rec)
    code = tlv.read_one(plaintext)[0]
    channel = tp.channels.setdefault(session.wire_name, DelegationChannel(session))
    if code == CHANNEL_AUTH:
        _, body = tlv.unpack_single(plaintext)
        r = tlv.FieldReader(body, "channel auth")
        key = r.take(F_AUTH_KEY, 32)
        sig = r.take(F_AUTH_SIG, 64)
        r.finish()
        if verify(key, sig, CHANNEL_AUTH_CONTEXT + channel_binding(session)):
            channel.middlebox_key = key
        return []
    req = decode_payload(plaintext)
    if not isinstance(req, SigRequest):
        raise UnexpectedMessage(f"expected SigRequest, got {type(req).__name__}")
    reply = trusted_sign(tp, req, channel.middlebox_key)
    return [seal_record(session, encode_payload(reply))]


def key_fingerprint(key: bytes) -> str:
    return hashlib.sha256(key).hexdigest()[:16]
