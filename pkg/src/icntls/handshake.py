"""Subscriber and publisher state machines for the four-message handshake.

    subscriber                               publisher
    SubHello   (random, suites, binding)  ->
                                          <- PubHello  (random, cert, ECDHE share,
                                                        signature, session id)
    SubFinish  (ECDHE share, MAC, binding) ->
                                          <- PubFinish (MAC, optional ticket)

Subscriptions are flagged non-aggregatable and publications non-cacheable.
The second subscription is correlated with publisher state through the
nonce label of the wire name, or through the session id when no nonce is used.
"""

from __future__ import annotations

import enum
import hashlib
import secrets
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

from .credentials import PublisherCertificate, TrustStore, authorizes, verify, verify_certificate
from .crypto import (
    DEFAULT_SUITES,
    CipherSuite,
    KeySchedule,
    derive_keys,
    finished_mac,
    get_suite,
    mac_equal,
    to_be_signed,
    x25519_public,
    x25519_shared,
    zeroize,
)
from .errors import (
    BadCertificate,
    BadFinishedMac,
    BadTranscriptSignature,
    CredentialError,
    HandshakeAborted,
    IcnTlsError,
    NameError_,
    NoCommonSuite,
    NoEphemeralSuite,
    NotAuthorized,
    NotAuthorizedForName,
    SuiteMismatch,
    UnexpectedMessage,
    UnknownBinding,
)
from .names import (
    EMPTY_SESSION_ID,
    BindingKind,
    ContentName,
    HandshakeBinding,
    RandomSource,
    bind_subscription,
    routable,
    split_wire_name,
)
from .session import (
    EstablishedSession,
    ResumptionTicket,
    Role,
    TicketKey,
    issue_ticket,
    pub_finished_mac,
    resumption_keys,
)
from .wire import (
    Alert,
    Envelope,
    PubFinish,
    PubHello,
    SubFinish,
    SubHello,
    encode_payload,
    publication,
    subscription,
)

TranscriptSigner = Callable[[bytes], bytes]


class Phase(enum.IntEnum):
    START = 0
    HELLO_SENT = 1
    FLIGHT_SENT = 2
    ESTABLISHED = 3
    FAILED = 4


@dataclass
class HandshakeConfig:
    suites: Sequence[int] = DEFAULT_SUITES
    use_nonce: bool = True
    ticket: Optional[ResumptionTicket] = None


@dataclass(eq=False)
class HandshakeState:
    role: Role
    name: ContentName
    binding: HandshakeBinding
    wire_name: str
    client_random: bytes
    offered_suites: tuple[int, ...] = ()
    server_random: Optional[bytes] = None
    session_id: Optional[bytes] = None
    suite: Optional[CipherSuite] = None
    hello: Optional[SubHello] = None
    ephemeral_secret: Optional[bytearray] = field(default=None, repr=False)
    keys: Optional[KeySchedule] = field(default=None, repr=False)
    resumption: Optional[ResumptionTicket] = field(default=None, repr=False)
    phase: Phase = Phase.START
    error: Optional[Exception] = None
    transcript: "hashlib._Hash" = field(default_factory=hashlib.sha256, repr=False)

    def advance(self, phase: Phase) -> None:
        if self.phase is Phase.FAILED or phase <= self.phase:
            raise UnexpectedMessage(f"cannot move from {self.phase.name} to {phase.name}")
        self.phase = phase
        if phase is Phase.ESTABLISHED:
            self.drop_ephemeral()

    def fail(self, exc: Exception) -> None:
        self.phase = Phase.FAILED
        self.error = exc
        self.drop_ephemeral()

    def drop_ephemeral(self) -> None:
        zeroize(self.ephemeral_secret)
        self.ephemeral_secret = None

    def transcript_hash(self) -> bytes:
        return self.transcript.copy().digest()

    def correlation_keys(self) -> list[tuple[int, bytes]]:
        keys = []
        if self.binding.kind is BindingKind.NONCE:
            keys.append(self.binding.key)
        if self.session_id is not None:
            keys.append(HandshakeBinding.session_id(self.session_id).key)
        return keys


class StateStore:
    """Publisher-side pending handshakes, indexed by nonce and by session id."""

    def __init__(self) -> None:
        self._states: dict[tuple[int, bytes], HandshakeState] = {}
        self._lock = threading.Lock()

    def put(self, state: HandshakeState) -> None:
        keys = state.correlation_keys()
        with self._lock:
            if any(k in self._states for k in keys):
                raise UnexpectedMessage("a handshake with this binding is already pending")
            for k in keys:
                self._states[k] = state

    def get(self, binding: HandshakeBinding) -> HandshakeState:
        with self._lock:
            state = self._states.get(binding.key)
        if state is None:
            raise UnknownBinding(f"no pending handshake for {binding.kind.name} {binding.value.hex()[:16]}...")
        return state

    def evict(self, state: HandshakeState) -> None:
        with self._lock:
            for k in state.correlation_keys():
                if self._states.get(k) is state:
                    del self._states[k]

    def __len__(self) -> int:
        with self._lock:
            return len({id(s) for s in self._states.values()})


@contextmanager
def _failing(state: HandshakeState) -> Iterator[None]:
    try:
        yield
    except IcnTlsError as exc:
        state.fail(exc)
        raise


def local_signer(private_key: bytes) -> TranscriptSigner:
    from .credentials import sign

    return lambda data: sign(private_key, data)


# --- subscriber -------------------------------------------------------------------


def subscriber_start(
    name: ContentName,
    config: Optional[HandshakeConfig] = None,
    rng: RandomSource = secrets.token_bytes,
) -> tuple[HandshakeState, Envelope]:
    config = config or HandshakeConfig()
    suites = tuple(config.suites)
    if not suites:
        raise NoEphemeralSuite("no suites offered")
    for suite_id in suites:
        get_suite(suite_id)
    ticket = config.ticket
    if ticket is not None:
        if ticket.prefix != name.prefix:
            raise ValueError("ticket was issued for a different name")
        if ticket.suite_id not in suites:
            suites = (ticket.suite_id, *suites)
    client_random = rng(32)
    if config.use_nonce:
        binding = HandshakeBinding.nonce(rng)
        wire_name = bind_subscription(name, binding)
    else:
        binding = EMPTY_SESSION_ID
        wire_name = str(name)
    hello = SubHello(client_random, suites, binding, ticket.ticket if ticket else None)
    state = HandshakeState(
        Role.SUBSCRIBER, name, binding, wire_name, client_random, suites, hello=hello, resumption=ticket
    )
    state.transcript.update(encode_payload(hello))
    state.advance(Phase.HELLO_SENT)
    return state, subscription(wire_name, routable(name), hello)


def _check_flow(state: HandshakeState, env: Envelope) -> None:
    if env.wire_name != state.wire_name or env.forwarding_id != routable(state.name):
        raise UnexpectedMessage(f"message for {env.wire_name!r} does not belong to flow {state.wire_name!r}")


def subscriber_process_flight(
    state: HandshakeState,
    flight: Envelope,
    trust_store: TrustStore,
    now: int,
    rng: RandomSource = secrets.token_bytes,
) -> tuple[KeySchedule, Envelope]:
    """Validate the server flight and answer with SubFinish.

    Trust is established here: the owner-signed certificate must cover the
    name, and the key-exchange signature must verify under the certified key.
    """
    if state.phase is not Phase.HELLO_SENT:
        raise UnexpectedMessage(f"server flight in phase {state.phase.name}")
    with _failing(state):
        _check_flow(state, flight)
        msg = flight.payload
        if not isinstance(msg, PubHello):
            raise UnexpectedMessage(f"expected PubHello, got {type(msg).__name__}")
        cert = msg.certificate
        owner_pk = trust_store.get(cert.owner_id)
        if owner_pk is None:
            raise BadCertificate(f"unknown owner {cert.owner_id!r}")
        try:
            verify_certificate(cert, owner_pk, now)
        except CredentialError as exc:
            raise BadCertificate(str(exc)) from exc
        if not authorizes(cert, state.name):
            raise NotAuthorizedForName(f"certificate does not cover {state.name}")
        if msg.chosen_suite not in state.offered_suites:
            raise SuiteMismatch(f"publisher chose unoffered suite 0x{msg.chosen_suite:04x}")
        suite = get_suite(msg.chosen_suite)
        tbs = to_be_signed(state.client_random, msg.server_random, msg.ephemeral_public, msg.chosen_suite, routable(state.name))
        if not verify(cert.publisher_public_key, msg.transcript_signature, tbs):
            raise BadTranscriptSignature("server key exchange signature does not verify")

        state.transcript.update(encode_payload(msg))
        state.ephemeral_secret = bytearray(rng(32))
        share = x25519_public(state.ephemeral_secret)
        shared = x25519_shared(state.ephemeral_secret, msg.ephemeral_public)
        state.drop_ephemeral()
        state.transcript.update(share)
        keys = derive_keys(shared, state.client_random, msg.server_random, state.transcript_hash(), suite)
        mac = finished_mac(keys.finished_key(subscriber=True), state.transcript_hash())

        binding = state.binding if state.binding.kind is BindingKind.NONCE else HandshakeBinding.session_id(msg.session_id)
        finish = SubFinish(share, mac, binding)
        state.transcript.update(encode_payload(finish))
        state.server_random = msg.server_random
        state.session_id = msg.session_id
        state.suite = suite
        state.keys = keys
        state.advance(Phase.FLIGHT_SENT)
    return keys, subscription(state.wire_name, routable(state.name), finish)


def subscriber_verify_finish(state: HandshakeState, fin: Envelope) -> EstablishedSession:
    resuming = state.phase is Phase.HELLO_SENT and state.resumption is not None
    if state.phase is not Phase.FLIGHT_SENT and not resuming:
        raise UnexpectedMessage(f"PubFinish in phase {state.phase.name}")
    with _failing(state):
        _check_flow(state, fin)
        msg = fin.payload
        if not isinstance(msg, PubFinish):
            raise UnexpectedMessage(f"expected PubFinish, got {type(msg).__name__}")
        if resuming:
            if msg.server_random is None:
                raise UnexpectedMessage("resumption PubFinish without server random")
            suite = get_suite(state.resumption.suite_id)
            keys, transcript = resumption_keys(state.resumption.master_secret, state.hello, msg.server_random, suite)
            state.keys, state.suite, state.server_random = keys, suite, msg.server_random
        else:
            if msg.server_random is not None:
                raise UnexpectedMessage("full-handshake PubFinish carries a server random")
            keys, transcript = state.keys, state.transcript
        if not mac_equal(msg.finished_mac, pub_finished_mac(keys, transcript, msg)):
            raise BadFinishedMac("publisher finished MAC does not verify")
        state.advance(Phase.ESTABLISHED)
    return EstablishedSession(
        state.keys,
        state.suite,
        state.name,
        Role.SUBSCRIBER,
        state.wire_name,
        session_id=state.session_id or bytes(32),
        ticket=msg.ticket,
        resumed=resuming,
    )


def subscriber_handle_alert(state: HandshakeState, env: Envelope) -> None:
    """Abort on an Alert publication for this flow; always raises."""
    msg = env.payload
    if not isinstance(msg, Alert):
        raise UnexpectedMessage("not an alert")
    exc = HandshakeAborted(f"alert {msg.code}: {msg.reason}")
    state.fail(exc)
    raise exc


# --- publisher --------------------------------------------------------------------


@dataclass(eq=False)
class PendingFlight:
    """A server flight waiting for its key-exchange signature."""

    state: HandshakeState
    certificate: PublisherCertificate
    to_be_signed: bytes
    ephemeral_public: bytes
    signature: Optional[bytes] = None
    upstream_hello: Optional[Envelope] = None


def hello_name(hello: Envelope) -> ContentName:
    msg = hello.payload
    if not isinstance(msg, SubHello):
        raise UnexpectedMessage(f"expected SubHello, got {type(msg).__name__}")
    try:
        name = split_wire_name(hello.wire_name, msg.binding)
    except NameError_ as exc:
        raise UnexpectedMessage(str(exc)) from exc
    if hello.forwarding_id != routable(name):
        raise UnexpectedMessage("forwarding id does not match the requested name")
    return name


def prepare_flight(
    hello: Envelope,
    cert: PublisherCertificate,
    suites: Sequence[int] = DEFAULT_SUITES,
    rng: RandomSource = secrets.token_bytes,
    allow_ticket: bool = False,
) -> PendingFlight:
    """Build the server flight up to, but excluding, its signature."""
    name = hello_name(hello)
    msg: SubHello = hello.payload
    if msg.ticket is not None and not allow_ticket:
        raise UnexpectedMessage("hello carries a ticket; resume or fall back explicitly")
    if not authorizes(cert, name):
        raise NotAuthorized(f"certificate does not cover {name}")
    chosen = next((s for s in msg.offered_suites if s in suites), None)
    if chosen is None:
        raise NoCommonSuite("no offered suite is supported")
    state = HandshakeState(Role.PUBLISHER, name, msg.binding, hello.wire_name, msg.client_random, msg.offered_suites)
    state.hello = msg
    state.server_random = rng(32)
    state.session_id = rng(32)
    state.suite = get_suite(chosen)
    state.ephemeral_secret = bytearray(rng(32))
    share = x25519_public(state.ephemeral_secret)
    tbs = to_be_signed(msg.client_random, state.server_random, share, chosen, routable(name))
    return PendingFlight(state, cert, tbs, share)


def finish_flight(store: StateStore, pending: PendingFlight, signature: bytes) -> Envelope:
    """Attach the signature, record the state and emit PubHello."""
    state = pending.state
    flight = PubHello(
        state.server_random,
        state.suite.id,
        pending.certificate,
        pending.ephemeral_public,
        signature,
        state.session_id,
    )
    state.transcript.update(encode_payload(state.hello))
    state.transcript.update(encode_payload(flight))
    store.put(state)
    pending.signature = signature
    state.advance(Phase.FLIGHT_SENT)
    return publication(state.wire_name, routable(state.name), flight)


def publisher_respond(
    store: StateStore,
    hello: Envelope,
    cert: PublisherCertificate,
    signer: TranscriptSigner,
    suites: Sequence[int] = DEFAULT_SUITES,
    rng: RandomSource = secrets.token_bytes,
    allow_ticket: bool = False,
) -> tuple[HandshakeState, Envelope]:
    """Answer a SubHello with a signed server flight.

    ``signer`` may be a delegated signer; if it raises (e.g.
    :class:`SignerRefused`) nothing is stored.
    """
    pending = prepare_flight(hello, cert, suites, rng, allow_ticket)
    try:
        signature = signer(pending.to_be_signed)
    except BaseException:
        pending.state.drop_ephemeral()
        raise
    return pending.state, finish_flight(store, pending, signature)


def publisher_complete(
    store: StateStore,
    finish: Envelope,
    ticket_key: Optional[TicketKey] = None,
    now: int = 0,
    rng: RandomSource = secrets.token_bytes,
) -> tuple[EstablishedSession, Envelope]:
    msg = finish.payload
    if not isinstance(msg, SubFinish):
        raise UnexpectedMessage(f"expected SubFinish, got {type(msg).__name__}")
    state = store.get(msg.binding)
    try:
        with _failing(state):
            _check_flow(state, finish)
            state.transcript.update(msg.ephemeral_public)
            shared = x25519_shared(state.ephemeral_secret, msg.ephemeral_public)
            state.drop_ephemeral()
            keys = derive_keys(shared, state.client_random, state.server_random, state.transcript_hash(), state.suite)
            expected = finished_mac(keys.finished_key(subscriber=True), state.transcript_hash())
            if not mac_equal(msg.finished_mac, expected):
                raise BadFinishedMac("subscriber finished MAC does not verify")
            state.transcript.update(encode_payload(msg))
            state.keys = keys
            session = EstablishedSession(keys, state.suite, state.name, Role.PUBLISHER, state.wire_name, state.session_id)
            ticket = issue_ticket(session, ticket_key, now, rng) if ticket_key is not None else None
            session.ticket = ticket
            unsigned = PubFinish(bytes(32), None, ticket)
            reply = PubFinish(pub_finished_mac(keys, state.transcript, unsigned), None, ticket)
            state.advance(Phase.ESTABLISHED)
    finally:
        store.evict(state)
    return session, publication(state.wire_name, routable(state.name), reply)
