"""Endpoint drivers that wire the handshake, session and delegation pieces together.

:class:`TrustedPublisher` and :class:`Subscriber` react to envelopes and
return the envelopes they want sent, so the same objects serve in-process
tests, the CLI demos and the simulator.
"""

from __future__ import annotations

import logging
import secrets
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

from .credentials import KeyPair, PublisherCertificate, TrustStore
from .crypto import DEFAULT_SUITES
from .errors import FallbackToFull, UnexpectedMessage
from .handshake import (
    HandshakeConfig,
    HandshakeState,
    Phase,
    StateStore,
    local_signer,
    publisher_complete,
    publisher_respond,
    subscriber_handle_alert,
    subscriber_process_flight,
    subscriber_start,
    subscriber_verify_finish,
)
from .names import ContentName, RandomSource
from .session import EstablishedSession, KeyGenerator, TicketKey, open_record, resume, seal_record
from .wire import Alert, DataRecord, Envelope, PubFinish, PubHello, SubHello

if TYPE_CHECKING:
    from .middlebox import AccessStats, DelegationChannel, SigningPolicy

log = logging.getLogger(__name__)

CHUNK_SIZE = 1024


def chunks(data: bytes, size: int = CHUNK_SIZE) -> list[bytes]:
    return [data[i : i + size] for i in range(0, len(data), size)] or [b""]


@dataclass(eq=False)
class TrustedPublisher:
    publisher_id: str
    keypair: KeyPair = field(repr=False)
    certificate: PublisherCertificate
    suites: Sequence[int] = DEFAULT_SUITES
    content: dict[tuple[str, ...], bytes] = field(default_factory=dict)
    keygen: Optional[KeyGenerator] = None
    own_ring: list[TicketKey] = field(default_factory=list)
    policy: "SigningPolicy" = None  # type: ignore[assignment]
    stats: "AccessStats" = None  # type: ignore[assignment]
    issue_tickets: bool = True
    store: StateStore = field(default_factory=StateStore)
    sessions: dict[str, EstablishedSession] = field(default_factory=dict)
    channels: dict[str, "DelegationChannel"] = field(default_factory=dict)

    def __post_init__(self) -> None:
        from .middlebox import AccessStats, SigningPolicy

        if self.policy is None:
            self.policy = SigningPolicy()
        if self.stats is None:
            self.stats = AccessStats()

    @property
    def key_ring(self) -> list[TicketKey]:
        if self.keygen is not None:
            return self.keygen.ring_for(self.publisher_id)
        return self.own_ring

    def sign(self, data: bytes) -> bytes:
        return local_signer(self.keypair.private_key)(data)

    def handle_hello(self, hello: Envelope, now: int, rng: RandomSource = secrets.token_bytes) -> tuple[Envelope, Optional[EstablishedSession]]:
        """PubHello for a fresh handshake, or PubFinish when a ticket resumes here."""
        msg = hello.payload
        if isinstance(msg, SubHello) and msg.ticket is not None:
            try:
                session, fin = resume(hello, self.key_ring, now, rng, issue_new=self.issue_tickets)
            except FallbackToFull as exc:
                log.debug("%s: ticket fallback (%s)", self.publisher_id, exc)
            else:
                self.sessions[session.wire_name] = session
                return fin, session
        _, flight = publisher_respond(self.store, hello, self.certificate, self.sign, self.suites, rng, allow_ticket=True)
        return flight, None

    def handle_finish(self, finish: Envelope, now: int, rng: RandomSource = secrets.token_bytes) -> tuple[EstablishedSession, Envelope]:
        ring = self.key_ring
        ticket_key = ring[0] if self.issue_tickets and ring and ring[0].can_issue(now) else None
        session, fin = publisher_complete(self.store, finish, ticket_key, now, rng)
        self.sessions[session.wire_name] = session
        return session, fin

    def content_records(self, session: EstablishedSession) -> list[Envelope]:
        data = self.content.get(session.name.prefix)
        if data is None:
            return []
        return [seal_record(session, part) for part in chunks(data)]

    def handle_record(self, rec: Envelope) -> list[Envelope]:
        """Serve delegation-channel traffic (channel auth, signature requests)."""
        from .middlebox import serve_channel_record

        session = self.sessions.get(rec.wire_name)
        if session is None:
            raise UnexpectedMessage(f"no session for {rec.wire_name!r}")
        return serve_channel_record(self, session, rec)


@dataclass(eq=False)
class Flow:
    state: HandshakeState
    session: Optional[EstablishedSession] = None
    received: list[bytes] = field(default_factory=list)
    messages: int = 1

    @property
    def established(self) -> bool:
        return self.session is not None


@dataclass(eq=False)
class Subscriber:
    node_id: str
    trust_store: TrustStore
    config: HandshakeConfig = field(default_factory=HandshakeConfig)
    flows: dict[str, Flow] = field(default_factory=dict)

    def start(self, name: ContentName, config: Optional[HandshakeConfig] = None, rng: RandomSource = secrets.token_bytes) -> Envelope:
        state, hello = subscriber_start(name, config or self.config, rng)
        self.flows[state.wire_name] = Flow(state)
        return hello

    def handle(self, env: Envelope, now: int, rng: RandomSource = secrets.token_bytes) -> list[Envelope]:
        """Consume one publication; return subscriptions to send in reply.

        Handshake errors leave the flow in phase FAILED and propagate.
        """
        flow = self.flows.get(env.wire_name)
        if flow is None:
            raise UnexpectedMessage(f"{self.node_id}: no flow for {env.wire_name!r}")
        msg = env.payload
        flow.messages += 1
        if isinstance(msg, PubHello):
            _, finish = subscriber_process_flight(flow.state, env, self.trust_store, now, rng)
            flow.messages += 1
            return [finish]
        if isinstance(msg, PubFinish):
            flow.session = subscriber_verify_finish(flow.state, env)
            return []
        if isinstance(msg, DataRecord):
            if flow.session is None:
                raise UnexpectedMessage("data before the handshake completed")
            flow.received.append(open_record(flow.session, env))
            return []
        if isinstance(msg, Alert):
            subscriber_handle_alert(flow.state, env)
        raise UnexpectedMessage(f"unexpected {type(msg).__name__}")

    def failed(self) -> list[Flow]:
        return [f for f in self.flows.values() if f.state.phase is Phase.FAILED]


def run_direct(
    subscriber: Subscriber,
    publisher: TrustedPublisher,
    name: ContentName,
    now: int,
    rng: RandomSource = secrets.token_bytes,
    config: Optional[HandshakeConfig] = None,
) -> tuple[Flow, list[Envelope]]:
    """Drive one handshake plus content delivery in-process; returns the flow and every message sent."""
    sent = [subscriber.start(name, config, rng)]
    flow = subscriber.flows[sent[0].wire_name]
    reply, resumed = publisher.handle_hello(sent[0], now, rng)
    sent.append(reply)
    replies = subscriber.handle(reply, now, rng)
    session = resumed
    if replies:
        sent += replies
        session, fin = publisher.handle_finish(replies[0], now, rng)
        sent.append(fin)
        subscriber.handle(fin, now, rng)
    for rec in publisher.content_records(session):
        sent.append(rec)
        subscriber.handle(rec, now, rng)
    return flow, sent
