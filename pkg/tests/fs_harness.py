"""Passive-attacker key recovery, used to test forward secrecy by construction.

The attacker holds captured envelopes plus a list of candidate secrets (all
long-term private keys, ticket keys, ...). It tries every way those secrets
enter the key schedule and reports the first schedule that opens a captured
record. Handing it the ephemeral secrets is the positive control.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from conftest import NAME, World
from harness import NOW

from icntls.crypto import KeySchedule, derive_keys, get_suite, schedule_from_master, x25519_shared
from icntls.errors import IcnTlsError
from icntls.handshake import (
    HandshakeConfig,
    StateStore,
    local_signer,
    publisher_complete,
    publisher_respond,
    subscriber_process_flight,
    subscriber_start,
    subscriber_verify_finish,
)
from icntls.session import EstablishedSession, Role, TicketKey, compromise_demo, open_record, seal_record
from icntls.wire import Envelope, encode_payload


@dataclass
class Capture:
    handshake: list[Envelope]
    records: list[Envelope]
    draws: list[bytes] = field(default_factory=list)  # every 32-byte random draw (positive control only)
    true_keys: Optional[KeySchedule] = None

    @property
    def ticket(self):
        return self.handshake[3].payload.ticket


class RecordingRng:
    def __init__(self, inner) -> None:
        self.inner = inner
        self.draws: list[bytes] = []

    def __call__(self, n: int) -> bytes:
        out = self.inner(n)
        if n == 32:
            self.draws.append(out)
        return out


def capture_session(world: World, rng, ticket_key: Optional[TicketKey] = None, records: int = 3, now: int = NOW) -> Capture:
    rec = RecordingRng(rng)
    store = StateStore()
    state, hello = subscriber_start(NAME, HandshakeConfig(), rec)
    _, flight = publisher_respond(store, hello, world.cert, local_signer(world.tp_key.private_key), rng=rec)
    _, finish = subscriber_process_flight(state, flight, world.trust, now, rec)
    pub, fin = publisher_complete(store, finish, ticket_key, now, rec)
    subscriber_verify_finish(state, fin)
    recs = [seal_record(pub, b"secret payload %d" % i) for i in range(records)]
    return Capture([hello, flight, finish, fin], recs, rec.draws, pub.keys)


def _opens(keys: KeySchedule, cap: Capture, suite_id: int) -> bool:
    first = cap.records[0]
    probe = EstablishedSession(keys, get_suite(suite_id), NAME, Role.SUBSCRIBER, first.wire_name)
    try:
        open_record(probe, first)
    except IcnTlsError:
        return False
    return True


def recover(cap: Capture, secrets: Sequence[bytes], ticket_keys: Iterable[TicketKey] = ()) -> Optional[KeySchedule]:
    hello, flight, finish, fin = (e.payload for e in cap.handshake)
    suite = get_suite(flight.chosen_suite)
    th = hashlib.sha256(encode_payload(hello) + encode_payload(flight) + finish.ephemeral_public).digest()
    shares = [flight.ephemeral_public, finish.ephemeral_public]

    shared_candidates = []
    for sk in secrets:
        material = [sk, hashlib.sha256(sk).digest(), sk[:32].ljust(32, b"\0")]
        shared_candidates += material
        for m, pub in itertools.product(material, shares):
            try:
                shared_candidates.append(x25519_shared(m[:32].ljust(32, b"\0"), pub))
            except IcnTlsError:
                pass
    for shared in shared_candidates:
        try:
            keys = derive_keys(shared, hello.client_random, flight.server_random, th, suite)
        except IcnTlsError:
            continue
        if _opens(keys, cap, suite.id):
            return keys
    for sk in secrets:  # a secret used directly as a master secret
        keys = schedule_from_master(sk[:48].ljust(48, b"\0"), suite)
        if _opens(keys, cap, suite.id):
            return keys
    if cap.ticket is not None:
        for tk in ticket_keys:
            try:
                master = compromise_demo(cap.ticket, tk)
            except IcnTlsError:
                continue
            keys = schedule_from_master(master, suite)
            if _opens(keys, cap, suite.id):
                return keys
    return None


def long_term_secrets(world: World, extra: Sequence[bytes] = ()) -> list[bytes]:
    return [world.owner.private_key, world.tp_key.private_key, *extra]
