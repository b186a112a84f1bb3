from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from icntls.credentials import KeyPair, OwnerKeyPair, PublisherCertificate, issue_certificate
from icntls.names import make_name
from icntls.nodes import Subscriber, TrustedPublisher
from icntls.simnet import EPOCH, rng_from_seed

NAME = make_name(["movies", "trailer1"])
CONTENT = b"frame" * 500


@dataclass
class World:
    owner: OwnerKeyPair
    tp_key: KeyPair
    cert: PublisherCertificate
    trust: dict
    rng: object

    def publisher(self, pid: str = "tp", **kw) -> TrustedPublisher:
        kw.setdefault("content", {NAME.prefix: CONTENT})
        kw.setdefault("issue_tickets", False)
        return TrustedPublisher(pid, self.tp_key, self.cert, **kw)

    def subscriber(self, sid: str = "sub") -> Subscriber:
        return Subscriber(sid, self.trust)


def make_world(seed: int = 1) -> World:
    rng = rng_from_seed(seed)
    owner = OwnerKeyPair.generate("owner", rng)
    tp_key = KeyPair.generate("tp", rng)
    cert = issue_certificate(owner, tp_key.public_key, [("movies",), ("account",)], (EPOCH - 3600, EPOCH + 86400))
    return World(owner, tp_key, cert, {owner.owner_id: owner.public_key}, rng)


@pytest.fixture
def world() -> World:
    return make_world()


@pytest.fixture
def rng():
    return rng_from_seed(1234)


@pytest.fixture
def prng() -> random.Random:
    return random.Random(99)
