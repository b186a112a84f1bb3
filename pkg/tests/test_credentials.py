from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icntls.credentials import (
    CERTIFICATE,
    KeyPair,
    OwnerKeyPair,
    PublisherCertificate,
    authorizes,
    issue_certificate,
    verify_certificate,
)
from icntls.errors import (
    BadSignature,
    EmptyAuthorization,
    Expired,
    InvalidValidityWindow,
    NotYetValid,
    WireError,
)
from icntls.names import make_name
from icntls.simnet import rng_from_seed

T0, T1 = 1000, 2000


@pytest.fixture
def owner():
    return OwnerKeyPair.generate("acme", rng_from_seed(5))


@pytest.fixture
def pub():
    return KeyPair.generate("tp", rng_from_seed(6))


def test_issue_then_verify(owner, pub):
    cert = issue_certificate(owner, pub.public_key, [("movies",)], (T0, T1))
    verify_certificate(cert, owner.public_key, 1500)
    assert cert.owner_id == owner.owner_id


def test_empty_prefixes_rejected(owner, pub):
    with pytest.raises(EmptyAuthorization):
        issue_certificate(owner, pub.public_key, [], (T0, T1))


def test_empty_validity_window_rejected(owner, pub):
    with pytest.raises(InvalidValidityWindow):
        issue_certificate(owner, pub.public_key, [("movies",)], (T0, T0))


def test_validity_bounds(owner, pub):
    cert = issue_certificate(owner, pub.public_key, [("movies",)], (T0, T1))
    verify_certificate(cert, owner.public_key, T0)
    verify_certificate(cert, owner.public_key, T1)
    with pytest.raises(Expired):
        verify_certificate(cert, owner.public_key, T1 + 1)
    with pytest.raises(NotYetValid):
        verify_certificate(cert, owner.public_key, T0 - 1)


def test_wrong_owner_key(owner, pub):
    cert = issue_certificate(owner, pub.public_key, [("movies",)], (T0, T1))
    other = OwnerKeyPair.generate("acme", rng_from_seed(7))
    with pytest.raises(BadSignature):
        verify_certificate(cert, other.public_key, 1500)


def _prefix_region(encoded: bytes, prefixes) -> list[int]:
    out = []
    for p in prefixes:
        text = "/".join(p).encode()
        start = encoded.index(text)
        out += range(start, start + len(text))
    return out


def test_prefix_byte_flips_break_signature(owner, pub):
    prefixes = [("movies", "trailers"), ("news",)]
    cert = issue_certificate(owner, pub.public_key, prefixes, (T0, T1))
    raw = cert.encode()
    positions = _prefix_region(raw, prefixes)
    prng = random.Random(3)
    for _ in range(100):
        i = prng.choice(positions)
        mutated = bytearray(raw)
        mutated[i] ^= prng.randrange(1, 256)
        try:
            decoded = PublisherCertificate.decode(bytes(mutated))
        except (WireError, ValueError):
            continue  # flip produced an unparsable label; also a rejection
        with pytest.raises(BadSignature):
            verify_certificate(decoded, owner.public_key, 1500)


def test_every_single_bit_flip_fails(owner, pub):
    raw = issue_certificate(owner, pub.public_key, [("movies",)], (T0, T1)).encode()
    for bit in range(len(raw) * 8):
        mutated = bytearray(raw)
        mutated[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises((BadSignature, Expired, NotYetValid, WireError, ValueError)):
            verify_certificate(PublisherCertificate.decode(bytes(mutated)), owner.public_key, 1500)


@settings(max_examples=1000, deadline=None)
@given(
    st.binary(min_size=32, max_size=32),
    st.lists(st.lists(st.sampled_from(["a", "b", "movies", "hd", "x1"]), min_size=1, max_size=3), min_size=1, max_size=3),
    st.integers(0, 2**40),
    st.integers(1, 2**30),
)
def test_issue_verify_roundtrip_property(pk, prefixes, start, span):
    owner = OwnerKeyPair.generate("o", rng_from_seed(start % 97))
    cert = issue_certificate(owner, pk, [tuple(p) for p in prefixes], (start, start + span))
    decoded = PublisherCertificate.decode(cert.encode())
    assert decoded == cert
    verify_certificate(decoded, owner.public_key, start + span // 2)


@pytest.mark.parametrize(
    "granted,name,expected",
    [
        (("movies",), ["movies", "trailer1"], True),
        (("movies", "hd"), ["movies"], False),
        (("news",), ["movies", "trailer1"], False),
        (("movies",), ["movies"], True),
    ],
)
def test_authorizes(owner, pub, granted, name, expected):
    cert = issue_certificate(owner, pub.public_key, [granted], (T0, T1))
    assert authorizes(cert, make_name(name)) is expected


@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=3), st.lists(st.sampled_from(["a", "b", "c"]), max_size=3))
def test_authorizes_is_monotone(prefix, extension):
    owner = OwnerKeyPair.generate("o", rng_from_seed(1))
    cert = issue_certificate(owner, bytes(32), [tuple(prefix)], (T0, T1))
    assert authorizes(cert, make_name(prefix + extension))


def test_key_file_roundtrip_and_no_private_key_in_cert(owner, pub):
    assert KeyPair.from_file_bytes(pub.to_file_bytes()) == pub
    cert = issue_certificate(owner, pub.public_key, [("movies",)], (T0, T1)).encode()
    assert owner.private_key not in cert and pub.private_key not in cert
    assert cert[:2] == CERTIFICATE.to_bytes(2, "big")
    assert "private" not in repr(pub) or pub.private_key.hex() not in repr(pub)
