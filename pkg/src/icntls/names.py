"""Content names, forwarding identifiers and handshake correlation bindings.

A content name is a routable prefix (a list of labels) plus an optional suffix
that never leaves the endpoints. The network only ever sees the prefix, encoded
as a ``/``-joined UTF-8 string.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import EmptyPrefix, InvalidLabel, WrongBindingKind

RandomSource = Callable[[int], bytes]

NONCE_SIZE = 16
SESSION_ID_SIZE = 32
SEPARATOR = "/"


def _check_label(label: str) -> None:
    if not isinstance(label, str) or not label:
        raise InvalidLabel(f"label must be a non-empty string: {label!r}")
    if SEPARATOR in label or "\x00" in label:
        raise InvalidLabel(f"label contains '/' or NUL: {label!r}")


@dataclass(frozen=True)
class ContentName:
    prefix: tuple[str, ...]
    suffix: Optional[bytes] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "prefix", tuple(self.prefix))
        if not self.prefix:
            raise EmptyPrefix("a content name needs at least one prefix label")
        for label in self.prefix:
            _check_label(label)

    def __str__(self) -> str:
        return SEPARATOR.join(self.prefix)

    def has_prefix(self, labels: Iterable[str]) -> bool:
        """Label-wise prefix test: ``("movies",)`` covers ``movies/trailer1``."""
        labels = tuple(labels)
        return len(labels) <= len(self.prefix) and self.prefix[: len(labels)] == labels

    def child(self, *labels: str) -> "ContentName":
        return ContentName(self.prefix + labels)


class ForwardingId(bytes):
    """Network-visible routing handle: the prefix labels joined by ``/``."""

    def __repr__(self) -> str:
        return f"ForwardingId({bytes(self)!r})"


def make_name(prefix_labels: Iterable[str], suffix: Optional[bytes] = None) -> ContentName:
    return ContentName(tuple(prefix_labels), suffix)


def parse_name(text: str) -> ContentName:
    """Inverse of ``str(name)``; the suffix cannot be recovered from the wire."""
    if not text:
        raise EmptyPrefix("empty name")
    return ContentName(tuple(text.split(SEPARATOR)))


def routable(name: ContentName) -> ForwardingId:
    return ForwardingId(str(name).encode("utf-8"))


class BindingKind(enum.IntEnum):
    NONCE = 0
    SESSION_ID = 1


_BINDING_SIZES = {BindingKind.NONCE: NONCE_SIZE, BindingKind.SESSION_ID: SESSION_ID_SIZE}


@dataclass(frozen=True)
class HandshakeBinding:
    """Correlates the two subscriptions of one handshake."""

    kind: BindingKind
    value: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BindingKind(self.kind))
        size = _BINDING_SIZES[self.kind]
        if len(self.value) != size:
            raise ValueError(f"{self.kind.name} binding must be {size} bytes, got {len(self.value)}")

    @classmethod
    def nonce(cls, rng: RandomSource = secrets.token_bytes) -> "HandshakeBinding":
        return cls(BindingKind.NONCE, rng(NONCE_SIZE))

    @classmethod
    def session_id(cls, value: bytes) -> "HandshakeBinding":
        return cls(BindingKind.SESSION_ID, value)

    @property
    def key(self) -> tuple[int, bytes]:
        return (int(self.kind), self.value)


# TLS sends an empty session id in a fresh ClientHello; ours is fixed-size.
EMPTY_SESSION_ID = HandshakeBinding(BindingKind.SESSION_ID, bytes(SESSION_ID_SIZE))


def bind_subscription(name: ContentName, binding: HandshakeBinding) -> str:
    """Wire name for a handshake subscription: the prefix plus a hex nonce label.

    Session identifiers travel in the payload, so only nonce bindings are accepted.
    """
    if binding.kind is not BindingKind.NONCE:
        raise WrongBindingKind("session-id bindings ride in the payload, not the name")
    return str(name) + SEPARATOR + binding.value.hex()


def split_wire_name(wire_name: str, binding: Optional[HandshakeBinding]) -> ContentName:
    """Recover the content name from a wire name, stripping the nonce label if bound.

    Raises :class:`InvalidLabel` if a nonce binding does not match the final label.
    """
    name = parse_name(wire_name)
    if binding is not None and binding.kind is BindingKind.NONCE:
        if len(name.prefix) < 2 or name.prefix[-1] != binding.value.hex():
            raise InvalidLabel("wire name does not carry the bound nonce")
        return ContentName(name.prefix[:-1])
    return name
