"""Content-oriented TLS for information-centric networks.

Subpackages map onto the protocol layers: :mod:`names` and :mod:`credentials`
define what is authenticated, :mod:`wire` how it is encoded, :mod:`handshake`
and :mod:`session` the key exchange and record layer, :mod:`middlebox` the
delegated-signing cache, and :mod:`simnet` a deterministic network to run it on.
"""

from __future__ import annotations

from .errors import IcnTlsError
from .names import ContentName, make_name, parse_name

__all__ = ["ContentName", "IcnTlsError", "make_name", "parse_name"]
__version__ = "0.1.0"
