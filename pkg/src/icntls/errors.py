"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class IcnTlsError(Exception):
    """Base class for all errors raised by :mod:`icntls`."""


# --- names -----------------------------------------------------------------


class NameError_(IcnTlsError, ValueError):
    pass


class EmptyPrefix(NameError_):
    pass


class InvalidLabel(NameError_):
    pass


class WrongBindingKind(NameError_):
    pass


# --- credentials -----------------------------------------------------------


class CredentialError(IcnTlsError):
    pass


class EmptyAuthorization(CredentialError, ValueError):
    pass


class InvalidValidityWindow(CredentialError, ValueError):
    pass


class BadSignature(CredentialError):
    pass


class Expired(CredentialError):
    pass


class NotYetValid(CredentialError):
    pass


# --- wire ------------------------------------------------------------------


class WireError(IcnTlsError, ValueError):
    pass


class Truncated(WireError):
    pass


class UnknownType(WireError):
    pass


class BadFieldLength(WireError):
    pass


class TrailingBytes(WireError):
    pass


class OversizeField(WireError):
    pass


class MalformedField(WireError):
    """A field has the right length but an unacceptable value."""


# --- handshake -------------------------------------------------------------


class HandshakeError(IcnTlsError):
    pass


class NoEphemeralSuite(HandshakeError, ValueError):
    pass


class NotAuthorized(HandshakeError):
    pass


class NoCommonSuite(HandshakeError):
    pass


class SignerRefused(HandshakeError):
    pass


class BadCertificate(HandshakeError):
    pass


class NotAuthorizedForName(HandshakeError):
    pass


class BadTranscriptSignature(HandshakeError):
    pass


class SuiteMismatch(HandshakeError):
    pass


class UnknownBinding(HandshakeError):
    pass


class BadFinishedMac(HandshakeError):
    pass


class ZeroSharedSecret(HandshakeError):
    pass


class UnexpectedMessage(HandshakeError):
    """Message arrived in the wrong phase or does not belong to this flow."""


class HandshakeAborted(HandshakeError):
    """The peer answered with an Alert."""


# --- session ---------------------------------------------------------------


class SessionError(IcnTlsError):
    pass


class SequenceExhausted(SessionError):
    pass


class AuthFailure(SessionError):
    pass


class Replay(SessionError):
    pass


class WrongDirection(SessionError):
    pass


class ExpiredTicketKey(SessionError):
    pass


class TicketNameMismatch(SessionError):
    pass


class TicketAuthFailure(AuthFailure):
    pass


class TooEarly(SessionError):
    pass


class UnknownKeyId(SessionError):
    pass


class FallbackToFull(IcnTlsError):
    """Signal: the ticket cannot be used here, run a full handshake instead.

    Not a failure; the publisher is expected to catch it and answer the
    hello with a regular server flight.
    """


# --- middlebox -------------------------------------------------------------


class MiddleboxError(IcnTlsError):
    pass


class NoContent(MiddleboxError):
    pass


class NoUpstreamChannel(MiddleboxError):
    pass


class Refused(MiddleboxError):
    pass


class UnknownMiddlebox(MiddleboxError):
    pass


class BadDelegatedSignature(MiddleboxError):
    pass


class UpstreamAuthFailure(MiddleboxError):
    pass


class NoDownstream(MiddleboxError):
    pass


# --- simnet ----------------------------------------------------------------


class SimError(IcnTlsError):
    pass


class InvalidTopology(SimError, ValueError):
    pass


class DisconnectedTopology(InvalidTopology):
    pass


class UnknownNode(SimError, KeyError):
    pass


class NoRoute(SimError):
    pass


class FlowIncomplete(SimError):
    pass


# --- cli -------------------------------------------------------------------


class CliError(IcnTlsError):
    exit_code = 3


class InvalidRange(CliError, ValueError):
    pass


class WriteFailure(CliError):
    pass


class MissingOwnerKey(CliError):
    pass


class FixtureExists(CliError):
    pass


FileExists = FixtureExists


class ScenarioFailed(CliError):
    exit_code = 2
