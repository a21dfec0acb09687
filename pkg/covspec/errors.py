"""
Exceptions raised by covspec.

The families decide the exit code of the command line front end:
ProtocolError -> 3, TransportError -> 4, ConfigError and InputError -> 2.
"""


class CovspecError(Exception):
    pass


class ProtocolError(CovspecError):
    """
    a violated sampling or protocol invariant (a bug on one of the two roles)
    """


class InputError(CovspecError, ValueError):
    """
    an argument outside the domain of an operation
    """


class TransportError(CovspecError):
    pass


class ConfigError(CovspecError, ValueError):
    pass


# probcore
class InvalidLogits(ProtocolError, ValueError):
    pass


class TooFewTokens(ProtocolError, ValueError):
    pass


class DegenerateDraftProb(ProtocolError):
    pass


class EmptyResidual(ProtocolError):
    pass


# models
class InvalidPrefix(ProtocolError, ValueError):
    pass


class InvalidPlant(InputError):
    pass


# tokensel
class ZeroNormEmbedding(InputError):
    pass


class NoKeywords(InputError):
    pass


class InvalidK(InputError):
    pass


class InvalidM(InputError):
    pass


class InvalidRank(InputError):
    pass


# engine
class ContextDesync(ProtocolError):
    pass


class ProtocolFault(ProtocolError):
    pass


class PreconditionViolation(ProtocolError):
    pass


# comm
class InvalidValue(ProtocolError, ValueError):
    pass


class InvalidChannel(InputError):
    pass


class InvalidVocabulary(InputError):
    pass


class FrameError(TransportError):
    pass


class UnknownMessage(TransportError):
    pass


# transport
class TransportTimeout(TransportError):
    pass


class SessionClosed(TransportError):
    pass


class ConfigMismatch(TransportError):
    pass


# harness
class DegenerateBaseline(InputError):
    pass


class TooLarge(InputError):
    pass
