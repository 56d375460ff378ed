# Exception hierarchy shared by every package.
# Verifiers never raise these for bad proofs; they return a Verdict instead.

class ZkIotError(Exception):
    """Base class for all errors raised by this project."""


# field-core
class DomainUnavailable(ZkIotError):
    """No multiplicative subgroup of the requested order exists."""


class ArityError(ZkIotError, ValueError):
    """A sequence has the wrong length."""


class NotInSubgroup(ZkIotError):
    pass


# r1cs
class NonCausalGate(ZkIotError):
    """A gate references a wire that is not strictly earlier."""


# poly-commit
class DegreeError(ZkIotError):
    pass


class OpeningIndexError(ZkIotError, IndexError):
    pass


# fc-scheme
class TooLarge(ZkIotError):
    pass


class RefuseToProve(ZkIotError):
    """The assignment does not satisfy the instance."""


# pcd-chain
class SequenceError(ZkIotError):
    pass


class LinkError(ZkIotError):
    pass


class UnknownKey(ZkIotError):
    pass


# device-sim
class RangeError(ZkIotError):
    pass


# ledger
class InsufficientFunds(ZkIotError):
    pass


class DuplicateSession(ZkIotError):
    pass


class UnknownSession(ZkIotError):
    pass


class StateError(ZkIotError):
    pass


class Unauthorized(ZkIotError):
    pass


class EncodingError(ZkIotError):
    """Bytes do not decode to a well-formed artifact."""


class NotFound(ZkIotError):
    pass


# relayer-protocol
class ProtocolViolation(ZkIotError):
    """An event arrived in a state where its kind is not permitted."""


# scenario-cli
class ConfigError(ZkIotError):
    """Scenario or key files are invalid. The message names the offending field."""
