"""Exception hierarchy shared across the package."""


class FedCBSError(Exception):
    """Base class for every error raised by this package."""


class InvalidDistribution(FedCBSError, ValueError):
    pass


class EmptySubset(FedCBSError, ValueError):
    pass


class UnknownClient(FedCBSError, KeyError):
    pass


class ShapeError(FedCBSError, ValueError):
    pass


class DuplicateCandidate(FedCBSError, ValueError):
    pass


class EnumerationTooLarge(FedCBSError, ValueError):
    pass


class NotEnoughClients(FedCBSError, ValueError):
    pass


class InvalidCandidateCount(FedCBSError, ValueError):
    pass


class TooManyClients(FedCBSError, ValueError):
    pass


class PartitionInfeasible(FedCBSError, ValueError):
    pass


class EmptyDataset(FedCBSError, ValueError):
    pass


class NoUpdates(FedCBSError, ValueError):
    pass


class InvalidSteps(FedCBSError, ValueError):
    pass


class ProtocolError(FedCBSError, RuntimeError):
    pass


class PrivacyViolation(ProtocolError):
    """A party observed plaintext it is not entitled to."""


class AbsentWitness(FedCBSError, ValueError):
    """No column permutation changes the distribution matrix."""


class ConfigError(FedCBSError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
