"""Exception hierarchy shared by all protocol modules."""


class LipiError(Exception):
    pass


class DomainError(LipiError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NoInverseError(DomainError):
    pass


class ProtocolError(LipiError):
    """Values gathered in a round are inconsistent with each other."""


class IncompleteSetError(ProtocolError):
    """A de-masking step is missing one or more participants' values."""

    def __init__(self, missing, message=None):
        self.missing = frozenset(missing)
        super().__init__(message or f"missing masked values from nodes {sorted(self.missing)}")


class ReconstructionError(ProtocolError):
    pass


class ConfigError(LipiError, ValueError):
    pass
