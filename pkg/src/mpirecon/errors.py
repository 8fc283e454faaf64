"""Exception hierarchy shared by every stage of the pipeline."""


class MpiReconError(Exception):
    """Base class for all errors raised by mpirecon."""


class DomainError(MpiReconError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class ContractError(MpiReconError, ValueError):
    """A caller broke an input precondition (e.g. unsorted sites)."""


class CredentialError(MpiReconError):
    """No API token, or the hosting service rejected it."""


class RateLimitError(MpiReconError):
    """The hosting service kept rate-limiting after the retry budget was spent."""


class ProtocolError(MpiReconError):
    """The hosting service returned something we cannot interpret."""

    def __init__(self, message: str, *, query: str | None = None, page: int | None = None):
        super().__init__(message)
        self.query = query
        self.page = page


class BudgetError(MpiReconError):
    """Nothing could be fetched within the partition's byte budget."""


class NetworkError(MpiReconError):
    """A transport failure persisted through every retry."""


class FetchError(MpiReconError):
    """One repository archive could not be downloaded or unpacked."""
