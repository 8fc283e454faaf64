"""Mining open-source MPI code for collective call sites and fused-collective patterns."""

from mpirecon.errors import (
    BudgetError,
    ContractError,
    CredentialError,
    DomainError,
    FetchError,
    MpiReconError,
    NetworkError,
    ProtocolError,
    RateLimitError,
)
from mpirecon.records import (
    DEFAULT_COLLECTIVES,
    CallSite,
    CollectiveSet,
    FileRecord,
    Language,
    LineCounts,
    RepoRecord,
    ScanResult,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "CallSite",
    "CollectiveSet",
    "ContractError",
    "CredentialError",
    "DEFAULT_COLLECTIVES",
    "DomainError",
    "FetchError",
    "FileRecord",
    "Language",
    "LineCounts",
    "MpiReconError",
    "NetworkError",
    "ProtocolError",
    "RateLimitError",
    "RepoRecord",
    "ScanResult",
]
