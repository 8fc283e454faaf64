"""Record types passed between the scanner, the store and the pattern engine."""

from __future__ import annotations

import dataclasses
import datetime as dt
import enum
import re
from typing import Iterable, Iterator, Mapping

from mpirecon.errors import DomainError

DEFAULT_COLLECTIVES = (
    "Allgather",
    "Allreduce",
    "Alltoall",
    "Alltoallv",
    "Barrier",
    "Bcast",
    "Gather",
    "Gatherv",
    "Reduce",
    "Scatter",
    "Scatterv",
)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class Language(str, enum.Enum):
    C = "C"
    CPP = "C++"
    FORTRAN = "Fortran"
    CUDA = "CUDA"
    OPENCL = "OpenCL"

    @property
    def is_c_family(self) -> bool:
        return self is not Language.FORTRAN


@dataclasses.dataclass(frozen=True)
class LineCounts:
    openmp: int = 0
    openacc: int = 0
    cuda: int = 0
    opencl: int = 0
    c: int = 0
    cpp: int = 0
    fortran: int = 0
    total: int = 0

    def __add__(self, other: LineCounts) -> LineCounts:
        return LineCounts(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple[int, ...]:
        return dataclasses.astuple(self)


@dataclasses.dataclass(frozen=True, order=True)
class CallSite:
    """One textual ``MPI_<Name>`` invocation.

    ``column`` is the 1-based offset of the ``M``; it only breaks ties between
    calls sharing a line and is not part of the exported tables.
    """

    filename: str
    line_number: int
    column: int
    collective: str
    repo_id: str = ""


@dataclasses.dataclass(frozen=True)
class RepoRecord:
    repo_id: str
    owner: str
    revision_id: str
    clone_url: str
    retrieval_date: dt.date


@dataclasses.dataclass(frozen=True)
class FileRecord:
    repo_id: str
    filename: str
    counts: LineCounts
    language: Language | None = None


@dataclasses.dataclass
class ScanResult:
    repo: RepoRecord
    files: list[FileRecord]
    call_sites: list[CallSite]
    log: list[str] = dataclasses.field(default_factory=list)

    def totals(self) -> LineCounts:
        return sum((f.counts for f in self.files), LineCounts())


class CollectiveSet:
    """Ordered set of collective base names (``Allreduce``, not ``MPI_Allreduce``).

    ``aliases`` maps extra full identifiers (e.g. a project's own wrapper
    ``my_allreduce``) to a member name. It is empty by default.
    """

    def __init__(self, names: Iterable[str] = DEFAULT_COLLECTIVES, aliases: Mapping[str, str] | None = None):
        ordered: list[str] = []
        for name in names:
            if not _IDENT.match(name) or name.upper().startswith("MPI_"):
                raise DomainError(f"not a collective base name: {name!r}")
            if name not in ordered:
                ordered.append(name)
        if not ordered:
            raise DomainError("collective set is empty")
        self.names: tuple[str, ...] = tuple(ordered)
        self.aliases: dict[str, str] = dict(aliases or {})
        for alias, target in self.aliases.items():
            if not _IDENT.match(alias):
                raise DomainError(f"alias is not an identifier: {alias!r}")
            if target not in self.names:
                raise DomainError(f"alias {alias!r} targets unknown collective {target!r}")
        self._exact = {n: n for n in self.names}
        self._folded = {n.lower(): n for n in self.names}

    def __contains__(self, name: object) -> bool:
        return name in self._exact

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __repr__(self) -> str:
        return f"CollectiveSet({list(self.names)!r})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CollectiveSet):
            return NotImplemented
        return self.names == other.names and self.aliases == other.aliases

    def lookup(self, suffix: str, case_insensitive: bool = False) -> str | None:
        """Return the member matching the identifier tail after ``MPI_``."""
        if case_insensitive:
            return self._folded.get(suffix.lower())
        return self._exact.get(suffix)

    def check(self, name: str) -> str:
        if name not in self._exact:
            raise DomainError(f"unknown collective: {name!r}")
        return name
