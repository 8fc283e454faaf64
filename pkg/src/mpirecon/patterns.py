"""Complex-collective detection over per-file call-site sequences.

A group is a run of call sites from one file. Its span is last line minus first
line, so sites at lines 93 and 98 form a (5, 2)-repeated group and sites at 200,
217, 227 and 230 form a (30, 4)-repeated one. Every corpus-level number here is
a sum of independent per-file numbers; nothing spans two files.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import enum
import os
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, NamedTuple, Protocol, Sequence

from mpirecon.errors import ContractError, DomainError

DEFAULT_PAIRS: tuple[tuple[str, str], ...] = (
    ("Gather", "Scatter"),
    ("Allreduce", "Allgather"),
    ("Allreduce", "Alltoall"),
    ("Reduce", "Bcast"),
    ("Gatherv", "Gather"),
    ("Scatterv", "Scatter"),
)

DEFAULT_EPSILONS: tuple[int, ...] = (0, 5, 10, 20, 30, 50, 100)

EMPTY = "empty"


class Site(Protocol):
    collective: str
    line_number: int


class Classification(str, enum.Enum):
    HOMOGENEOUS = "Homogeneous"
    MIXED = "Mixed"


@dataclasses.dataclass(frozen=True)
class PatternQuery:
    names: frozenset[str]
    epsilon: int | None = None
    delta: int = 2

    def __post_init__(self):
        object.__setattr__(self, "names", frozenset(self.names))
        if not self.names:
            raise DomainError("pattern query needs at least one collective name")
        if self.epsilon is not None and self.epsilon < 0:
            raise DomainError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.delta < 2:
            raise DomainError(f"delta must be at least 2, got {self.delta}")


@dataclasses.dataclass(frozen=True)
class PatternGroup:
    repo_id: str
    filename: str
    sites: tuple
    classification: Classification

    @property
    def span(self) -> int:
        return self.sites[-1].line_number - self.sites[0].line_number

    @property
    def size(self) -> int:
        return len(self.sites)


@dataclasses.dataclass(frozen=True)
class PairSweepReport:
    pair: tuple[str, str]
    rows: list[tuple[int, int]]


@dataclasses.dataclass(frozen=True)
class HomogeneityReport:
    pair: tuple[str, str]
    homogeneous: int
    mixed: int
    homogeneous_pct: Decimal | None
    mixed_pct: Decimal | None

    @property
    def empty(self) -> bool:
        return self.homogeneous + self.mixed == 0


class FusionRatio(NamedTuple):
    pct_of_a: Decimal
    pct_of_b: Decimal


def percent(part: int, whole: int) -> Decimal:
    """100 * part / whole to one decimal place, halves rounded up."""
    return (Decimal(100 * part) / Decimal(whole)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


def _check_sorted(sites: Sequence[Site]) -> None:
    for prev, cur in zip(sites, sites[1:]):
        if cur.line_number < prev.line_number:
            raise ContractError(
                f"sites not sorted by line: {prev.collective}@{prev.line_number} "
                f"before {cur.collective}@{cur.line_number}"
            )


def classify_group(sites: Sequence[Site]) -> Classification:
    if len(sites) < 2:
        raise DomainError(f"a complex collective needs at least 2 sites, got {len(sites)}")
    if len({s.collective for s in sites}) == 1:
        return Classification.HOMOGENEOUS
    return Classification.MIXED


def _group(run: Sequence[Site]) -> PatternGroup:
    first = run[0]
    return PatternGroup(
        getattr(first, "repo_id", ""),
        getattr(first, "filename", ""),
        tuple(run),
        classify_group(run),
    )


def find_repeated_groups(sites: Sequence[Site], query: PatternQuery) -> list[PatternGroup]:
    """Greedy left-to-right maximal runs of ``query.names`` sites.

    A run grows while its span stays within ``query.epsilon`` (unbounded when
    None); runs never overlap and only those with at least ``query.delta``
    sites are returned. ``sites`` must come from one file, sorted by line.
    """
    _check_sorted(sites)
    kept = [s for s in sites if s.collective in query.names]
    if query.epsilon is None:
        runs = [kept] if kept else []
    else:
        runs = []
        start = 0
        for i in range(1, len(kept) + 1):
            if i == len(kept) or kept[i].line_number - kept[start].line_number > query.epsilon:
                runs.append(kept[start:i])
                start = i
    return [_group(run) for run in runs if len(run) >= query.delta]


def _lines_of(sites: Sequence[Site], name: str) -> list[int]:
    return [s.line_number for s in sites if s.collective == name]


def count_pair_cooccurrences(sites: Sequence[Site], a: str, b: str, epsilon: int) -> int:
    """Number of (a-site, b-site) pairs at most ``epsilon`` lines apart."""
    if a == b:
        raise DomainError(f"pair needs two different collectives, got ({a}, {a}); use find_repeated_groups")
    _check_sorted(sites)
    b_lines = _lines_of(sites, b)
    total = 0
    for line in _lines_of(sites, a):
        total += bisect.bisect_right(b_lines, line + epsilon) - bisect.bisect_left(b_lines, line - epsilon)
    return total


def paired_sites(sites: Sequence[Site], a: str, b: str, epsilon: int) -> tuple[int, int]:
    """How many distinct a-sites and b-sites take part in at least one pair."""
    _check_sorted(sites)
    a_lines, b_lines = _lines_of(sites, a), _lines_of(sites, b)

    def hits(src: list[int], other: list[int]) -> int:
        return sum(
            1
            for line in src
            if bisect.bisect_right(other, line + epsilon) > bisect.bisect_left(other, line - epsilon)
        )

    return hits(a_lines, b_lines), hits(b_lines, a_lines)


def adjacent_classifications(sites: Sequence[Site], a: str, b: str) -> tuple[int, int]:
    """(homogeneous, mixed) over consecutive pairs of the {a, b}-only sequence."""
    _check_sorted(sites)
    kept = [s for s in sites if s.collective in (a, b)]
    homo = mixed = 0
    for pair in zip(kept, kept[1:]):
        if classify_group(pair) is Classification.HOMOGENEOUS:
            homo += 1
        else:
            mixed += 1
    return homo, mixed


# -- corpus level -------------------------------------------------------------


class SiteSource(Protocol):
    def call_sites_by_file(self, repo_id=None, collectives=None, revision_id=None): ...

    def total_occurrences(self, collective: str) -> int: ...


def _check_pair(pair: Sequence[str]) -> tuple[str, str]:
    a, b = pair
    if a == b:
        raise DomainError(f"pair needs two different collectives, got ({a}, {b})")
    return a, b


def _validate_names(store: SiteSource, names: Iterable[str]) -> None:
    cset = getattr(store, "collectives", None)
    if cset is not None:
        for name in names:
            cset.check(name)


def sweep_epsilon(
    pairs: Sequence[tuple[str, str]] | None,
    epsilons: Sequence[int],
    store: SiteSource,
) -> list[PairSweepReport]:
    """Corpus-wide pair counts for each pair and each epsilon (ascending)."""
    pairs = [_check_pair(p) for p in (pairs if pairs is not None else DEFAULT_PAIRS)]
    if not epsilons:
        raise DomainError("epsilon list is empty")
    eps = sorted(set(epsilons))
    if eps[0] < 0:
        raise DomainError(f"epsilon must be non-negative, got {eps[0]}")
    names = {n for p in pairs for n in p}
    _validate_names(store, names)
    totals = {p: [0] * len(eps) for p in pairs}
    for _, sites in store.call_sites_by_file(collectives=names):
        for a, b in pairs:
            row = totals[(a, b)]
            for i, e in enumerate(eps):
                row[i] += count_pair_cooccurrences(sites, a, b, e)
    return [PairSweepReport(p, list(zip(eps, totals[p]))) for p in pairs]


def fusion_ratio(pair: tuple[str, str], epsilon: int, store: SiteSource) -> FusionRatio:
    """Percent of all a-sites (and of all b-sites) that pair up within ``epsilon``."""
    a, b = _check_pair(pair)
    _validate_names(store, (a, b))
    denominators = {}
    for name in (a, b):
        denominators[name] = store.total_occurrences(name)
        if denominators[name] == 0:
            raise DomainError(f"no occurrences of {name} in the store; ratio undefined")
    hit_a = hit_b = 0
    for _, sites in store.call_sites_by_file(collectives=(a, b)):
        ha, hb = paired_sites(sites, a, b, epsilon)
        hit_a += ha
        hit_b += hb
    return FusionRatio(percent(hit_a, denominators[a]), percent(hit_b, denominators[b]))


def homogeneity_distribution(pair: tuple[str, str], store: SiteSource) -> HomogeneityReport:
    """Homogeneous vs mixed split over adjacent {a, b} site pairs, no epsilon."""
    a, b = _check_pair(pair)
    _validate_names(store, (a, b))
    homo = mixed = 0
    for _, sites in store.call_sites_by_file(collectives=(a, b)):
        h, m = adjacent_classifications(sites, a, b)
        homo += h
        mixed += m
    total = homo + mixed
    if total == 0:
        return HomogeneityReport((a, b), 0, 0, None, None)
    homo_pct = percent(homo, total)
    # complement keeps the two columns summing to exactly 100.0
    return HomogeneityReport((a, b), homo, mixed, homo_pct, Decimal(100) - homo_pct)


def count_groups(
    pair_or_names: Iterable[str], epsilon: int | None, delta: int, store: SiteSource
) -> tuple[int, int]:
    """(homogeneous, mixed) counts of (epsilon, delta)-repeated groups in the corpus."""
    q = PatternQuery(frozenset(pair_or_names), epsilon, delta)
    _validate_names(store, q.names)
    homo = mixed = 0
    for _, sites in store.call_sites_by_file(collectives=q.names):
        for g in find_repeated_groups(sites, q):
            if g.classification is Classification.HOMOGENEOUS:
                homo += 1
            else:
                mixed += 1
    return homo, mixed


# -- report files ---------------------------------------------------------------


def pair_label(pair: Sequence[str]) -> str:
    return f"{pair[0]}:{pair[1]}"


def write_sweep_csv(reports: Sequence[PairSweepReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "epsilon", "count"])
        for r in reports:
            for eps, count in r.rows:
                w.writerow([pair_label(r.pair), eps, count])


def write_sweep_plot(reports: Sequence[PairSweepReport], path: str | os.PathLike) -> None:
    """Whitespace-separated matrix: one epsilon per row, one pair per column."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# epsilon " + " ".join(pair_label(r.pair) for r in reports) + "\n")
        if not reports:
            return
        for i, (eps, _) in enumerate(reports[0].rows):
            fh.write(" ".join([str(eps)] + [str(r.rows[i][1]) for r in reports]) + "\n")


def write_homogeneity_csv(reports: Sequence[HomogeneityReport], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "homogeneous_pct", "mixed_pct"])
        for r in reports:
            if r.empty:
                w.writerow([pair_label(r.pair), EMPTY, EMPTY])
            else:
                w.writerow([pair_label(r.pair), r.homogeneous_pct, r.mixed_pct])


def write_homogeneity_plot(reports: Sequence[HomogeneityReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# pair homogeneous_pct mixed_pct\n")
        for r in reports:
            if r.empty:
                fh.write(f"{pair_label(r.pair)} {EMPTY} {EMPTY}\n")
            else:
                fh.write(f"{pair_label(r.pair)} {r.homogeneous_pct} {r.mixed_pct}\n")


def write_ratio_csv(rows: Sequence[tuple[tuple[str, str], int, FusionRatio | None]], path: str | os.PathLike) -> None:
    """``rows`` are (pair, epsilon, ratio); a None ratio (zero denominator) is written as ``empty``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "epsilon", "pct_a", "pct_b"])
        for pair, eps, ratio in rows:
            if ratio is None:
                w.writerow([pair_label(pair), eps, EMPTY, EMPTY])
            else:
                w.writerow([pair_label(pair), eps, ratio.pct_of_a, ratio.pct_of_b])
