"""``mpi-recon`` command line: search, run, stats, pairs, homogeneity, export.

Settings come from built-in defaults, then an optional INI file (``--config``,
section ``[mpi-recon]``), then flags. Exit status is 0 on success, 1 for usage
errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from mpirecon import corpus_client, patterns, scanner
from mpirecon.corpus_client import HostingAPI, ManifestEntry, Partition, SearchSpec
from mpirecon.errors import BudgetError, DomainError, MpiReconError
from mpirecon.records import CollectiveSet, RepoRecord, ScanResult
from mpirecon.store import Store

logger = logging.getLogger(__name__)

CONFIG_SECTION = "mpi-recon"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(MpiReconError):
    pass


@dataclasses.dataclass
class PipelineConfig:
    search: SearchSpec = dataclasses.field(default_factory=SearchSpec)
    byte_budget: int = 2 * 1024**3
    workdir: Path = Path("./corpus")
    db_path: Path = Path("./mpi-recon.db")
    manifest: Path = Path("./manifest.jsonl")
    out_dir: Path = Path("./reports")
    collective_set: CollectiveSet = dataclasses.field(default_factory=CollectiveSet)
    default_pairs: tuple[tuple[str, str], ...] = patterns.DEFAULT_PAIRS
    epsilons: tuple[int, ...] = patterns.DEFAULT_EPSILONS
    delta: int = 2
    api_url: str = corpus_client.DEFAULT_API_URL
    resolve_revisions: bool = False
    workers: int = 1
    emit_scan: bool = False

    def __post_init__(self):
        if self.byte_budget <= 0:
            raise UsageError(f"budget must be positive, got {self.byte_budget}")
        if any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise UsageError(f"epsilons must be strictly increasing, got {list(self.epsilons)}")
        if any(e < 0 for e in self.epsilons):
            raise UsageError("epsilons must be non-negative")
        if self.delta < 2:
            raise UsageError(f"delta must be at least 2, got {self.delta}")
        for pair in self.default_pairs:
            for name in pair:
                if name not in self.collective_set:
                    raise UsageError(f"unknown collective {name!r} in pair {patterns.pair_label(pair)}")
            if pair[0] == pair[1]:
                raise UsageError(f"pair {patterns.pair_label(pair)} repeats one collective")


def _split(value: str) -> list[str]:
    return [v for v in value.replace(",", " ").split() if v]


def parse_pairs(value: str) -> tuple[tuple[str, str], ...]:
    pairs = []
    for item in _split(value):
        a, sep, b = item.partition(":")
        if not sep or not a or not b:
            raise UsageError(f"pair {item!r} is not of the form A:B")
        pairs.append((a, b))
    return tuple(pairs)


def parse_ints(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in _split(value))
    except ValueError as exc:
        raise UsageError(f"expected integers, got {value!r}") from exc


def _int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise UsageError(f"{key}: expected an integer, got {value!r}") from exc


def load_config(path: str | os.PathLike | None, overrides: dict[str, str]) -> PipelineConfig:
    """Merge the INI file (if any) with flag overrides; flags win."""
    raw: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if parser.has_section(CONFIG_SECTION):
            raw.update(parser.items(CONFIG_SECTION))
        else:
            raw.update(parser.defaults())
    raw.update({k: v for k, v in overrides.items() if v is not None})

    known = {
        "keywords", "languages", "max_results", "per_page", "query_template", "budget_bytes",
        "workdir", "db", "manifest", "out_dir", "collectives", "pairs", "eps", "delta",
        "api_url", "resolve_revisions", "workers", "emit_scan",
    }
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    search_kw = {}
    if "keywords" in raw:
        search_kw["keywords"] = tuple(_split(raw["keywords"]))
    if "languages" in raw:
        search_kw["languages"] = tuple(_split(raw["languages"]))
    for key in ("max_results", "per_page"):
        if key in raw:
            search_kw[key] = _int(key, raw[key])
    if "query_template" in raw:
        search_kw["query_template"] = raw["query_template"]

    kw: dict = {}
    try:
        kw["search"] = SearchSpec(**search_kw)
        if "collectives" in raw:
            kw["collective_set"] = CollectiveSet(_split(raw["collectives"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    if "budget_bytes" in raw:
        kw["byte_budget"] = _int("budget_bytes", raw["budget_bytes"])
    for key, field in (("workdir", "workdir"), ("db", "db_path"), ("manifest", "manifest"), ("out_dir", "out_dir")):
        if key in raw:
            kw[field] = Path(raw[key])
    if "pairs" in raw:
        kw["default_pairs"] = parse_pairs(raw["pairs"])
    if "eps" in raw:
        kw["epsilons"] = parse_ints(raw["eps"])
    if "delta" in raw:
        kw["delta"] = _int("delta", raw["delta"])
    if "workers" in raw:
        kw["workers"] = _int("workers", raw["workers"])
    if "api_url" in raw:
        kw["api_url"] = raw["api_url"]
    for key in ("resolve_revisions", "emit_scan"):
        if key in raw:
            kw[key] = str(raw[key]).strip().lower() in ("1", "true", "yes", "on")
    return PipelineConfig(**kw)


# ---------------------------------------------------------------------------
# pipeline


@dataclasses.dataclass
class RunSummary:
    ingested: list[ManifestEntry] = dataclasses.field(default_factory=list)
    already: list[ManifestEntry] = dataclasses.field(default_factory=list)
    failed: list[tuple[ManifestEntry, str]] = dataclasses.field(default_factory=list)


def repo_record(entry: ManifestEntry) -> RepoRecord:
    return RepoRecord(entry.repo_id, entry.owner, entry.default_revision, entry.clone_url, entry.retrieval_date)


def write_scan(scan: ScanResult, path: Path) -> None:
    """Scan records as JSON lines: one per file, then one per call site."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in scan.files:
            rec = {"type": "file", "repo_id": f.repo_id, "filename": f.filename}
            rec.update(dataclasses.asdict(f.counts))
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        for s in scan.call_sites:
            rec = {
                "type": "call_site",
                "repo_id": s.repo_id,
                "filename": s.filename,
                "collective": s.collective,
                "line_number": s.line_number,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def run_pipeline(
    entries: Sequence[ManifestEntry],
    store: Store,
    config: PipelineConfig,
    api: HostingAPI | None = None,
    *,
    observer: Callable[[Path], None] | None = None,
) -> RunSummary:
    """Fetch, scan, ingest and release the manifest one partition at a time.

    Entries already in the store under the same revision are skipped, so an
    interrupted run can simply be started again.
    """
    summary = RunSummary()
    pending = []
    for e in entries:
        (summary.already if store.has_repo(e.repo_id, e.default_revision) else pending).append(e)
    config.workdir.mkdir(parents=True, exist_ok=True)
    if config.emit_scan:
        config.out_dir.mkdir(parents=True, exist_ok=True)

    while pending:
        part = Partition(pending, config.byte_budget, config.workdir)
        try:
            result = corpus_client.fetch_partition(part, api, observer=observer)
        except BudgetError as exc:
            summary.failed.append((pending[0], str(exc)))
            pending = pending[1:]
            continue
        summary.failed.extend(result.failed)
        done = len(pending) - len(result.skipped)
        try:
            for entry, tree in result.fetched:
                try:
                    scan = scanner.scan_tree(tree, repo_record(entry), store.collectives, workers=config.workers)
                    store.ingest(scan)
                except (MpiReconError, OSError) as exc:
                    logger.warning("scan/ingest of %s/%s failed: %s", entry.owner, entry.name, exc)
                    summary.failed.append((entry, str(exc)))
                    continue
                if config.emit_scan:
                    write_scan(scan, config.out_dir / f"scan-{entry.slug}.jsonl")
                summary.ingested.append(entry)
        finally:
            corpus_client.release_partition(Partition(pending[:done], config.byte_budget, config.workdir))
            if observer is not None:
                observer(config.workdir)
        pending = result.skipped
    return summary


@contextlib.contextmanager
def db_lock(db_path: Path):
    """Exclusive advisory lock so only one pipeline writes a database."""
    import fcntl

    lock_path = Path(str(db_path) + ".lock")
    with open(lock_path, "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise MpiReconError(f"{db_path} is locked by another pipeline") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# ---------------------------------------------------------------------------
# subcommands


def _api(config: PipelineConfig, **kwargs) -> HostingAPI:
    return HostingAPI(config.api_url, corpus_client.token_from_env(), **kwargs)


def _open_db(config: PipelineConfig) -> Store:
    try:
        return Store.open_existing(config.db_path, None)
    except FileNotFoundError as exc:
        raise MpiReconError(str(exc)) from exc


def _pairs_label(pairs: Sequence[tuple[str, str]]) -> str:
    return f"{pairs[0][0]}-{pairs[0][1]}" if len(pairs) == 1 else "all"


def _check_pairs(store: Store, pairs: Sequence[tuple[str, str]]) -> None:
    for pair in pairs:
        for name in pair:
            if name not in store.collectives:
                raise UsageError(f"unknown collective {name!r} in pair {patterns.pair_label(pair)}")


def cmd_search(config: PipelineConfig, out=sys.stdout) -> int:
    with _api(config) as api:
        entries = corpus_client.search_repositories(config.search, api, resolve_revisions=config.resolve_revisions)
    config.manifest.parent.mkdir(parents=True, exist_ok=True)
    corpus_client.write_manifest(entries, config.manifest)
    print(f"{len(entries)} repositories written to {config.manifest}", file=out)
    return EXIT_OK


def cmd_run(config: PipelineConfig, out=sys.stdout, observer=None) -> int:
    try:
        entries = corpus_client.read_manifest(config.manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise MpiReconError(f"cannot read manifest {config.manifest}: {exc}") from exc
    config.db_path.parent.mkdir(parents=True, exist_ok=True)
    needs_api = any(corpus_client.local_archive_path(e.clone_url) is None for e in entries)
    api = _api(config) if needs_api else None
    with db_lock(config.db_path), Store(config.db_path, config.collective_set) as store:
        try:
            summary = run_pipeline(entries, store, config, api, observer=observer)
        finally:
            if api is not None:
                api.close()
    print(
        f"ingested {len(summary.ingested)}, already present {len(summary.already)}, "
        f"failed {len(summary.failed)}",
        file=out,
    )
    for entry, reason in summary.failed:
        print(f"failed\t{entry.owner}/{entry.name}\t{reason}", file=out)
    return EXIT_OK


def cmd_stats(config: PipelineConfig, out=sys.stdout) -> int:
    with _open_db(config) as store:
        rows = store.occurrence_table()
    config.out_dir.mkdir(parents=True, exist_ok=True)
    path = config.out_dir / "stats-all.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["collective", "occurrences"])
        w.writerows(rows)
    for name, n in rows:
        print(f"MPI_{name}\t{n}", file=out)
    return EXIT_OK


def cmd_pairs(config: PipelineConfig, out=sys.stdout) -> int:
    pairs = list(config.default_pairs)
    with _open_db(config) as store:
        _check_pairs(store, pairs)
        reports = patterns.sweep_epsilon(pairs, config.epsilons, store)
        ratios = []
        groups = []
        for pair in pairs:
            for eps in config.epsilons:
                try:
                    ratio = patterns.fusion_ratio(pair, eps, store)
                except DomainError:
                    ratio = None
                ratios.append((pair, eps, ratio))
                groups.append((pair, eps, *patterns.count_groups(pair, eps, config.delta, store)))
    config.out_dir.mkdir(parents=True, exist_ok=True)
    label = _pairs_label(pairs)
    patterns.write_sweep_csv(reports, config.out_dir / f"pairs-{label}.csv")
    patterns.write_sweep_plot(reports, config.out_dir / f"pairs-{label}.dat")
    patterns.write_ratio_csv(ratios, config.out_dir / f"pairs-ratio-{label}.csv")
    with open(config.out_dir / f"pairs-groups-{label}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "epsilon", "delta", "homogeneous", "mixed"])
        for pair, eps, homo, mixed in groups:
            w.writerow([patterns.pair_label(pair), eps, config.delta, homo, mixed])
    for r in reports:
        print(patterns.pair_label(r.pair), " ".join(f"{e}:{c}" for e, c in r.rows), file=out)
    return EXIT_OK


def cmd_homogeneity(config: PipelineConfig, out=sys.stdout) -> int:
    pairs = list(config.default_pairs)
    with _open_db(config) as store:
        _check_pairs(store, pairs)
        reports = [patterns.homogeneity_distribution(p, store) for p in pairs]
    config.out_dir.mkdir(parents=True, exist_ok=True)
    label = _pairs_label(pairs)
    patterns.write_homogeneity_csv(reports, config.out_dir / f"homogeneity-{label}.csv")
    patterns.write_homogeneity_plot(reports, config.out_dir / f"homogeneity-{label}.dat")
    for r in reports:
        if r.empty:
            print(patterns.pair_label(r.pair), patterns.EMPTY, file=out)
        else:
            print(patterns.pair_label(r.pair), r.homogeneous_pct, r.mixed_pct, file=out)
    return EXIT_OK


def cmd_export(config: PipelineConfig, out=sys.stdout) -> int:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    with _open_db(config) as store:
        for table in ("metadata", "collectives"):
            path = config.out_dir / f"export-{table}.csv"
            n = store.export_csv(table, path)
            print(f"{n} {table} rows written to {path}", file=out)
    return EXIT_OK


COMMANDS = {
    "search": cmd_search,
    "run": cmd_run,
    "stats": cmd_stats,
    "pairs": cmd_pairs,
    "homogeneity": cmd_homogeneity,
    "export": cmd_export,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="INI file with a [mpi-recon] section")
    p.add_argument("--db", default=s, help="corpus database file")
    p.add_argument("--manifest", default=s, help="manifest file (JSON lines)")
    p.add_argument("--workdir", default=s, help="directory archives are unpacked into")
    p.add_argument("--budget-bytes", default=s, help="max unpacked bytes on disk per partition")
    p.add_argument("--keywords", default=s, help="collective keywords to search, comma separated")
    p.add_argument("--languages", default=s, help="search languages: C, C++, Fortran")
    p.add_argument("--max-results", default=s, help="max hits per (keyword, language) query")
    p.add_argument("--per-page", default=s, help="search page size (API maximum 100)")
    p.add_argument("--query-template", default=s, help="search query, with {keyword} and {language} fields")
    p.add_argument("--resolve-revisions", action="store_const", const="true", default=s,
                   help="pin each repository to its current head commit id")
    p.add_argument("--collectives", default=s, help="collective names to scan for, comma separated")
    p.add_argument("--pairs", default=s, help="collective pairs as A:B,C:D")
    p.add_argument("--eps", default=s, help="line spans, comma separated, increasing")
    p.add_argument("--delta", default=s, help="minimum group size for repeated groups")
    p.add_argument("--out-dir", default=s, help="report directory (default ./reports)")
    p.add_argument("--emit-scan", action="store_const", const="true", default=s,
                   help="write per-repository scan records as JSON lines to --out-dir")
    p.add_argument("--api-url", default=s, help="hosting API base URL")
    p.add_argument("--workers", default=s, help="parallel file scanners")
    p.add_argument("-v", "--verbose", action="store_true", default=s)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(
        prog="mpi-recon",
        description="Mine MPI codebases for collective call sites and complex-collective patterns.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "search": "search the hosting API and write the manifest",
        "run": "fetch, scan and ingest the manifest into the database",
        "stats": "occurrences per collective",
        "pairs": "pair co-occurrence counts over the epsilon sweep",
        "homogeneity": "homogeneous vs mixed split per pair",
        "export": "metadata and collectives tables as CSV",
    }
    for name, text in helps.items():
        sub.add_parser(name, help=text, description=text, parents=[common])
    return parser


_FLAG_KEYS = (
    "db", "manifest", "workdir", "budget_bytes", "keywords", "languages", "max_results",
    "per_page", "query_template", "resolve_revisions", "collectives", "pairs", "eps", "delta", "out_dir", "emit_scan", "api_url", "workers",
)


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    ns = vars(args)
    logging.basicConfig(
        level=logging.INFO if ns.get("verbose") else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not ns.get("command"):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        overrides = {key: ns[key] for key in _FLAG_KEYS if key in ns}
        config = load_config(ns.get("config"), overrides)
        return COMMANDS[ns["command"]](config, out=out)
    except UsageError as exc:
        print(f"mpi-recon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MpiReconError, OSError) as exc:
        print(f"mpi-recon: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
