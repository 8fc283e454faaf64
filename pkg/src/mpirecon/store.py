"""SQLite-backed store for repository metadata and collective call sites.

Two tables hold per-file metadata and per-call-site rows.
Both carry ``revision_id`` next to ``repo_id`` so that two snapshots of the same
project can live side by side; re-ingesting a snapshot replaces its rows.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import itertools
import json
import os
import sqlite3
from pathlib import Path
from typing import Iterable, Iterator

from mpirecon.errors import DomainError
from mpirecon.records import CallSite, CollectiveSet, LineCounts, RepoRecord, ScanResult

SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS repos (
    repo_id        TEXT NOT NULL,
    revision_id    TEXT NOT NULL,
    owner          TEXT NOT NULL,
    clone_url      TEXT NOT NULL,
    retrieval_date TEXT NOT NULL,
    PRIMARY KEY (repo_id, revision_id)
);
CREATE TABLE IF NOT EXISTS files (
    repo_id       TEXT NOT NULL,
    revision_id   TEXT NOT NULL,
    filename      TEXT NOT NULL,
    openmp_lines  INTEGER NOT NULL CHECK (openmp_lines >= 0),
    openacc_lines INTEGER NOT NULL CHECK (openacc_lines >= 0),
    cuda_lines    INTEGER NOT NULL CHECK (cuda_lines >= 0),
    opencl_lines  INTEGER NOT NULL CHECK (opencl_lines >= 0),
    c_lines       INTEGER NOT NULL CHECK (c_lines >= 0),
    cpp_lines     INTEGER NOT NULL CHECK (cpp_lines >= 0),
    fortran_lines INTEGER NOT NULL CHECK (fortran_lines >= 0),
    total_lines   INTEGER NOT NULL CHECK (total_lines >= 0),
    PRIMARY KEY (repo_id, revision_id, filename),
    FOREIGN KEY (repo_id, revision_id) REFERENCES repos (repo_id, revision_id) ON DELETE CASCADE
);
CREATE TABLE IF NOT EXISTS collectives (
    repo_id       TEXT NOT NULL,
    revision_id   TEXT NOT NULL,
    filename      TEXT NOT NULL,
    collective    TEXT NOT NULL,
    line_number   INTEGER NOT NULL CHECK (line_number >= 1),
    column_number INTEGER NOT NULL,
    PRIMARY KEY (repo_id, revision_id, filename, line_number, column_number),
    FOREIGN KEY (repo_id, revision_id, filename)
        REFERENCES files (repo_id, revision_id, filename) ON DELETE CASCADE
);
CREATE INDEX IF NOT EXISTS collectives_by_name ON collectives (collective);
"""

METADATA_HEADER = (
    "Repo ID",
    "Owner",
    "Filename",
    "Revision ID",
    "Clone URL",
    "Retrieval Date",
    "OpenMP Lines",
    "OpenACC Lines",
    "CUDA Lines",
    "OpenCL Lines",
    "C Lines",
    "CPP Lines",
    "Fortran Lines",
    "Total Lines",
)
# Repo ID and Revision ID are added to the three collectives columns so rows
# from different repositories (or snapshots) stay distinguishable.
COLLECTIVES_HEADER = ("Repo ID", "Revision ID", "Filename", "Collective Call", "Line Number")

_TABLES = ("repos", "files", "collectives")


@dataclasses.dataclass(frozen=True, order=True)
class StoredCallSite:
    repo_id: str
    revision_id: str
    filename: str
    line_number: int
    column: int
    collective: str

    def as_call_site(self) -> CallSite:
        return CallSite(self.filename, self.line_number, self.column, self.collective, self.repo_id)


@dataclasses.dataclass(frozen=True)
class IngestSummary:
    repos: int
    files: int
    call_sites: int


class Store:
    """Open (creating if needed) a corpus database at ``path``.

    ``collectives`` defaults to the set recorded when the database was created.
    """

    def __init__(self, path: str | os.PathLike = ":memory:", collectives: CollectiveSet | None = None):
        self.path = str(path)
        self._conn = sqlite3.connect(self.path)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._conn.executescript(SCHEMA)
        row = self._conn.execute("SELECT value FROM meta WHERE key = 'collectives'").fetchone()
        if row is None:
            self.collectives = collectives or CollectiveSet()
            with self._conn:
                self._conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('collectives', ?)",
                    (json.dumps(list(self.collectives.names)),),
                )
        else:
            self.collectives = collectives or CollectiveSet(json.loads(row[0]))

    @classmethod
    def open_existing(cls, path: str | os.PathLike, collectives: CollectiveSet | None = None) -> Store:
        if not Path(path).is_file():
            raise FileNotFoundError(f"no database at {path}")
        return cls(path, collectives)

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> Store:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- ingestion ---------------------------------------------------------

    def ingest(self, scan: ScanResult) -> IngestSummary:
        """Insert one scan in a single transaction, replacing any earlier
        ingestion of the same (repo_id, revision_id)."""
        repo = scan.repo
        for site in scan.call_sites:
            self.collectives.check(site.collective)
        key = (repo.repo_id, repo.revision_id)
        file_rows = [
            (repo.repo_id, repo.revision_id, f.filename, *f.counts.as_tuple()) for f in scan.files
        ]
        site_rows = [
            (repo.repo_id, repo.revision_id, s.filename, s.collective, s.line_number, s.column)
            for s in scan.call_sites
        ]
        with self._conn:
            self._conn.execute("DELETE FROM repos WHERE repo_id = ? AND revision_id = ?", key)
            self._conn.execute(
                "INSERT INTO repos VALUES (?, ?, ?, ?, ?)",
                (*key, repo.owner, repo.clone_url, repo.retrieval_date.isoformat()),
            )
            self._conn.executemany("INSERT INTO files VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)", file_rows)
            self._conn.executemany("INSERT INTO collectives VALUES (?, ?, ?, ?, ?, ?)", site_rows)
        return IngestSummary(1, len(file_rows), len(site_rows))

    def has_repo(self, repo_id: str, revision_id: str) -> bool:
        row = self._conn.execute(
            "SELECT 1 FROM repos WHERE repo_id = ? AND revision_id = ?", (repo_id, revision_id)
        ).fetchone()
        return row is not None

    # -- queries -----------------------------------------------------------

    def total_occurrences(self, collective: str) -> int:
        self.collectives.check(collective)
        (n,) = self._conn.execute(
            "SELECT COUNT(*) FROM collectives WHERE collective = ?", (collective,)
        ).fetchone()
        return n

    def occurrence_table(self) -> list[tuple[str, int]]:
        """(collective, count) for every configured collective, most frequent first."""
        counts = dict(self._conn.execute("SELECT collective, COUNT(*) FROM collectives GROUP BY collective"))
        order = {name: i for i, name in enumerate(self.collectives.names)}
        rows = [(name, counts.get(name, 0)) for name in self.collectives.names]
        return sorted(rows, key=lambda r: (-r[1], order[r[0]]))

    def row_counts(self) -> dict[str, int]:
        return {t: self._conn.execute(f"SELECT COUNT(*) FROM {t}").fetchone()[0] for t in _TABLES}

    def repos(self) -> list[RepoRecord]:
        rows = self._conn.execute(
            "SELECT repo_id, owner, revision_id, clone_url, retrieval_date FROM repos "
            "ORDER BY repo_id, revision_id"
        )
        return [RepoRecord(r[0], r[1], r[2], r[3], dt.date.fromisoformat(r[4])) for r in rows]

    def file_counts(self, repo_id: str, revision_id: str) -> dict[str, LineCounts]:
        rows = self._conn.execute(
            "SELECT filename, openmp_lines, openacc_lines, cuda_lines, opencl_lines, c_lines, "
            "cpp_lines, fortran_lines, total_lines FROM files WHERE repo_id = ? AND revision_id = ? "
            "ORDER BY filename",
            (repo_id, revision_id),
        )
        return {r[0]: LineCounts(*r[1:]) for r in rows}

    def call_sites_by_file(
        self,
        repo_id: str | None = None,
        collectives: Iterable[str] | None = None,
        revision_id: str | None = None,
    ) -> Iterator[tuple[tuple[str, str, str], list[StoredCallSite]]]:
        """Yield ``((repo_id, revision_id, filename), sites)`` per file.

        Files come in key order, sites in line order. Files with no matching
        site are not yielded.
        """
        where, params = [], []
        if repo_id is not None:
            where.append("repo_id = ?")
            params.append(repo_id)
        if revision_id is not None:
            where.append("revision_id = ?")
            params.append(revision_id)
        if collectives is not None:
            names = sorted(set(collectives))
            if not names:
                return
            where.append(f"collective IN ({','.join('?' * len(names))})")
            params.extend(names)
        sql = "SELECT repo_id, revision_id, filename, line_number, column_number, collective FROM collectives"
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += " ORDER BY repo_id, revision_id, filename, line_number, column_number"
        rows = (StoredCallSite(*r) for r in self._conn.execute(sql, params))
        for key, group in itertools.groupby(rows, key=lambda s: (s.repo_id, s.revision_id, s.filename)):
            yield key, list(group)

    # -- export ------------------------------------------------------------

    def export_csv(self, table: str, path: str | os.PathLike) -> int:
        """Write ``metadata`` or ``collectives`` as RFC 4180 CSV; returns data rows written."""
        if table == "metadata":
            header = METADATA_HEADER
            rows = self._conn.execute(
                "SELECT r.repo_id, r.owner, f.filename, r.revision_id, r.clone_url, r.retrieval_date, "
                "f.openmp_lines, f.openacc_lines, f.cuda_lines, f.opencl_lines, f.c_lines, "
                "f.cpp_lines, f.fortran_lines, f.total_lines "
                "FROM files f JOIN repos r USING (repo_id, revision_id) "
                "ORDER BY f.repo_id, f.revision_id, f.filename"
            )
        elif table == "collectives":
            header = COLLECTIVES_HEADER
            rows = self._conn.execute(
                "SELECT repo_id, revision_id, filename, collective, line_number FROM collectives "
                "ORDER BY repo_id, revision_id, filename, line_number, column_number"
            )
        else:
            raise DomainError(f"unknown table {table!r}; expected 'metadata' or 'collectives'")
        n = 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
                n += 1
        return n

    def digest(self) -> str:
        """SHA-256 over the ordered contents of every data table."""
        h = hashlib.sha256()
        orders = {
            "repos": "repo_id, revision_id",
            "files": "repo_id, revision_id, filename",
            "collectives": "repo_id, revision_id, filename, line_number, column_number",
        }
        for table in _TABLES:
            h.update(table.encode())
            for row in self._conn.execute(f"SELECT * FROM {table} ORDER BY {orders[table]}"):
                h.update(json.dumps(row, ensure_ascii=False).encode("utf-8"))
                h.update(b"\n")
        return h.hexdigest()
