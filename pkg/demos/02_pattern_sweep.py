"""
Complex-collective patterns in a small database
================================================

Seed an in-memory store by hand, then look at pair co-occurrence over a
range of line spans, the fusion ratio, and the homogeneous/mixed split.
"""

import datetime as dt

from mpirecon import CallSite, FileRecord, LineCounts, RepoRecord, ScanResult
from mpirecon.patterns import (
    PatternQuery,
    find_repeated_groups,
    fusion_ratio,
    homogeneity_distribution,
    sweep_epsilon,
)
from mpirecon.store import Store

files = {
    "solver.c": [("Allreduce", 93), ("Allreduce", 98)],
    "halo.c": [("Allreduce", 200), ("Allreduce", 217), ("Allgather", 227), ("Allgather", 230)],
    "io.f90": [("Gather", 10), ("Scatter", 40), ("Gather", 200), ("Bcast", 204)],
}

store = Store(":memory:")
repo = RepoRecord("42", "lab", "main", "https://example.invalid/lab/app.git", dt.date(2024, 1, 1))
sites = [CallSite(f, line, 1, name, "42") for f, entries in files.items() for name, line in entries]
store.ingest(ScanResult(repo, [FileRecord("42", f, LineCounts(c=300, total=300)) for f in files], sorted(sites)))

# %% groups inside single files
for (_, _, fname), file_sites in store.call_sites_by_file():
    for eps, delta in ((5, 2), (30, 4)):
        for g in find_repeated_groups(file_sites, PatternQuery({"Allreduce", "Allgather"}, eps, delta)):
            lines = [s.line_number for s in g.sites]
            print(f"{fname}: eps={eps} delta={delta} lines={lines} span={g.span} {g.classification.value}")

# %% how many (a, b) site pairs fall within eps lines?
for report in sweep_epsilon([("Gather", "Scatter"), ("Allreduce", "Allgather")], [0, 10, 30, 50, 200], store):
    print(report.pair, report.rows)

# %% fraction of each side that has a partner within 50 lines
print("Gather:Scatter fusion ratio at 50 lines:", fusion_ratio(("Gather", "Scatter"), 50, store))

# %% adjacent sites of the same name vs different names
r = homogeneity_distribution(("Allreduce", "Allgather"), store)
print(f"homogeneous {r.homogeneous_pct}%  mixed {r.mixed_pct}%")
