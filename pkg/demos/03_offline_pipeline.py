"""
The whole pipeline, offline
===========================

Pack three fixture directories as tarballs, point a manifest at them with
file:// URLs, then drive the command line end to end: run with a byte budget
that only fits one repository at a time, and produce the reports.
"""

import datetime as dt
import io
import sys
import tarfile
import tempfile
from pathlib import Path

from mpirecon import cli
from mpirecon.corpus_client import ManifestEntry, tree_size, write_manifest

HERE = Path(__file__).resolve().parent
corpus = HERE.parent / "tests" / "fixtures" / "corpus"
work = Path(tempfile.mkdtemp(prefix="mpi-recon-demo-"))

entries = []
for i, sub in enumerate(("c", "cpp", "fortran"), start=1):
    archive = work / f"{sub}.tar.gz"
    with tarfile.open(archive, "w:gz") as tar:
        tar.add(corpus / sub, arcname=f"{sub}-main")
    entries.append(ManifestEntry(str(i), "fixtures", sub, archive.as_uri(), "main", {"Allreduce"}, dt.date.today()))
write_manifest(entries, work / "manifest.jsonl")

budget = max(tree_size(corpus / sub) for sub in ("c", "cpp", "fortran"))
print(f"workspace {work}, budget {budget} bytes")

peak = []
flags = ["--db", str(work / "corpus.db"), "--manifest", str(work / "manifest.jsonl"),
         "--workdir", str(work / "trees"), "--out-dir", str(work / "reports")]

# run through the library entry point so disk use can be watched
config = cli.load_config(None, {"db": str(work / "corpus.db"), "manifest": str(work / "manifest.jsonl"),
                                "workdir": str(work / "trees"), "budget_bytes": str(budget)})
cli.cmd_run(config, observer=lambda d: peak.append(tree_size(d)))
print("peak bytes on disk:", max(peak))

# a second run finds everything already ingested
cli.main(["run", *flags, "--budget-bytes", str(budget)])

for command in (["stats"], ["pairs", "--eps", "0,10,50"], ["homogeneity"], ["export"]):
    print(f"\n$ mpi-recon {' '.join(command)}")
    buf = io.StringIO()
    code = cli.main([*command, *flags], out=buf)
    sys.stdout.write(buf.getvalue())
    assert code == 0

print("\nreports:", sorted(p.name for p in (work / "reports").iterdir()))
