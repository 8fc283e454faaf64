import datetime as dt
import os
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import hand_labels
from mpirecon.records import CollectiveSet, Language, LineCounts, RepoRecord
from mpirecon.scanner import (
    classify_file,
    count_lines,
    decode_source,
    extract_call_sites,
    scan_tree,
    strip_non_code,
)

REPO = RepoRecord("42", "someone", "main", "https://example.invalid/someone/x.git", dt.date(2024, 5, 1))


@pytest.mark.parametrize(
    "name, expected",
    [
        ("solver.f90", Language.FORTRAN),
        ("kernel.CU", Language.CUDA),
        ("README.md", None),
        ("a.c", Language.C),
        ("a.h", Language.C),
        ("a.C", Language.CPP),
        ("a.cxx", Language.CPP),
        ("a.HPP", Language.CPP),
        ("a.F", Language.FORTRAN),
        ("a.F90", Language.FORTRAN),
        ("a.f03", Language.FORTRAN),
        ("a.for", Language.FORTRAN),
        ("k.cl", Language.OPENCL),
        ("k.cuh", Language.CUDA),
        ("Makefile", None),
        ("dir.c/notes.txt", None),
    ],
)
def test_classify_file(name, expected):
    assert classify_file(name) is expected


def test_count_lines_c_with_pragmas():
    src = "\n".join(["#pragma omp parallel"] * 2 + ["x;"] * 8) + "\n"
    assert count_lines(src, Language.C) == LineCounts(openmp=2, c=10, total=10)


def test_count_lines_empty():
    assert count_lines("", Language.C) == LineCounts()


def test_count_lines_cuda_bucket():
    assert count_lines("a\nb\nc\nd\ne\n", Language.CUDA) == LineCounts(cuda=5, total=5)


def test_count_lines_without_trailing_newline():
    assert count_lines("a\nb", Language.CPP).total == 2


def test_count_lines_fortran_directives():
    src = "!$omp parallel\nC$OMP END PARALLEL\n*$omp barrier\n  !$ACC kernels\nx = 1\n"
    assert count_lines(src, Language.FORTRAN) == LineCounts(openmp=3, openacc=1, fortran=5, total=5)


def test_count_lines_openacc_c():
    src = "# pragma acc parallel\n#pragma omp for\n  #pragma   acc loop\n"
    counts = count_lines(src, Language.CPP)
    assert (counts.openmp, counts.openacc, counts.cpp) == (1, 2, 3)


def test_strip_line_comment():
    out = strip_non_code("x = 1; // MPI_Bcast(", Language.C)
    assert out.rstrip() == "x = 1;"
    assert len(out) == len("x = 1; // MPI_Bcast(")


def test_strip_block_comment_keeps_lines():
    src = "a /* MPI_Reduce\nmore\n*/ b\n"
    out = strip_non_code(src, Language.C)
    assert out.count("\n") == 3
    assert "MPI" not in out
    assert out.split("\n")[2].strip() == "b"


def test_strip_string_literal():
    out = strip_non_code('printf("MPI_Barrier");', Language.C)
    assert out.replace(" ", "") == 'printf("");'


def test_strip_escaped_quotes_and_chars():
    src = r"""s = "a\"MPI_Bcast"; c = '\''; MPI_Gather(x); t = "\\"; MPI_Reduce(y);"""
    out = strip_non_code(src, Language.C)
    assert "MPI_Bcast" not in out
    assert "MPI_Gather" in out and "MPI_Reduce" in out


def test_strip_unterminated_block_runs_to_eof(caplog):
    out = strip_non_code("x;\n/* MPI_Bcast\nMPI_Reduce\n", Language.C)
    assert "MPI" not in out
    assert out.count("\n") == 3
    assert "unterminated" in caplog.text


def test_strip_raw_string():
    out = strip_non_code('auto s = R"x(MPI_Bcast " )x"; MPI_Gather(a);', Language.CPP)
    assert "MPI_Bcast" not in out and "MPI_Gather" in out


def test_strip_digit_separators_are_not_chars():
    out = strip_non_code("n = 1'000'000; MPI_Bcast(&n);", Language.CPP)
    assert "MPI_Bcast" in out


def test_strip_fortran_fixed_comments():
    src = "C     MPI_BCAST\nc     MPI_REDUCE\n*     MPI_GATHER\n      call MPI_BARRIER(c) ! MPI_SCATTER\n"
    out = strip_non_code(src, Language.FORTRAN, fixed_form=True)
    assert [line.strip() for line in out.split("\n")[:3]] == ["", "", ""]
    assert "MPI_BARRIER" in out and "SCATTER" not in out


def test_strip_fortran_doubled_quotes():
    out = strip_non_code("x = 'it''s MPI_Gather' // \"say \"\"MPI_Bcast\"\"\"\n", Language.FORTRAN, fixed_form=False)
    assert "MPI" not in out
    assert out.count("\n") == 1


def test_strip_fortran_bang_inside_string():
    out = strip_non_code("s = 'a ! b'; call mpi_bcast(x)\n", Language.FORTRAN, fixed_form=False)
    assert "mpi_bcast" in out


def test_strip_fortran_free_form_string_continuation():
    src = 'print *, "abc &\n   &MPI_Bcast def"\ncall mpi_reduce(x)\n'
    out = strip_non_code(src, Language.FORTRAN, fixed_form=False)
    assert "MPI_Bcast" not in out and "mpi_reduce" in out


def test_strip_fortran_free_form_column_one_call_is_code():
    src = "subroutine s\ncall mpi_barrier(c, ierr)\nend\n"
    assert "mpi_barrier" in strip_non_code(src, Language.FORTRAN)


def test_strip_fortran_fixed_continuation_bang_in_column_six():
    src = "      call mpi_bcast(a,\n     !   b)\n"
    out = strip_non_code(src, Language.FORTRAN, fixed_form=True)
    assert out == src


def test_extract_simple_call():
    lines = "\n" * 9 + "MPI_Allreduce(a,b,1,MPI_INT,MPI_SUM,comm);\n"
    assert extract_call_sites(lines, Language.C) == [("Allreduce", 10)]


def test_extract_allgather_is_not_gather():
    src = "\n" * 6 + "MPI_Allgather(a);\n"
    assert extract_call_sites(src, Language.C, CollectiveSet(["Gather", "Allgather"])) == [("Allgather", 7)]


def test_extract_fortran_case_insensitive():
    src = "\n\n  call mpi_alltoallv(a)\n"
    assert extract_call_sites(src, Language.FORTRAN) == [("Alltoallv", 3)]


def test_extract_gatherv_longest_match():
    assert extract_call_sites("MPI_Gatherv(x);", Language.C, CollectiveSet(["Gather", "Gatherv"])) == [
        ("Gatherv", 1)
    ]


def test_extract_c_is_case_sensitive():
    assert extract_call_sites("MPI_ALLREDUCE(x); mpi_bcast(y);", Language.C) == []


def test_extract_rejects_prefixed_and_suffixed_names():
    src = "PMPI_Bcast(x); MPI_Ibcast(x); MPI_Bcast_init(x); xMPI_Bcast(x); MPI_Reduce_scatter(x);"
    assert extract_call_sites(src, Language.C) == []


def test_extract_multiple_per_line_in_column_order():
    assert extract_call_sites("MPI_Reduce(a); MPI_Bcast(b); MPI_Reduce(c);", Language.C) == [
        ("Reduce", 1),
        ("Bcast", 1),
        ("Reduce", 1),
    ]


def test_extract_alias_table():
    cset = CollectiveSet(aliases={"hypre_MPI_Allreduce": "Allreduce"})
    src = "hypre_MPI_Allreduce(a);\nMPI_Bcast(b);\n"
    assert extract_call_sites(src, Language.C, cset) == [("Allreduce", 1), ("Bcast", 2)]


def test_nonblocking_can_be_added_by_config():
    cset = CollectiveSet(["Iallreduce", "Allreduce"])
    assert extract_call_sites("MPI_Iallreduce(a); MPI_Allreduce(b);", Language.C, cset) == [
        ("Iallreduce", 1),
        ("Allreduce", 1),
    ]


def test_decode_source_binary_and_lossy():
    assert decode_source(bytes(range(128, 256)) * 10) is None
    text = decode_source(b"MPI_Bcast(x);\r\n\xff ok\n" + b"y" * 100)
    assert text is not None and text.startswith("MPI_Bcast(x);\n")


def test_scan_fixture_matches_hand_labels(corpus_root):
    result = scan_tree(corpus_root, REPO)
    got = Counter((s.filename, s.line_number, s.collective) for s in result.call_sites)
    assert got == hand_labels(corpus_root)


def test_scan_line_number_fidelity(corpus_root):
    result = scan_tree(corpus_root, REPO)
    for site in result.call_sites:
        lines = (corpus_root / site.filename).read_text(encoding="utf-8").split("\n")
        assert 1 <= site.line_number <= len(lines)
        line = lines[site.line_number - 1]
        token = line[site.column - 1 : site.column - 1 + 4 + len(site.collective)]
        assert token.lower() == f"mpi_{site.collective}".lower()
        assert "@expect" in line


def test_scan_invariants(corpus_root):
    result = scan_tree(corpus_root, REPO)
    names = {f.filename for f in result.files}
    assert all(s.filename in names for s in result.call_sites)
    assert result.call_sites == sorted(result.call_sites)
    assert "docs/README.md" not in names
    assert len(result.files) == 18
    for f in result.files:
        c = f.counts
        assert c.total >= c.c + c.cpp + c.fortran
        assert c.openmp <= c.total and c.openacc <= c.total
    per_file = Counter(s.filename for s in result.call_sites)
    assert sum(per_file.values()) == len(result.call_sites)


def test_scan_no_cross_name_bleed(tmp_path):
    (tmp_path / "a.c").write_text("MPI_Allreduce(a);\nMPI_Allreduce(b);\n")
    (tmp_path / "b.c").write_text("MPI_Allgather(a);\nMPI_Gatherv(b);\nMPI_Alltoallv(c);\nMPI_Scatterv(d);\n")
    result = scan_tree(tmp_path, REPO)
    got = Counter(s.collective for s in result.call_sites)
    assert got == Counter({"Allreduce": 2, "Allgather": 1, "Gatherv": 1, "Alltoallv": 1, "Scatterv": 1})


def test_scan_deterministic_across_parallelism(corpus_root):
    serial = scan_tree(corpus_root, REPO)
    parallel = scan_tree(corpus_root, REPO, workers=4)
    assert serial.call_sites == parallel.call_sites
    assert serial.files == parallel.files


def test_scan_empty_dir(tmp_path):
    result = scan_tree(tmp_path, REPO)
    assert result.files == [] and result.call_sites == []


def test_scan_only_markdown(tmp_path):
    (tmp_path / "README.md").write_text("MPI_Bcast\n")
    result = scan_tree(tmp_path, REPO)
    assert result.files == [] and result.totals().total == 0


def test_scan_skips_symlinks_and_binary(tmp_path):
    (tmp_path / "real.c").write_text("MPI_Bcast(x);\n")
    os.symlink(tmp_path / "real.c", tmp_path / "link.c")
    (tmp_path / "blob.c").write_bytes(bytes(range(128, 256)) * 4)
    result = scan_tree(tmp_path, REPO)
    assert [f.filename for f in result.files] == ["real.c"]
    assert any("blob.c" in line and "binary" in line for line in result.log)


@pytest.mark.skipif(os.geteuid() == 0, reason="root can read anything")
def test_scan_unreadable_file_is_logged(tmp_path):
    p = tmp_path / "secret.c"
    p.write_text("MPI_Bcast(x);\n")
    p.chmod(0)
    result = scan_tree(tmp_path, REPO)
    assert result.files == [] and "unreadable" in result.log[0]


# -- property: stripping never moves a line ------------------------------------

_fragments = st.sampled_from(
    ["x", " ", "\n", "//", "/*", "*/", '"', "'", "\\", "MPI_Bcast(a);", "!", "&", "''", '""', "R\"(", ")\"", "c", "*"]
)


@settings(max_examples=300, deadline=None)
@given(st.lists(_fragments, max_size=60), st.sampled_from(list(Language)), st.sampled_from([None, True, False]))
def test_strip_preserves_line_structure(parts, language, fixed):
    src = "".join(parts)
    out = strip_non_code(src, language, fixed_form=fixed)
    assert out.count("\n") == src.count("\n")
    assert [len(line) for line in out.split("\n")] == [len(line) for line in src.split("\n")]
