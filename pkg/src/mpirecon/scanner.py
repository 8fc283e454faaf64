"""Lexical scanning of C/C++/Fortran/CUDA/OpenCL trees for MPI collective calls.

Nothing here parses or preprocesses: a call under ``#if 0`` still counts. Comments
and string literals are blanked first (keeping every newline) so that a plain token
match on the remaining text can be mapped straight back to physical line numbers.
"""

from __future__ import annotations

import bisect
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path, PurePath

from mpirecon.records import (
    CallSite,
    CollectiveSet,
    FileRecord,
    Language,
    LineCounts,
    RepoRecord,
    ScanResult,
)

logger = logging.getLogger(__name__)

# Checked before the case-folded table: ``.C`` is C++ while ``.c`` is C.
_EXACT_EXTENSIONS = {".C": Language.CPP}

_FOLDED_EXTENSIONS = {
    ".c": Language.C,
    ".h": Language.C,
    ".cc": Language.CPP,
    ".cpp": Language.CPP,
    ".cxx": Language.CPP,
    ".hpp": Language.CPP,
    ".hh": Language.CPP,
    ".f": Language.FORTRAN,
    ".for": Language.FORTRAN,
    ".f77": Language.FORTRAN,
    ".f90": Language.FORTRAN,
    ".f95": Language.FORTRAN,
    ".f03": Language.FORTRAN,
    ".cu": Language.CUDA,
    ".cuh": Language.CUDA,
    ".cl": Language.OPENCL,
}

_FIXED_FORM_EXTENSIONS = {".f", ".for", ".f77"}

BINARY_REPLACEMENT_RATIO = 0.10


def classify_file(path: str | os.PathLike) -> Language | None:
    """Map a filename to its source language by extension, or None."""
    suffix = PurePath(path).suffix
    if suffix in _EXACT_EXTENSIONS:
        return _EXACT_EXTENSIONS[suffix]
    return _FOLDED_EXTENSIONS.get(suffix.lower())


def is_fixed_form(path: str | os.PathLike) -> bool:
    return PurePath(path).suffix.lower() in _FIXED_FORM_EXTENSIONS


def decode_source(data: bytes) -> str | None:
    """Decode as UTF-8 with replacement; None when the bytes look binary."""
    text = data.decode("utf-8", errors="replace")
    if text and text.count("�") > BINARY_REPLACEMENT_RATIO * len(text):
        return None
    return text.replace("\r\n", "\n").replace("\r", "\n")


def physical_lines(content: str) -> int:
    if not content:
        return 0
    return content.count("\n") + (0 if content.endswith("\n") else 1)


_C_OMP = re.compile(r"^[ \t]*#[ \t]*pragma[ \t]+omp\b", re.M)
_C_ACC = re.compile(r"^[ \t]*#[ \t]*pragma[ \t]+acc\b", re.M)
_F_OMP = re.compile(r"^[ \t]*[!c*]\$omp", re.M | re.I)
_F_ACC = re.compile(r"^[ \t]*[!c*]\$acc", re.M | re.I)


def count_lines(content: str, language: Language) -> LineCounts:
    """Line counts one file contributes to the metadata table."""
    n = physical_lines(content)
    if language is Language.FORTRAN:
        omp, acc = _F_OMP, _F_ACC
    else:
        omp, acc = _C_OMP, _C_ACC
    bucket = {
        Language.C: "c",
        Language.CPP: "cpp",
        Language.FORTRAN: "fortran",
        Language.CUDA: "cuda",
        Language.OPENCL: "opencl",
    }[language]
    return LineCounts(
        openmp=len(omp.findall(content)),
        openacc=len(acc.findall(content)),
        total=n,
        **{bucket: n},
    )


# ---------------------------------------------------------------------------
# comment / literal stripping

def _blank(text: str) -> str:
    return re.sub(r"[^\n]", " ", text)


_C_TOKENS = re.compile(
    r"""
      (?P<line>//(?:\\.|[^\n\\])*\\?)
    | (?P<block>/\*.*?(?:\*/|\Z))
    | (?P<raw>(?<![A-Za-z0-9_])(?:u8|[uUL])?R"(?P<delim>[^()\\\s"]{0,16})\(.*?(?:\)(?P=delim)"|\Z))
    | (?P<str>(?<![A-Za-z0-9_])(?:u8|[uUL])?"(?:\\.|[^"\\\n])*"?)
    | (?P<chr>(?:(?<![A-Za-z0-9_])|(?<=\bL)|(?<=\bu)|(?<=\bU)|(?<=\bu8))'(?:\\.|[^'\\\n])*'?)
    """,
    re.S | re.X,
)


def _strip_c(content: str, problems: list[str]) -> str:
    def repl(m: re.Match) -> str:
        text = m.group(0)
        if m.group("line") is not None:
            return _blank(text)
        if m.group("block") is not None:
            if not text.endswith("*/") or len(text) < 4:
                problems.append(f"unterminated block comment at offset {m.start()}")
            return _blank(text)
        if m.group("raw") is not None:
            head = text.index('"') + 1
            if text.endswith('"') and len(text) > head:
                return text[:head] + _blank(text[head:-1]) + '"'
            problems.append(f"unterminated raw string at offset {m.start()}")
            return text[:head] + _blank(text[head:])
        quote, kind = ('"', "string") if m.group("str") is not None else ("'", "character")
        head = text.index(quote) + 1
        body = text[head:]
        if len(body) >= 1 and body.endswith(quote) and not _escaped_end(body):
            return text[:head] + _blank(body[:-1]) + quote
        problems.append(f"unterminated {kind} literal at offset {m.start()}")
        return text[:head] + _blank(body)

    return _C_TOKENS.sub(repl, content)


def _escaped_end(body: str) -> bool:
    # a trailing quote preceded by an odd run of backslashes is part of the body
    run = len(body) - 1 - len(body[:-1].rstrip("\\"))
    return run % 2 == 1


def _is_fixed_continuation(line: str) -> bool:
    return len(line) > 5 and line[:5].strip() == "" and "\t" not in line[:5] and line[5] not in " 0\n"


def _strip_fortran(content: str, fixed_form: bool, problems: list[str]) -> str:
    out: list[str] = []
    quote: str | None = None  # open character context carried over a continuation
    for lineno, line in enumerate(content.split("\n"), start=1):
        start = 0
        if fixed_form:
            if line[:1] in ("c", "C", "*", "!"):
                # an open literal survives comment lines before its continuation
                out.append(_blank(line))
                continue
            if _is_fixed_continuation(line):
                start = 6
            elif quote is not None:
                problems.append(f"unterminated character literal before line {lineno}")
                quote = None
        elif quote is not None:
            stripped = line.lstrip(" \t")
            if stripped.startswith("&"):
                start = len(line) - len(stripped) + 1

        chars = list(line)
        i = start
        n = len(chars)
        while i < n:
            ch = chars[i]
            if quote is not None:
                if ch == quote:
                    if i + 1 < n and chars[i + 1] == quote:
                        chars[i] = chars[i + 1] = " "
                        i += 2
                        continue
                    quote = None
                else:
                    chars[i] = " "
                i += 1
                continue
            if ch == "!":
                for j in range(i, n):
                    chars[j] = " "
                break
            if ch in ("'", '"'):
                quote = ch
            i += 1

        # fixed form: an open literal is settled by the next statement line
        if quote is not None and not fixed_form and not line.rstrip().endswith("&"):
            problems.append(f"unterminated character literal on line {lineno}")
            quote = None
        out.append("".join(chars))
    if quote is not None:
        problems.append("unterminated character literal at end of file")
    return "\n".join(out)


_FREE_FORM_HINT = re.compile(
    r"^(?:call|case|character|close|common|complex|contains|continue|cycle)\b", re.I
)


def _guess_fixed_form(content: str) -> bool:
    for line in content.split("\n"):
        if not line.strip():
            continue
        head = line[:1]
        if head in ("c", "C"):
            if _FREE_FORM_HINT.match(line):
                return False
            continue
        if head in ("*", "!", "#"):
            continue
        if head.isalpha() or head == "&" or head == "\t":
            return False
        if line.rstrip().endswith("&"):
            return False
    return True


def _strip(content: str, language: Language, fixed_form: bool | None) -> tuple[str, list[str]]:
    problems: list[str] = []
    if language is Language.FORTRAN:
        if fixed_form is None:
            fixed_form = _guess_fixed_form(content)
        return _strip_fortran(content, fixed_form, problems), problems
    return _strip_c(content, problems), problems


def strip_non_code(content: str, language: Language, fixed_form: bool | None = None) -> str:
    """Blank comments and literal bodies, keeping every newline in place.

    For Fortran, ``fixed_form`` selects column-1 comment handling; when None it
    is guessed from the text. Unterminated constructs are logged, not raised.
    """
    text, problems = _strip(content, language, fixed_form)
    for p in problems:
        logger.warning("strip_non_code: %s", p)
    return text


# ---------------------------------------------------------------------------
# call-site extraction

_MPI_CASED = re.compile(r"(?<![A-Za-z0-9_])MPI_([A-Za-z0-9_]*)")
_MPI_FOLDED = re.compile(r"(?<![A-Za-z0-9_])MPI_([A-Za-z0-9_]*)", re.I)
_IDENTIFIER = re.compile(r"(?<![A-Za-z0-9_])[A-Za-z_][A-Za-z0-9_]*")


def _line_starts(text: str) -> list[int]:
    starts = [0]
    starts.extend(m.end() for m in re.finditer("\n", text))
    return starts


def find_calls(stripped: str, language: Language, cset: CollectiveSet) -> list[tuple[int, int, str]]:
    """(line_number, column, collective) for every match, both 1-based."""
    folded = language is Language.FORTRAN
    pattern = _MPI_FOLDED if folded else _MPI_CASED
    starts = _line_starts(stripped)
    hits: list[tuple[int, int, str]] = []

    def emit(pos: int, name: str) -> None:
        line = bisect.bisect_right(starts, pos)
        hits.append((line, pos - starts[line - 1] + 1, name))

    for m in pattern.finditer(stripped):
        name = cset.lookup(m.group(1), case_insensitive=folded)
        if name is not None:
            emit(m.start(), name)
    if cset.aliases:
        aliases = {k.lower(): v for k, v in cset.aliases.items()} if folded else cset.aliases
        for m in _IDENTIFIER.finditer(stripped):
            ident = m.group(0).lower() if folded else m.group(0)
            if ident in aliases:
                emit(m.start(), aliases[ident])
    hits.sort()
    return hits


def extract_call_sites(content: str, language: Language, cset: CollectiveSet | None = None) -> list[tuple[str, int]]:
    """(collective, line_number) for each ``MPI_<Name>`` token in stripped text.

    The identifier following ``MPI_`` must equal a member of ``cset`` in full,
    so ``MPI_Allgather`` never yields ``Gather`` and ``MPI_Iallreduce`` yields
    nothing. Fortran matching ignores case.
    """
    cset = cset or CollectiveSet()
    return [(name, line) for line, _, name in find_calls(content, language, cset)]


# ---------------------------------------------------------------------------
# tree scan

def _walk(root: Path) -> list[Path]:
    found = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames.sort()
        for fn in filenames:
            p = Path(dirpath, fn)
            if p.is_symlink() or not p.is_file():
                continue
            found.append(p)
    return found


def scan_file(path: Path, relname: str, repo_id: str, cset: CollectiveSet):
    """Scan one file. Returns (FileRecord | None, call sites, log lines)."""
    language = classify_file(relname)
    if language is None:
        return None, [], []
    try:
        data = path.read_bytes()
    except OSError as exc:
        return None, [], [f"{relname}\tskipped: unreadable ({exc.strerror or exc})"]
    content = decode_source(data)
    if content is None:
        return None, [], [f"{relname}\tskipped: binary content"]
    log = []
    fixed = is_fixed_form(relname) if language is Language.FORTRAN else None
    stripped, problems = _strip(content, language, fixed)
    log.extend(f"{relname}\tflagged: {p}" for p in problems)
    record = FileRecord(repo_id, relname, count_lines(content, language), language)
    sites = [
        CallSite(relname, line, col, name, repo_id)
        for line, col, name in find_calls(stripped, language, cset)
    ]
    return record, sites, log


def scan_tree(
    root: str | os.PathLike,
    repo: RepoRecord,
    cset: CollectiveSet | None = None,
    workers: int = 1,
) -> ScanResult:
    """Scan every regular file under ``root`` (symlinks are not followed).

    Output is ordered by (filename, line, column) whatever ``workers`` is.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(root)
    cset = cset or CollectiveSet()
    paths = _walk(root)
    jobs = [(p, p.relative_to(root).as_posix()) for p in paths]

    def one(job):
        return scan_file(job[0], job[1], repo.repo_id, cset)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    files: list[FileRecord] = []
    sites: list[CallSite] = []
    log: list[str] = []
    for record, file_sites, file_log in results:
        if record is not None:
            files.append(record)
        sites.extend(file_sites)
        log.extend(file_log)
    files.sort(key=lambda f: f.filename)
    sites.sort()
    log.sort()
    for line in log:
        logger.info("scan %s: %s", repo.repo_id, line)
    return ScanResult(repo, files, sites, log)
