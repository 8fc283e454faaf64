"""Repository discovery, the corpus manifest, and budgeted archive fetching.

All network traffic goes through :class:`HostingAPI`, which owns the retry and
rate-limit policy. Tests hand it an ``httpx`` transport or a local base URL.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import os
import re
import shutil
import tarfile
import time
from pathlib import Path, PurePosixPath
from typing import Callable, Iterable, Sequence
from urllib.parse import unquote, urlparse

import httpx

from mpirecon.errors import (
    BudgetError,
    CredentialError,
    DomainError,
    FetchError,
    NetworkError,
    ProtocolError,
    RateLimitError,
)
from mpirecon.records import DEFAULT_COLLECTIVES

logger = logging.getLogger(__name__)

DEFAULT_API_URL = "https://api.github.com"
TOKEN_ENV_VARS = ("MPIRECON_TOKEN", "GITHUB_TOKEN")

# The keywords the crawl starts from (Alltoall and Bcast are scanned for but
# not searched on).
DEFAULT_KEYWORDS = (
    "Allgather",
    "Allreduce",
    "Alltoallv",
    "Barrier",
    "Gather",
    "Gatherv",
    "Reduce",
    "Scatter",
    "Scatterv",
)
SEARCH_LANGUAGES = ("C", "C++", "Fortran")
API_MAX_PER_PAGE = 100
API_RESULT_WINDOW = 1000
DEFAULT_QUERY_TEMPLATE = "{keyword} language:{language}"
DEFAULT_ARCHIVE_TEMPLATE = "{api}/repos/{owner}/{name}/tarball/{revision}"


def token_from_env(environ: dict | None = None) -> str | None:
    environ = os.environ if environ is None else environ
    for var in TOKEN_ENV_VARS:
        if environ.get(var):
            return environ[var]
    return None


@dataclasses.dataclass(frozen=True)
class SearchSpec:
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS
    languages: tuple[str, ...] = SEARCH_LANGUAGES
    max_results: int = API_RESULT_WINDOW
    per_page: int = API_MAX_PER_PAGE
    query_template: str = DEFAULT_QUERY_TEMPLATE

    def __post_init__(self):
        object.__setattr__(self, "keywords", tuple(self.keywords))
        object.__setattr__(self, "languages", tuple(self.languages))
        if not self.keywords:
            raise DomainError("search needs at least one keyword")
        for kw in self.keywords:
            if kw not in DEFAULT_COLLECTIVES:
                raise DomainError(f"unknown collective keyword {kw!r}")
        for lang in self.languages:
            if lang not in SEARCH_LANGUAGES:
                raise DomainError(f"unsupported search language {lang!r}; expected one of {SEARCH_LANGUAGES}")
        if self.max_results < 0:
            raise DomainError("max_results must be >= 0")
        if not 1 <= self.per_page <= API_MAX_PER_PAGE:
            raise DomainError(f"per_page must be in 1..{API_MAX_PER_PAGE}")


@dataclasses.dataclass(frozen=True)
class ManifestEntry:
    repo_id: str
    owner: str
    name: str
    clone_url: str
    default_revision: str
    matched_keywords: frozenset[str]
    retrieval_date: dt.date

    def __post_init__(self):
        object.__setattr__(self, "matched_keywords", frozenset(self.matched_keywords))
        parsed = urlparse(self.clone_url)
        if not parsed.scheme or not (parsed.netloc or parsed.path.startswith("/")):
            raise DomainError(f"clone_url is not an absolute URL: {self.clone_url!r}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "repo_id": self.repo_id,
                "owner": self.owner,
                "name": self.name,
                "clone_url": self.clone_url,
                "default_revision": self.default_revision,
                "matched_keywords": sorted(self.matched_keywords),
                "retrieval_date": self.retrieval_date.isoformat(),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> ManifestEntry:
        d = json.loads(line)
        return cls(
            repo_id=str(d["repo_id"]),
            owner=d["owner"],
            name=d["name"],
            clone_url=d["clone_url"],
            default_revision=d["default_revision"],
            matched_keywords=frozenset(d["matched_keywords"]),
            retrieval_date=dt.date.fromisoformat(d["retrieval_date"]),
        )

    @property
    def slug(self) -> str:
        raw = f"{self.owner}__{self.name}__{self.repo_id}"
        return re.sub(r"[^A-Za-z0-9._-]", "_", raw)


def write_manifest(entries: Iterable[ManifestEntry], path: str | os.PathLike) -> None:
    """One JSON object per line, UTF-8."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def read_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    with open(path, encoding="utf-8") as fh:
        return [ManifestEntry.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# HTTP


def _float_header(headers: httpx.Headers, name: str) -> float | None:
    value = headers.get(name)
    if value is None:
        return None
    try:
        return float(value)
    except ValueError:
        return None


class HostingAPI:
    """Sequential client for one code-hosting REST endpoint.

    Rate-limited responses (429, or 403 carrying rate-limit headers) are retried
    after the server's ``Retry-After`` / reset time when given, otherwise after
    ``backoff_base * backoff_factor**attempt`` seconds. A server-provided
    ``Retry-After`` also becomes the minimum spacing for later requests.
    """

    def __init__(
        self,
        base_url: str = DEFAULT_API_URL,
        token: str | None = None,
        *,
        transport: httpx.BaseTransport | None = None,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        min_interval: float = 0.0,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        wallclock: Callable[[], float] = time.time,
        archive_template: str = DEFAULT_ARCHIVE_TEMPLATE,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.min_interval = min_interval
        self.archive_template = archive_template
        self._sleep = sleep
        self._clock = clock
        self._wallclock = wallclock
        self._last_request: float | None = None
        self._blocked_until: float | None = None
        self.rejections = 0
        headers = {"Accept": "application/vnd.github+json", "User-Agent": "mpi-recon"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            headers=headers, transport=transport, timeout=timeout, follow_redirects=True
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> HostingAPI:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _pace(self) -> None:
        now = self._clock()
        wait = 0.0
        if self._last_request is not None and self.min_interval > 0:
            wait = self._last_request + self.min_interval - now
        if self._blocked_until is not None:
            wait = max(wait, self._blocked_until - now)
            self._blocked_until = None
        if wait > 0:
            self._sleep(wait)
        self._last_request = self._clock()

    def _rate_limit_wait(self, response: httpx.Response) -> float | None:
        """Seconds the server asks us to wait, or None if this is not a rate-limit reply."""
        headers = response.headers
        retry_after = _float_header(headers, "Retry-After")
        exhausted = headers.get("X-RateLimit-Remaining") == "0"
        if response.status_code != 429 and not (
            response.status_code == 403 and (retry_after is not None or exhausted)
        ):
            return None
        if retry_after is not None:
            self.min_interval = max(self.min_interval, retry_after)
            return retry_after
        reset = _float_header(headers, "X-RateLimit-Reset")
        if exhausted and reset is not None:
            return max(reset - self._wallclock(), 0.0)
        return -1.0  # rate limited, no hint: use backoff

    def _note_quota(self, response: httpx.Response) -> None:
        if response.headers.get("X-RateLimit-Remaining") == "0":
            reset = _float_header(response.headers, "X-RateLimit-Reset")
            if reset is not None:
                self._blocked_until = self._clock() + max(reset - self._wallclock(), 0.0)

    def request(self, url: str, params: dict | None = None, *, stream: bool = False) -> httpx.Response:
        """GET with pacing and retries. The caller closes streamed responses."""
        if not url.startswith(("http://", "https://")):
            url = self.base_url + url
        attempt = 0
        while True:
            self._pace()
            try:
                req = self._client.build_request("GET", url, params=params)
                response = self._client.send(req, stream=stream)
            except httpx.TransportError as exc:
                if attempt >= self.max_retries:
                    raise NetworkError(f"GET {url}: {exc}") from exc
                self._sleep(self.backoff_base * self.backoff_factor**attempt)
                attempt += 1
                continue
            wait = self._rate_limit_wait(response)
            retryable = wait is not None or response.status_code >= 500
            if not retryable:
                self._note_quota(response)
                return response
            if stream:
                response.close()
            if wait is not None:
                self.rejections += 1
            if attempt >= self.max_retries:
                if wait is not None:
                    raise RateLimitError(f"GET {url}: still rate limited after {self.max_retries} retries")
                raise NetworkError(f"GET {url}: HTTP {response.status_code} after {self.max_retries} retries")
            if wait is None or wait < 0:
                wait = self.backoff_base * self.backoff_factor**attempt
            logger.info("GET %s: HTTP %s, retrying in %.2fs", url, response.status_code, wait)
            self._sleep(wait)
            attempt += 1

    def get_json(self, url: str, params: dict | None = None, *, what: str = "") -> object:
        response = self.request(url, params)
        if response.status_code == 401 or response.status_code == 403:
            raise CredentialError(
                f"{what or url}: HTTP {response.status_code}; check the token in "
                f"{' / '.join(TOKEN_ENV_VARS)}"
            )
        if response.status_code != 200:
            raise ProtocolError(f"{what or url}: unexpected HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProtocolError(f"{what or url}: response is not JSON") from exc

    def archive_url(self, entry: ManifestEntry) -> str:
        return self.archive_template.format(
            api=self.base_url, owner=entry.owner, name=entry.name, revision=entry.default_revision
        )

    def download(self, url: str, dest: Path) -> int:
        """Stream ``url`` to ``dest``; returns bytes written."""
        response = self.request(url, stream=True)
        try:
            if response.status_code != 200:
                raise FetchError(f"GET {url}: HTTP {response.status_code}")
            n = 0
            with open(dest, "wb") as fh:
                for chunk in response.iter_bytes():
                    fh.write(chunk)
                    n += len(chunk)
            return n
        except httpx.TransportError as exc:
            raise FetchError(f"GET {url}: {exc}") from exc
        finally:
            response.close()


# ---------------------------------------------------------------------------
# search


def _parse_item(item: object, what: str) -> tuple[str, str, str, str, str]:
    try:
        return (
            str(item["id"]),
            item["owner"]["login"],
            item["name"],
            item["clone_url"],
            item["default_branch"],
        )
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"{what}: malformed repository item ({exc!r})") from exc


def search_repositories(
    spec: SearchSpec,
    api: HostingAPI,
    *,
    today: dt.date | None = None,
    resolve_revisions: bool = False,
) -> list[ManifestEntry]:
    """Query every (keyword, language) pair and merge hits by (owner, name).

    Each query is paged until a short page, ``spec.max_results`` hits, or the
    API's result window. With ``resolve_revisions`` the default branch is
    pinned to its head commit id.
    """
    if not api.token:
        raise CredentialError(f"no API token; set {TOKEN_ENV_VARS[0]} (or {TOKEN_ENV_VARS[1]})")
    today = today or dt.date.today()
    found: dict[tuple[str, str], dict] = {}
    seen_ids: dict[str, tuple[str, str]] = {}
    for keyword in spec.keywords:
        for language in spec.languages:
            query = spec.query_template.format(keyword=keyword, language=language)
            taken = 0
            page = 1
            while taken < spec.max_results:
                what = f"query {query!r} page {page}"
                payload = api.get_json(
                    "/search/repositories",
                    {"q": query, "per_page": spec.per_page, "page": page},
                    what=what,
                )
                if not isinstance(payload, dict) or not isinstance(payload.get("items"), list):
                    raise ProtocolError(f"{what}: response has no 'items' list", query=query, page=page)
                items = payload["items"]
                for item in items[: spec.max_results - taken]:
                    try:
                        repo_id, owner, name, clone_url, branch = _parse_item(item, what)
                    except ProtocolError as exc:
                        raise ProtocolError(str(exc), query=query, page=page) from None
                    key = (owner, name)
                    if seen_ids.setdefault(repo_id, key) != key:
                        logger.warning("%s: repo id %s already seen as %s/%s", what, repo_id, *seen_ids[repo_id])
                        continue
                    rec = found.setdefault(
                        key,
                        {"repo_id": repo_id, "clone_url": clone_url, "branch": branch, "keywords": set()},
                    )
                    rec["keywords"].add(keyword)
                taken += min(len(items), spec.max_results - taken)
                total = payload.get("total_count")
                window = min(total, API_RESULT_WINDOW) if isinstance(total, int) else API_RESULT_WINDOW
                if len(items) < spec.per_page or page * spec.per_page >= window:
                    break
                page += 1

    entries = []
    for (owner, name), rec in sorted(found.items()):
        revision = rec["branch"]
        if resolve_revisions:
            commit = api.get_json(f"/repos/{owner}/{name}/commits/{revision}", what=f"{owner}/{name}@{revision}")
            if not isinstance(commit, dict) or "sha" not in commit:
                raise ProtocolError(f"{owner}/{name}@{revision}: commit response has no sha")
            revision = commit["sha"]
        entries.append(
            ManifestEntry(rec["repo_id"], owner, name, rec["clone_url"], revision, frozenset(rec["keywords"]), today)
        )
    return entries


# ---------------------------------------------------------------------------
# partitions


@dataclasses.dataclass
class Partition:
    entries: list[ManifestEntry]
    byte_budget: int
    workdir: Path

    def __post_init__(self):
        self.workdir = Path(self.workdir)

    def tree_path(self, entry: ManifestEntry) -> Path:
        return self.workdir / entry.slug

    def archive_path(self, entry: ManifestEntry) -> Path:
        return self.workdir / f".{entry.slug}.archive"


@dataclasses.dataclass
class FetchResult:
    fetched: list[tuple[ManifestEntry, Path]] = dataclasses.field(default_factory=list)
    skipped: list[ManifestEntry] = dataclasses.field(default_factory=list)
    failed: list[tuple[ManifestEntry, str]] = dataclasses.field(default_factory=list)
    bytes_used: int = 0


def tree_size(path: Path) -> int:
    """Apparent size in bytes of every regular file under ``path``."""
    total = 0
    for dirpath, _, filenames in os.walk(path):
        for fn in filenames:
            p = os.path.join(dirpath, fn)
            if not os.path.islink(p):
                total += os.path.getsize(p)
    return total


def local_archive_path(url: str) -> Path | None:
    parsed = urlparse(url)
    if parsed.scheme == "file":
        return Path(unquote(parsed.path))
    return None


def _members(archive: tarfile.TarFile) -> list[tuple[tarfile.TarInfo, PurePosixPath]]:
    """Regular files and directories with safe relative paths, the shared
    top-level directory (as in hosting-service tarballs) removed."""
    members = [m for m in archive.getmembers() if m.isfile() or m.isdir()]
    paths = [PurePosixPath(m.name) for m in members]
    tops = {p.parts[0] for p in paths if p.parts}
    strip = len(tops) == 1 and all(len(p.parts) > 1 or m.isdir() for p, m in zip(paths, members))
    out = []
    for m, p in zip(members, paths):
        parts = p.parts[1:] if strip else p.parts
        if not parts or p.is_absolute() or ".." in parts:
            continue
        out.append((m, PurePosixPath(*parts)))
    return out


def _extract(archive: tarfile.TarFile, members, dest: Path) -> None:
    dest.mkdir()
    for m, rel in members:
        target = dest.joinpath(*rel.parts)
        if m.isdir():
            target.mkdir(parents=True, exist_ok=True)
            continue
        target.parent.mkdir(parents=True, exist_ok=True)
        src = archive.extractfile(m)
        with src, open(target, "wb") as fh:
            shutil.copyfileobj(src, fh)


def fetch_partition(
    p: Partition,
    api: HostingAPI | None = None,
    *,
    observer: Callable[[Path], None] | None = None,
) -> FetchResult:
    """Download and unpack entries in order until the next one would overflow
    ``p.byte_budget``; that entry and the rest are reported as skipped.

    Entries whose ``clone_url`` is a ``file://`` URL are read as local archives.
    The budget counts unpacked bytes; the archive of the entry being fetched is
    on disk only transiently.
    """
    if p.byte_budget <= 0:
        raise BudgetError(f"byte budget {p.byte_budget} leaves no room for any repository")
    if not p.workdir.is_dir():
        raise FileNotFoundError(f"workdir {p.workdir} does not exist")
    result = FetchResult()
    notify = observer or (lambda _path: None)
    for index, entry in enumerate(p.entries):
        archive_path = p.archive_path(entry)
        tree = p.tree_path(entry)
        try:
            local = local_archive_path(entry.clone_url)
            if local is not None:
                if not local.is_file():
                    raise FetchError(f"{entry.clone_url}: no such archive")
                shutil.copyfile(local, archive_path)
            else:
                if api is None:
                    raise FetchError(f"{entry.owner}/{entry.name}: remote entry but no API client")
                api.download(api.archive_url(entry), archive_path)
            notify(p.workdir)
            with tarfile.open(archive_path, "r:*") as archive:
                members = _members(archive)
                size = sum(m.size for m, _ in members if m.isfile())
                if result.bytes_used + size > p.byte_budget:
                    archive_path.unlink()
                    if not result.fetched:
                        raise BudgetError(
                            f"{entry.owner}/{entry.name} needs {size} bytes, budget is {p.byte_budget}"
                        )
                    result.skipped = list(p.entries[index:])
                    break
                if tree.exists():
                    shutil.rmtree(tree)
                _extract(archive, members, tree)
            notify(p.workdir)  # archive and new tree both on disk: the peak
        except (FetchError, NetworkError, RateLimitError, tarfile.TarError, OSError) as exc:
            logger.warning("fetch %s/%s failed: %s", entry.owner, entry.name, exc)
            result.failed.append((entry, str(exc)))
            shutil.rmtree(tree, ignore_errors=True)
            continue
        except BudgetError:
            shutil.rmtree(tree, ignore_errors=True)
            raise
        finally:
            if archive_path.exists():
                archive_path.unlink()
        result.bytes_used += size
        result.fetched.append((entry, tree))
        notify(p.workdir)
    return result


def release_partition(p: Partition) -> None:
    """Delete every tree (and stray archive) this partition may have created."""
    survivors = []
    for entry in p.entries:
        for path in (p.tree_path(entry), p.archive_path(entry)):
            if not os.path.lexists(path):
                continue
            try:
                if path.is_dir() and not path.is_symlink():
                    shutil.rmtree(path)
                else:
                    path.unlink()
            except OSError:
                survivors.append(str(path))
    if survivors:
        raise OSError(f"could not remove: {', '.join(survivors)}")

