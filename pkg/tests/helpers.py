"""Test helpers: fixture labels, archive builders and a local mock hosting API."""

from __future__ import annotations

import io
import json
import re
import tarfile
import threading
import time
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"

# (criterion, passed, detail) rows printed in the terminal summary
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []

_EXPECT = re.compile(r"@expect((?: [A-Z][a-z]+)+)")


def hand_labels(root: Path = CORPUS) -> Counter:
    """(filename, line, collective) multiset read from ``@expect`` annotations."""
    labels: Counter = Counter()
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix == ".md":
            continue
        rel = path.relative_to(root).as_posix()
        for lineno, line in enumerate(path.read_text(encoding="utf-8").split("\n"), start=1):
            m = _EXPECT.search(line)
            if m:
                for name in m.group(1).split():
                    labels[(rel, lineno, name)] += 1
    return labels


def make_tarball(src: Path, dest: Path, prefix: str) -> list[str]:
    """Pack ``src`` under a single top directory, like hosting-service tarballs.

    Returns the sorted relative file list (without the prefix).
    """
    files = sorted(p for p in src.rglob("*") if p.is_file())
    with tarfile.open(dest, "w:gz") as tar:
        for p in files:
            info = tar.gettarinfo(str(p), arcname=f"{prefix}/{p.relative_to(src).as_posix()}")
            info.mtime = 0
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with open(p, "rb") as fh:
                tar.addfile(info, fh)
    return [p.relative_to(src).as_posix() for p in files]


def tarball_bytes(files: dict[str, str], prefix: str = "repo-main") -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w:gz") as tar:
        for name, text in sorted(files.items()):
            data = text.encode("utf-8")
            info = tarfile.TarInfo(f"{prefix}/{name}")
            info.size = len(data)
            tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def repo_item(repo_id: int, owner: str, name: str, branch: str = "main") -> dict:
    return {
        "id": repo_id,
        "name": name,
        "full_name": f"{owner}/{name}",
        "owner": {"login": owner},
        "clone_url": f"https://example.invalid/{owner}/{name}.git",
        "default_branch": branch,
    }


class MockHub(ThreadingHTTPServer):
    """Local stand-in for the hosting API.

    ``results`` maps a search query string to its full item list. With
    ``min_gap`` set, any request arriving sooner than ``min_gap`` seconds after
    the previous accepted one is rejected with ``reject_status`` and a
    ``Retry-After`` header.
    """

    daemon_threads = True

    def __init__(self, results=None, *, token="secret", min_gap=0.0, reject_status=429,
                 send_retry_after=True, archives=None, malformed_pages=()):
        super().__init__(("127.0.0.1", 0), _Handler)
        self.results = results or {}
        self.token = token
        self.min_gap = min_gap
        self.reject_status = reject_status
        self.send_retry_after = send_retry_after
        self.archives = archives or {}
        self.malformed_pages = set(malformed_pages)
        self.lock = threading.Lock()
        self.last_accepted: float | None = None
        self.rejections = 0
        self.requests: list[str] = []
        self._thread = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.shutdown()
        self.server_close()


class _Handler(BaseHTTPRequestHandler):
    server: MockHub

    def log_message(self, *args):
        pass

    def _send(self, status, body=b"", headers=None, ctype="application/json"):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        hub = self.server
        url = urlparse(self.path)
        with hub.lock:
            hub.requests.append(self.path)
            now = time.monotonic()
            if hub.min_gap and hub.last_accepted is not None and now - hub.last_accepted < hub.min_gap:
                hub.rejections += 1
                headers = {"X-RateLimit-Remaining": "0"}
                if hub.send_retry_after:
                    headers["Retry-After"] = str(hub.min_gap)
                self._send(hub.reject_status, b'{"message": "rate limited"}', headers)
                return
            hub.last_accepted = now

        if url.path.startswith("/archives/") or "/tarball/" in url.path:
            data = hub.archives.get(url.path)
            if data is None:
                self._send(404, b'{"message": "Not Found"}')
            else:
                self._send(200, data, ctype="application/gzip")
            return

        if hub.token and self.headers.get("Authorization") != f"Bearer {hub.token}":
            self._send(401, b'{"message": "Bad credentials"}')
            return
        if url.path == "/search/repositories":
            qs = parse_qs(url.query)
            query = qs["q"][0]
            per_page = int(qs.get("per_page", ["30"])[0])
            page = int(qs.get("page", ["1"])[0])
            if (query, page) in hub.malformed_pages:
                self._send(200, b'{"total_count": 3, "itemz": []}')
                return
            items = hub.results.get(query, [])
            chunk = items[(page - 1) * per_page: page * per_page]
            body = json.dumps({"total_count": len(items), "incomplete_results": False, "items": chunk})
            self._send(200, body.encode())
            return
        m = re.match(r"^/repos/([^/]+)/([^/]+)/commits/(.+)$", url.path)
        if m:
            self._send(200, json.dumps({"sha": f"sha-{m.group(1)}-{m.group(2)}-{m.group(3)}"}).encode())
            return
        self._send(404, b'{"message": "Not Found"}')
