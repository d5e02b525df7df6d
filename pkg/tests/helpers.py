"""Shared test infrastructure: a tiny STAC HTTP server over a fixture directory."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path


class FixtureStacServer:
    """Serves POST /search (with token pagination) and ranged asset GETs.

    fail_first: respond 503 to the first N /search requests, for retry tests.
    """

    def __init__(self, fixture_dir, fail_first: int = 0):
        self.root = Path(fixture_dir)
        self.fail_remaining = fail_first
        self.search_requests = 0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                if self.path.split("?")[0] != "/search":
                    self.send_error(404)
                    return
                with outer._lock:
                    outer.search_requests += 1
                    if outer.fail_remaining > 0:
                        outer.fail_remaining -= 1
                        self.send_error(503)
                        return
                length = int(self.headers.get("content-length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                doc = outer._search(body)
                payload = json.dumps(doc).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_GET(self):
                # serve asset files (supports Range) relative to the fixture root
                rel = self.path.lstrip("/")
                path = outer.root / rel
                if not path.is_file():
                    self.send_error(404)
                    return
                data = path.read_bytes()
                rng = self.headers.get("Range")
                if rng and rng.startswith("bytes="):
                    lo, hi = rng[len("bytes="):].split("-")
                    lo = int(lo)
                    hi = int(hi) if hi else len(data) - 1
                    chunk = data[lo:hi + 1]
                    self.send_response(206)
                    self.send_header("Content-Range", f"bytes {lo}-{hi}/{len(data)}")
                else:
                    chunk = data
                    self.send_response(200)
                self.send_header("Content-Length", str(len(chunk)))
                self.end_headers()
                self.wfile.write(chunk)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def _search(self, body: dict) -> dict:
        collections = body.get("collections") or []
        limit = int(body.get("limit", 100))
        offset = int(body.get("_offset", 0))
        items = []
        for coll in collections:
            items_dir = self.root / "collections" / coll / "items"
            if items_dir.is_dir():
                for p in sorted(items_dir.glob("*.json")):
                    doc = json.loads(p.read_text())
                    # rewrite relative asset hrefs to absolute URLs
                    for asset in doc.get("assets", {}).values():
                        href = asset.get("href", "")
                        if "://" not in href:
                            resolved = (items_dir / href).resolve().relative_to(
                                self.root.resolve())
                            asset["href"] = f"{self.url}/{resolved}"
                    items.append(doc)
        page = items[offset:offset + limit]
        doc = {"type": "FeatureCollection", "features": page, "links": []}
        if offset + limit < len(items):
            next_body = dict(body)
            next_body["_offset"] = offset + limit
            doc["links"].append({"rel": "next", "href": f"{self.url}/search",
                                 "body": next_body, "method": "POST"})
        return doc

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
