"""Byte sources for raster reading: local files, HTTP ranged reads, counters."""

from __future__ import annotations

import os
import threading

import httpx

from geochip.errors import DataError, NetworkError


class ByteSource:
    """Random-access byte reader. Subclasses implement read(offset, length)."""

    name: str = "<source>"

    def read(self, offset: int, length: int) -> bytes:
        raise NotImplementedError

    def size(self) -> int:
        raise NotImplementedError

    def close(self):
        pass


class FileSource(ByteSource):
    def __init__(self, path):
        self.name = str(path)
        try:
            self._f = open(path, "rb")
        except OSError as exc:
            raise DataError(f"cannot open raster {path}: {exc}") from exc
        self._lock = threading.Lock()

    def read(self, offset: int, length: int) -> bytes:
        with self._lock:
            self._f.seek(offset)
            return self._f.read(length)

    def size(self) -> int:
        return os.fstat(self._f.fileno()).st_size

    def close(self):
        self._f.close()


class HttpSource(ByteSource):
    """Ranged HTTP reads (Range: bytes=...) for remote COGs."""

    def __init__(self, url: str, client: httpx.Client | None = None, token: str | None = None):
        self.name = url
        self.url = url
        self._client = client or httpx.Client(timeout=30.0, follow_redirects=True)
        self._owns_client = client is None
        self._headers = {}
        if token:
            self._headers["Authorization"] = f"Bearer {token}"
        self._size: int | None = None

    def read(self, offset: int, length: int) -> bytes:
        headers = dict(self._headers)
        headers["Range"] = f"bytes={offset}-{offset + length - 1}"
        try:
            resp = self._client.get(self.url, headers=headers)
        except httpx.HTTPError as exc:
            raise NetworkError(f"ranged read of {self.url} failed: {exc}") from exc
        if resp.status_code not in (200, 206):
            raise NetworkError(f"ranged read of {self.url}: HTTP {resp.status_code}")
        data = resp.content
        if resp.status_code == 200:
            # server ignored the range header; slice locally
            data = data[offset:offset + length]
        return data

    def size(self) -> int:
        if self._size is None:
            resp = self._client.head(self.url, headers=self._headers)
            self._size = int(resp.headers.get("content-length", "0"))
        return self._size

    def close(self):
        if self._owns_client:
            self._client.close()


class CountingSource(ByteSource):
    """Wrapper that records every (offset, length) read; used by I/O tests."""

    def __init__(self, inner: ByteSource):
        self.inner = inner
        self.name = inner.name
        self.reads: list[tuple[int, int]] = []

    def read(self, offset: int, length: int) -> bytes:
        self.reads.append((offset, length))
        return self.inner.read(offset, length)

    def size(self) -> int:
        return self.inner.size()

    def close(self):
        self.inner.close()

    def reset(self):
        self.reads.clear()
