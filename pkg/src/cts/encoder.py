"""Base-embedding acquisition: binary store, HTTP backend, and cache.

The on-disk store is little-endian: magic ``CTSE``, u32 version (=1),
u32 dim, u64 count, ``count`` null-terminated UTF-8 ids, then
``count * dim`` 32-bit floats row-major. Round trips are bit-exact.

The HTTP backend speaks ``POST /embed`` with ``{"texts": [...]}`` and
expects ``{"dim": int, "embeddings": [[...], ...]}``; the service URL
comes from ``--embed-url`` or the ``CTS_EMBED_URL`` environment variable.
"""
from __future__ import annotations

import logging
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import Corpus
from .errors import ArgumentError, IntegrityError, FormatError, TransportError

log = logging.getLogger(__name__)

MAGIC = b"CTSE"
VERSION = 1
EMBED_URL_ENV = "CTS_EMBED_URL"
DEFAULT_DIM = 768


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Id-aligned dense float32 vectors from an encoder backend."""

    ids: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2:
            raise ArgumentError("rows must be a 2-D matrix")
        if len(self.ids) != rows.shape[0]:
            raise ArgumentError(
                f"{len(self.ids)} ids for {rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ArgumentError("embedding ids must be unique")
        if rows.size and not np.all(np.isfinite(rows)):
            raise IntegrityError("embedding rows contain non-finite values")
        object.__setattr__(
            self, "_index", {pid: i for i, pid in enumerate(self.ids)}
        )

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row_of(self, post_id: str) -> int:
        try:
            return self._index[post_id]
        except KeyError:
            raise ArgumentError(f"unknown post id {post_id!r}") from None

    def take(self, ids: Sequence[str]) -> np.ndarray:
        """Rows for the given ids, in the given order."""
        return self.rows[[self.row_of(i) for i in ids]]

    def select(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        return EmbeddingMatrix(tuple(ids), self.take(ids))


class EncoderBackend(Protocol):
    """Anything that maps texts to fixed-dimension vectors, in order."""

    @property
    def descriptor(self) -> str: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HttpEncoderBackend:
    """Client for an external embedding service.

    Failed requests are retried with exponential backoff (3 attempts,
    starting at 250 ms); a non-200 status or exhausted retries raise
    :class:`TransportError`.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 60.0,
        attempts: int = 3,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._session = session or requests.Session()

    @property
    def descriptor(self) -> str:
        return f"http:{self.url}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        delay = self.backoff
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            try:
                resp = self._session.post(
                    f"{self.url}/embed",
                    json={"texts": list(texts)},
                    timeout=self.timeout,
                )
                if resp.status_code != 200:
                    raise TransportError(
                        f"embedding service returned {resp.status_code}"
                    )
                payload = resp.json()
                rows = np.asarray(payload["embeddings"], dtype=np.float32)
                dim = int(payload["dim"])
                if rows.ndim != 2 or rows.shape != (len(texts), dim):
                    raise IntegrityError(
                        f"service returned shape {rows.shape}, "
                        f"expected ({len(texts)}, {dim})"
                    )
                return rows
            except IntegrityError:
                raise
            except (requests.RequestException, TransportError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.attempts:
                    log.warning(
                        "embed attempt %d/%d failed (%s), retrying in %.2fs",
                        attempt + 1, self.attempts, exc, delay,
                    )
                    time.sleep(delay)
                    delay *= 2
        raise TransportError(f"embedding service failed after "
                             f"{self.attempts} attempts: {last_error}")


class EmbeddingCache:
    """Thread-safe id -> vector cache so repeated embed calls are free."""

    def __init__(self):
        self._rows: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._rows)

    def get(self, post_id: str) -> np.ndarray | None:
        with self._lock:
            return self._rows.get(post_id)

    def put_many(self, ids: Sequence[str], rows: np.ndarray) -> None:
        with self._lock:
            for pid, row in zip(ids, rows):
                self._rows[pid] = np.array(row, dtype=np.float32)


def embed_corpus(
    backend: EncoderBackend,
    corpus: Corpus,
    batch_size: int = 32,
    cache: EmbeddingCache | None = None,
    max_in_flight: int = 1,
) -> EmbeddingMatrix:
    """Embed every post, one id-aligned row per post.

    Cached ids are not re-embedded. Batches may be issued concurrently
    (``max_in_flight``); results are reassembled in input order either way.
    """
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    ids = [p.id for p in corpus.posts]
    texts = {p.id: p.text for p in corpus.posts}

    missing = ids
    if cache is not None:
        missing = [pid for pid in ids if cache.get(pid) is None]

    batches = [
        missing[i : i + batch_size] for i in range(0, len(missing), batch_size)
    ]

    def run(batch_idx: int) -> np.ndarray:
        batch = batches[batch_idx]
        try:
            return backend.embed([texts[pid] for pid in batch])
        except TransportError as exc:
            raise TransportError(str(exc), batch_index=batch_idx) from exc

    fresh: dict[str, np.ndarray] = {}
    dim: int | None = None
    if batches:
        if max_in_flight > 1:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                results = list(pool.map(run, range(len(batches))))
        else:
            results = [run(i) for i in range(len(batches))]
        for batch_idx, (batch, rows) in enumerate(zip(batches, results)):
            rows = np.asarray(rows, dtype=np.float32)
            if rows.shape[0] != len(batch):
                raise IntegrityError(
                    f"batch {batch_idx}: {rows.shape[0]} rows for "
                    f"{len(batch)} texts"
                )
            if dim is None:
                dim = int(rows.shape[1])
            elif rows.shape[1] != dim:
                raise IntegrityError(
                    f"batch {batch_idx}: dim {rows.shape[1]} != {dim}"
                )
            for pid, row in zip(batch, rows):
                fresh[pid] = row
        if cache is not None:
            cache.put_many(list(fresh), np.stack(list(fresh.values())))

    def row_for(pid: str) -> np.ndarray:
        if pid in fresh:
            return fresh[pid]
        row = cache.get(pid) if cache is not None else None
        if row is None:
            raise IntegrityError(f"no embedding produced for post {pid!r}")
        return row

    if not ids:
        return EmbeddingMatrix((), np.zeros((0, dim or DEFAULT_DIM), np.float32))
    all_rows = np.stack([row_for(pid) for pid in ids])
    if dim is not None and all_rows.shape[1] != dim:
        raise IntegrityError("cache and backend dimensions disagree")
    return EmbeddingMatrix(tuple(ids), all_rows)


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write the binary CTSE store (bit-exact round trip)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, matrix.dim, len(matrix)))
        for pid in matrix.ids:
            fh.write(pid.encode("utf-8"))
            fh.write(b"\x00")
        fh.write(np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read a CTSE store written by :func:`save_embeddings`."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a CTSE embedding store")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    offset = 20
    ids = []
    for _ in range(count):
        end = data.find(b"\x00", offset)
        if end < 0:
            raise FormatError(f"{path}: truncated id table")
        ids.append(data[offset:end].decode("utf-8"))
        offset = end + 1
    need = count * dim * 4
    if len(data) - offset != need:
        raise FormatError(
            f"{path}: expected {need} bytes of rows, found {len(data) - offset}"
        )
    rows = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    return EmbeddingMatrix(tuple(ids), rows.reshape(count, dim).copy())
