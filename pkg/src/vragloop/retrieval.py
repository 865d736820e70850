"""Exact multi-vector (late interaction) page retrieval.

Score of a page for a query is the MaxSim sum: for every query vector take
the best dot product against the page's patch vectors, then add those maxima.
Everything is held in memory and scored exhaustively.
"""

from __future__ import annotations

import hashlib
import re
import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VIDX"
VERSION = 1
DEFAULT_TOP_K = 10


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError):
    pass


class EmptyIndex(RetrievalError):
    pass


class IndexFormatError(RetrievalError):
    pass


def _as_matrix(vectors, name: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True, eq=False)
class PageEmbedding:
    page_id: str
    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", _as_matrix(self.vectors, f"page {self.page_id!r}"))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class QueryEmbedding:
    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", _as_matrix(self.vectors, "query"))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def maxsim_score(query: QueryEmbedding, page: PageEmbedding) -> float:
    if query.dim != page.dim:
        raise DimensionMismatch(f"query dim {query.dim} != page dim {page.dim}")
    sim = query.vectors.astype(np.float64) @ page.vectors.astype(np.float64).T
    return float(sim.max(axis=1).sum())


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Immutable page store. All patch vectors are packed into one matrix."""

    dim: int
    pages: tuple[PageEmbedding, ...]
    id_lookup: dict[str, int] = field(repr=False)
    _packed: np.ndarray = field(repr=False, compare=False)
    _offsets: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def build(cls, pages: Iterable[PageEmbedding]) -> RetrievalIndex:
        pages = tuple(pages)
        if not pages:
            raise EmptyIndex("cannot build an index with no pages")
        dim = pages[0].dim
        lookup: dict[str, int] = {}
        for i, p in enumerate(pages):
            if p.dim != dim:
                raise DimensionMismatch(f"page {p.page_id!r} has dim {p.dim}, index dim is {dim}")
            if p.page_id in lookup:
                raise ValueError(f"duplicate page id {p.page_id!r}")
            lookup[p.page_id] = i
        packed = np.concatenate([p.vectors for p in pages]).astype(np.float64)
        packed.setflags(write=False)
        offsets = np.cumsum([0] + [p.vectors.shape[0] for p in pages[:-1]])
        return cls(dim=dim, pages=pages, id_lookup=lookup, _packed=packed, _offsets=offsets)

    def __len__(self) -> int:
        return len(self.pages)

    @property
    def page_ids(self) -> list[str]:
        return [p.page_id for p in self.pages]

    def scores(self, query: QueryEmbedding) -> np.ndarray:
        if query.dim != self.dim:
            raise DimensionMismatch(f"query dim {query.dim} != index dim {self.dim}")
        sim = query.vectors.astype(np.float64) @ self._packed.T
        per_page = np.maximum.reduceat(sim, self._offsets, axis=1)
        return per_page.sum(axis=0)


def rank(index: RetrievalIndex, query: QueryEmbedding, k: int) -> list[tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("index has no pages")
    scores = index.scores(query)
    # stable sort keeps insertion order among equal scores
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.pages[i].page_id, float(scores[i])) for i in order]


def retrieve_next_unseen(index: RetrievalIndex, query: QueryEmbedding, k: int, seen: Iterable[str]) -> str | None:
    """First top-k page not in ``seen``; None means no new pages are available."""
    seen = set(seen)
    for page_id, _ in rank(index, query, k):
        if page_id not in seen:
            return page_id
    return None


def write_index(path: str | Path, index: RetrievalIndex) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, index.dim, len(index.pages)))
        for page in index.pages:
            raw_id = page.page_id.encode("utf-8")
            if len(raw_id) > 0xFFFF:
                raise ValueError(f"page id too long: {page.page_id[:40]!r}...")
            f.write(struct.pack("<H", len(raw_id)))
            f.write(raw_id)
            f.write(struct.pack("<I", page.vectors.shape[0]))
            f.write(np.ascontiguousarray(page.vectors, dtype="<f4").tobytes())


def read_index(path: str | Path) -> RetrievalIndex:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise IndexFormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, dim, count = struct.unpack_from("<III", data, 4)
        if version != VERSION:
            raise IndexFormatError(f"{path}: unsupported version {version}")
        pos = 16
        pages = []
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            page_id = data[pos:pos + id_len].decode("utf-8")
            pos += id_len
            (patches,) = struct.unpack_from("<I", data, pos)
            pos += 4
            nbytes = patches * dim * 4
            if pos + nbytes > len(data):
                raise IndexFormatError(f"{path}: truncated vectors for page {page_id!r}")
            vecs = np.frombuffer(data, dtype="<f4", count=patches * dim, offset=pos).reshape(patches, dim)
            pos += nbytes
            pages.append(PageEmbedding(page_id, vecs.astype(np.float32)))
    except struct.error as e:
        raise IndexFormatError(f"{path}: truncated file") from e
    if pos != len(data):
        raise IndexFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return RetrievalIndex.build(pages)


_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, de-duplicated in first-seen order."""
    return list(dict.fromkeys(_WORD.findall(text.lower())))


class HashEmbedder:
    """Deterministic stand-in for a neural multi-vector encoder.

    Each distinct token becomes a one-hot vector at a hashed coordinate, so
    the MaxSim score of a page is (up to collisions) the number of query
    tokens that also occur in the page text.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed

    def _slot(self, token: str) -> int:
        digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def _embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text) or ["<empty>"]
        vecs = np.zeros((len(tokens), self.dim), dtype=np.float32)
        for row, tok in enumerate(tokens):
            vecs[row, self._slot(tok)] = 1.0
        return vecs

    def embed_query(self, text: str) -> QueryEmbedding:
        return QueryEmbedding(self._embed(text))

    def embed_page(self, page_id: str, text: str | None = None, image_path: str | Path | None = None) -> PageEmbedding:
        return PageEmbedding(page_id, self._embed(text if text else page_id))

