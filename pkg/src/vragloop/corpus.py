"""Corpus manifest, eval-set files, page images and index building."""

from __future__ import annotations

import importlib
import io
import json
from collections.abc import Iterable, Iterator
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

from .context import ImageRef
from .retrieval import HashEmbedder, PageEmbedding, QueryEmbedding, RetrievalIndex
from .trajectory import PageRef, Query
from .vision import CropRegion, crop_image


class CorpusError(Exception):
    pass


class MissingImage(CorpusError):
    pass


class EmbedderFailure(CorpusError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    page_id: str
    document_id: str
    image_path: str
    width_px: int
    height_px: int
    text: str | None = None  # optional page text, used by text-based embedders

    @property
    def ref(self) -> PageRef:
        return PageRef(self.page_id, self.width_px, self.height_px)


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def __post_init__(self) -> None:
        seen = set()
        for e in self.entries:
            if e.page_id in seen:
                raise CorpusError(f"duplicate page id {e.page_id!r}")
            seen.add(e.page_id)

    @classmethod
    def load(cls, path: str | Path) -> CorpusManifest:
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                entries.append(ManifestEntry(**json.loads(line)))
            except (TypeError, ValueError) as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
        return cls(entries, path.parent)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for e in self.entries:
                f.write(json.dumps({k: v for k, v in asdict(e).items() if v is not None}) + "\n")

    def image_file(self, entry: ManifestEntry) -> Path:
        p = Path(entry.image_path)
        return p if p.is_absolute() else self.root / p

    def pages(self) -> dict[str, PageRef]:
        return {e.page_id: e.ref for e in self.entries}

    def document_of(self) -> dict[str, str]:
        return {e.page_id: e.document_id for e in self.entries}

    def entry(self, page_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.page_id == page_id:
                return e
        raise KeyError(page_id)


class PageImages:
    """Loads page pixels from the manifest; renders crop references on demand."""

    def __init__(self, manifest: CorpusManifest, crop_output_size: tuple[int, int] | None = None):
        self.manifest = manifest
        self.crop_output_size = crop_output_size
        self._paths = {e.page_id: manifest.image_file(e) for e in manifest.entries}

    def load(self, page_id: str) -> bytes:
        path = self._paths.get(page_id)
        if path is None or not path.is_file():
            raise MissingImage(f"no image for page {page_id!r}")
        return path.read_bytes()

    def render(self, ref: ImageRef) -> bytes:
        data = self.load(ref.page_id)
        if ref.crop_box is None:
            return data
        return crop_image(data, CropRegion(ref.crop_box), self.crop_output_size)


class Embedder(Protocol):
    dim: int

    def embed_query(self, text: str) -> QueryEmbedding: ...

    def embed_page(self, page_id: str, text: str | None = None, image_path: str | Path | None = None) -> PageEmbedding: ...


def load_embedder(spec: str = "hash", dim: int = 256, seed: int = 0) -> Embedder:
    """``hash`` for the built-in hash embedder, or ``package.module:factory``."""
    if spec == "hash":
        return HashEmbedder(dim=dim, seed=seed)
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"embedder spec must be 'hash' or 'module:factory', got {spec!r}")
    factory = getattr(importlib.import_module(module_name), attr)
    return factory(dim=dim, seed=seed)


def build_index(manifest: CorpusManifest, embedder: Embedder, check_images: bool = True) -> RetrievalIndex:
    if not manifest.entries:
        raise CorpusError("manifest has no pages")
    pages = []
    for e in manifest.entries:
        path = manifest.image_file(e)
        if check_images and not path.is_file():
            raise MissingImage(f"{e.page_id}: image {path} not found")
        try:
            page = embedder.embed_page(e.page_id, text=e.text, image_path=path)
        except Exception as exc:  # plugin code
            raise EmbedderFailure(f"{e.page_id}: {exc}") from exc
        if page.dim != embedder.dim:
            raise EmbedderFailure(f"{e.page_id}: embedder returned dim {page.dim}, expected {embedder.dim}")
        pages.append(page)
    return RetrievalIndex.build(pages)


def read_eval_set(path: str | Path) -> list[Query]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(Query.from_dict(json.loads(line)))
            except (KeyError, ValueError) as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
    return out


def write_eval_set(path: str | Path, samples: Iterable[Query]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for q in samples:
            f.write(json.dumps(q.to_dict(), ensure_ascii=False) + "\n")


def check_eval_set(samples: Iterable[Query], manifest: CorpusManifest) -> Iterator[str]:
    """Yield a message for every reference page that is not in the corpus."""
    ids = {e.page_id for e in manifest.entries}
    for q in samples:
        for p in sorted(q.reference_pages or ()):
            if p not in ids:
                yield f"{q.id}: reference page {p!r} not in corpus"


def png_bytes(image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()
