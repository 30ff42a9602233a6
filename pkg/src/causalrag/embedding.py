"""Text embeddings and exact top-k cosine retrieval.

Two encoders share one interface: a deterministic feature-hashing encoder
(the offline default, no model weights) and an HTTP-backed encoder for a
real sentence-embedding service. Retrieval is an exact full scan so results
can be checked against a brute-force oracle.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np
import requests

from .errors import DimensionMismatchError, EmptyTextError, RemoteEncoderFailure
from .text import tokenize

DIMENSION = 384


class Encoder(Protocol):
    """Anything that maps text to a unit-norm vector of fixed dimension."""

    name: str
    dimension: int

    def encode(self, text: str) -> np.ndarray: ...


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0.0 if either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cosine on shapes {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v
    return v / norm


def hash_bucket(token: str, dimension: int = DIMENSION) -> int:
    """Stable bucket index for a token (blake2b, platform-independent)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class HashingEncoder:
    """Deterministic bag-of-tokens encoder.

    Tokens are feature-hashed into `dimension` buckets, weighted by term
    frequency, and L2-normalized. Identical text always yields an identical
    vector; token order does not matter.
    """

    def __init__(self, dimension: int = DIMENSION):
        self.dimension = dimension
        self.name = "hashing"

    def encode(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyTextError(f"no encodable tokens in {text!r}")
        v = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokens:
            v[hash_bucket(tok, self.dimension)] += 1.0
        return _l2_normalize(v)


class HttpEncoder:
    """Encoder backed by an HTTP embedding service.

    Protocol: POST {"texts": [str]} to `url`, response {"embeddings": [[float]]}.
    Any non-200 status, transport error, or malformed payload raises
    RemoteEncoderFailure.
    """

    def __init__(self, url: str, dimension: int = DIMENSION, timeout: float = 30.0,
                 session: requests.Session | None = None):
        self.url = url
        self.dimension = dimension
        self.timeout = timeout
        self.name = "http"
        self._session = session or requests.Session()

    def encode(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyTextError("empty text passed to HTTP encoder")
        return self.encode_batch([text])[0]

    def encode_batch(self, texts: list[str]) -> list[np.ndarray]:
        try:
            response = self._session.post(self.url, json={"texts": texts}, timeout=self.timeout)
        except requests.RequestException as exc:
            raise RemoteEncoderFailure(f"transport error: {exc}") from exc
        if response.status_code != 200:
            raise RemoteEncoderFailure(f"status {response.status_code}: {response.text[:200]}")
        try:
            rows = response.json()["embeddings"]
            vectors = [np.asarray(row, dtype=np.float64) for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteEncoderFailure(f"malformed embedding payload: {exc}") from exc
        for v in vectors:
            if v.shape != (self.dimension,):
                raise RemoteEncoderFailure(
                    f"expected dimension {self.dimension}, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise RemoteEncoderFailure("non-finite components in embedding")
        return [_l2_normalize(v) for v in vectors]


@dataclass
class Passage:
    """One retrievable text unit with its embedding."""

    id: str
    text: str
    embedding: np.ndarray
    source: str = ""


@dataclass
class VectorIndex:
    """Exact-scan cosine index over passages with a shared dimension."""

    passages: list[Passage] = field(default_factory=list)
    dimension: int = DIMENSION
    encoder_name: str = "hashing"

    def __post_init__(self):
        self._by_id: dict[str, Passage] = {}
        passages = self.passages
        self.passages = []
        for p in passages:
            self.add(p)

    def _add_to_lookup(self, passage: Passage) -> None:
        if passage.embedding.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"passage {passage.id!r} has shape {passage.embedding.shape}, "
                f"index dimension is {self.dimension}")
        if passage.id in self._by_id:
            raise ValueError(f"duplicate passage id {passage.id!r}")
        self._by_id[passage.id] = passage

    def add(self, passage: Passage) -> None:
        self._add_to_lookup(passage)
        self.passages.append(passage)

    def __len__(self) -> int:
        return len(self.passages)

    def get(self, passage_id: str) -> Passage | None:
        return self._by_id.get(passage_id)

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """The k most cosine-similar passages as (id, score).

        Scores descend; ties break by ascending passage id. Returns fewer
        than k entries only when the index holds fewer than k passages.
        Each passage is scored with the `cosine` primitive itself, so
        duplicate embeddings tie exactly and the tie-break is reproducible.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query shape {query.shape}, index dimension {self.dimension}")
        ranked = sorted(
            ((p.id, cosine(p.embedding, query)) for p in self.passages),
            key=lambda item: (-item[1], item[0]),
        )
        return ranked[:k]


def build_index(records: Iterable[dict], encoder: Encoder) -> VectorIndex:
    """Embed passage records ({"id", "text", "source"}) into a fresh index."""
    index = VectorIndex(dimension=encoder.dimension, encoder_name=encoder.name)
    for rec in records:
        index.add(Passage(
            id=str(rec["id"]),
            text=rec["text"],
            embedding=encoder.encode(rec["text"]),
            source=rec.get("source", ""),
        ))
    return index


def load_passages(path: str) -> list[dict]:
    """Read a passage JSONL file; unknown keys are ignored."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append({
                "id": str(obj["id"]),
                "text": obj["text"],
                "source": obj.get("source", ""),
            })
    return records


def save_index(index: VectorIndex, path: str) -> None:
    """Persist as JSONL: a header line, then one {"id", "embedding"} per passage."""
    with open(path, "w", encoding="utf-8") as handle:
        header = {"dimension": index.dimension, "encoder": index.encoder_name}
        handle.write(json.dumps(header, sort_keys=True) + "\n")
        for p in index.passages:
            row = {"id": p.id, "embedding": [float(x) for x in p.embedding]}
            handle.write(json.dumps(row, sort_keys=True) + "\n")


def load_index(index_path: str, passage_records: Iterable[dict]) -> VectorIndex:
    """Rebuild an index from a persisted embedding file plus passage records."""
    texts = {str(r["id"]): r for r in passage_records}
    with open(index_path, encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines:
        raise ValueError(f"empty index file {index_path!r}")
    header = json.loads(lines[0])
    dimension = int(header["dimension"])
    index = VectorIndex(dimension=dimension, encoder_name=header.get("encoder", "unknown"))
    for line in lines[1:]:
        obj = json.loads(line)
        pid = str(obj["id"])
        vector = np.asarray(obj["embedding"], dtype=np.float64)
        if vector.shape != (dimension,):
            raise DimensionMismatchError(
                f"stored embedding for {pid!r} has shape {vector.shape}")
        rec = texts.get(pid)
        if rec is None:
            raise ValueError(f"index references unknown passage id {pid!r}")
        index.add(Passage(id=pid, text=rec["text"], embedding=vector,
                          source=rec.get("source", "")))
    return index
