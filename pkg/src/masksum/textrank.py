"""Extractive baseline: PageRank over a sentence cosine-similarity graph."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tokenizer import tokenize

_SENT_END = re.compile(r"(?<=[.!?])\s+")


class EmbeddingTable:
    """Word vectors with a fallback for unknown words.

    Loaded tables use a zero vector for OOV words. Hash tables derive a
    unit vector for every word from a SHA-256 seed, so any word is known.
    """

    def __init__(self, vectors: Mapping[str, np.ndarray] | None = None, dim: int | None = None,
                 hashed: bool = False):
        self.vectors = {w: np.asarray(v, dtype=float) for w, v in (vectors or {}).items()}
        dims = {v.shape[0] for v in self.vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"embedding vectors have mixed dimensions {sorted(dims)}")
        self.dim = dim if dim is not None else (dims.pop() if dims else 50)
        self.hashed = hashed
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def hash_embeddings(cls, dim: int = 50) -> EmbeddingTable:
        return cls(dim=dim, hashed=True)

    @classmethod
    def load(cls, path) -> EmbeddingTable:
        """Text format: a word followed by its floats, space separated, one per line."""
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad embedding line") from exc
        return cls(vectors)

    def __getitem__(self, word: str) -> np.ndarray:
        v = self.vectors.get(word)
        if v is not None:
            return v
        if not self.hashed:
            return np.zeros(self.dim)
        v = self._cache.get(word)
        if v is None:
            seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
            v = np.random.default_rng(seed).normal(size=self.dim)
            v /= np.linalg.norm(v)
            self._cache[word] = v
        return v

    def sentence_vector(self, tokens: Sequence[str]) -> np.ndarray:
        return np.mean([self[t] for t in tokens], axis=0) if tokens else np.zeros(self.dim)


def sentence_similarity(a: Sequence[str], b: Sequence[str], emb: EmbeddingTable) -> float:
    """Cosine of mean word vectors, clamped at 0; empty input gives 0."""
    if not a or not b:
        return 0.0
    va, vb = emb.sentence_vector(a), emb.sentence_vector(b)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, va @ vb / (na * nb))))


@dataclass
class SentenceGraph:
    sentences: list[list[str]]
    similarity: np.ndarray
    scores: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False

    @classmethod
    def build(cls, sentences: Sequence[Sequence[str]], emb: EmbeddingTable) -> SentenceGraph:
        n = len(sentences)
        sim = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                sim[i, j] = sim[j, i] = sentence_similarity(sentences[i], sentences[j], emb)
        return cls([list(s) for s in sentences], sim)


def rank(graph: SentenceGraph | np.ndarray, damping: float = 0.85, tol: float = 1e-6,
         max_iter: int = 200) -> np.ndarray:
    """Weighted PageRank, ``s_i <- (1-d) + d * sum_j s_j * w_ji / sum_k w_jk``.

    A sentence with no similar neighbours spreads its score uniformly.
    Stops once the largest per-sentence change drops below ``tol``.
    """
    sim = graph.similarity if isinstance(graph, SentenceGraph) else np.asarray(graph, dtype=float)
    n = sim.shape[0]
    if n < 1:
        raise ValueError("rank needs at least one sentence")
    if not np.all(np.isfinite(sim)):
        raise ValueError("similarity matrix contains non-finite values")
    out_weight = sim.sum(axis=1, keepdims=True)
    transition = np.where(out_weight > 0, sim / np.where(out_weight > 0, out_weight, 1.0), 1.0 / n)
    scores = np.ones(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = (1.0 - damping) + damping * (transition.T @ scores)
        delta = np.max(np.abs(new - scores))
        scores = new
        if delta < tol:
            converged = True
            break
    if isinstance(graph, SentenceGraph):
        graph.scores = scores
        graph.iterations = it
        graph.converged = converged
    return scores


def split_sentences(document: str, min_tokens: int = 3) -> list[str]:
    """Split on ``.!?`` plus whitespace, merging fragments shorter than ``min_tokens`` forward."""
    raw = [s.strip() for s in _SENT_END.split(document.strip()) if s.strip()]
    out: list[str] = []
    carry = ""
    for s in raw:
        piece = f"{carry} {s}".strip() if carry else s
        if len(tokenize(piece)) < min_tokens:
            carry = piece
        else:
            out.append(piece)
            carry = ""
    if carry:
        if out:
            out[-1] = f"{out[-1]} {carry}"
        else:
            out.append(carry)
    return out


def extract_summary(document: str, k: int = 3, emb: EmbeddingTable | None = None,
                    damping: float = 0.85, tol: float = 1e-6, max_iter: int = 200,
                    return_graph: bool = False):
    """Top-``k`` sentences by rank, re-emitted in document order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    emb = emb or EmbeddingTable.hash_embeddings()
    sentences = split_sentences(document)
    if not sentences:
        return ("", None) if return_graph else ""
    graph = SentenceGraph.build([tokenize(s) for s in sentences], emb)
    scores = rank(graph, damping, tol, max_iter)
    # rounding makes float-noise ties between equal sentences resolve by position
    order = sorted(range(len(sentences)), key=lambda i: (-round(float(scores[i]), 12), i))[:k]
    summary = " ".join(sentences[i] for i in sorted(order))
    return (summary, graph) if return_graph else summary


def load_embeddings(path: str | Path | None, dim: int = 50) -> EmbeddingTable:
    return EmbeddingTable.load(path) if path else EmbeddingTable.hash_embeddings(dim)
