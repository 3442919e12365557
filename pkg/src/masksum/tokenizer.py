"""Word-level tokenizer, vocabulary, and the seq2seq sequence layout."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, SOS, EOS, SEP, UNK = 0, 1, 2, 3, 4
SPECIALS = ("[PAD]", "[SOS]", "[EOS]", "[SEP]", "[UNK]")

SOURCE, TARGET = 0, 1


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel punctuation off token edges.

    >>> tokenize("The cat.")
    ['the', 'cat', '.']
    """
    out: list[str] = []
    for word in text.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        start, end = 0, len(word)
        while start < end and _is_punct(word[start]):
            lead.append(word[start])
            start += 1
        while end > start and _is_punct(word[end - 1]):
            trail.append(word[end - 1])
            end -= 1
        out.extend(lead)
        if start < end:
            out.append(word[start:end])
        out.extend(reversed(trail))
    return out


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:5]) != SPECIALS:
            raise ValueError("vocab must start with the five special tokens")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("vocab contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], skip_specials: bool = True) -> list[str]:
        toks = []
        for i in ids:
            if skip_specials and i < len(SPECIALS):
                continue
            toks.append(self.id_to_token[i])
        return toks

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token[5:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(SPECIALS + tuple(lines))


def build_vocab(corpus: Iterable[str], min_count: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-ranked vocabulary; ties go to the lexicographically smaller token.

    ``max_size`` caps the total size including the five specials.
    """
    counts: Counter[str] = Counter()
    seen_any = False
    for doc in corpus:
        seen_any = True
        counts.update(tokenize(doc))
    if not seen_any:
        raise ValueError("build_vocab: corpus is empty")
    ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                    key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max(0, max_size - len(SPECIALS))]
    return Vocab(SPECIALS + tuple(ranked))


@dataclass
class TokenSequence:
    ids: np.ndarray
    segment: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.segment = np.asarray(self.segment, dtype=np.int64)
        if self.ids.shape != self.segment.shape:
            raise ValueError("ids and segment flags differ in length")
        tgt = np.nonzero(self.segment == TARGET)[0]
        src = np.nonzero(self.segment == SOURCE)[0]
        if tgt.size and src.size and src.max() > tgt.min():
            raise ValueError("SOURCE positions must precede TARGET positions")

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def num_source(self) -> int:
        return int((self.segment == SOURCE).sum())

    def source_content(self) -> np.ndarray:
        """Positions of article tokens (SOURCE minus the SOS and SEP markers)."""
        n = self.num_source
        return np.arange(1, n - 1) if n >= 2 else np.arange(0)

    def source_prefix(self) -> TokenSequence:
        n = self.num_source
        return TokenSequence(self.ids[:n].copy(), self.segment[:n].copy())


def encode_source(source: str | Sequence[str], vocab: Vocab, max_src: int) -> TokenSequence:
    toks = tokenize(source) if isinstance(source, str) else list(source)
    ids = [SOS] + vocab.encode(toks[:max_src]) + [SEP]
    return TokenSequence(ids, [SOURCE] * len(ids))


def encode_pair(source: str | Sequence[str], target: str | Sequence[str], vocab: Vocab,
                max_src: int, max_tgt: int) -> TokenSequence:
    """Lay out ``[SOS] source [SEP] target [EOS]``; SOS through SEP are SOURCE."""
    src = encode_source(source, vocab, max_src)
    toks = tokenize(target) if isinstance(target, str) else list(target)
    tgt = vocab.encode(toks[:max_tgt]) + [EOS]
    ids = np.concatenate([src.ids, np.asarray(tgt, dtype=np.int64)])
    seg = np.concatenate([src.segment, np.full(len(tgt), TARGET, dtype=np.int64)])
    return TokenSequence(ids, seg)


def decode_target(seq: TokenSequence, vocab: Vocab) -> list[str]:
    ids = seq.ids[seq.segment == TARGET]
    return vocab.decode(ids)
