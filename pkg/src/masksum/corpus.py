"""JSON-lines corpora and a synthetic salient/noise summarization corpus."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import tokenize


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    article: str
    summary: str


def load_jsonl(path) -> list[Example]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    out: list[Example] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            for key in ("id", "article", "summary"):
                if not isinstance(obj.get(key), str):
                    raise CorpusError(f"{path}:{lineno}: missing or non-string field {key!r}")
            if obj["id"] in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            if not obj["article"].strip():
                raise CorpusError(f"{path}:{lineno}: empty article")
            seen.add(obj["id"])
            out.append(Example(obj["id"], obj["article"], obj["summary"]))
    return out


def write_jsonl(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps({"id": ex.id, "article": ex.article, "summary": ex.summary},
                                ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

SUBJECTS = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy")
VERBS = ("bought", "sold", "painted", "found", "lost", "built", "cleaned", "moved", "fixed", "opened")
SYNONYMS = ("purchased", "traded", "coloured", "discovered", "misplaced", "constructed",
            "washed", "shifted", "repaired", "unlocked")
ADJECTIVES = ("red", "old", "large", "small", "green", "new", "broken", "shiny")
OBJECTS = ("car", "house", "boat", "chair", "table", "bike", "lamp", "door", "clock", "piano")
GRAMMAR_WORDS = SUBJECTS + VERBS + SYNONYMS + ADJECTIVES + OBJECTS + (".",)
PARAPHRASE = dict(zip(VERBS, SYNONYMS))

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")
_CODAS = ("", "n", "x", "m")


def noise_lexicon(size: int) -> list[str]:
    """Deterministic pseudo-words, disjoint from the grammar words."""
    words = []
    for coda in _CODAS:
        for o2 in _ONSETS:
            for v1 in _VOWELS:
                for o1 in _ONSETS:
                    for v2 in _VOWELS:
                        w = o1 + v1 + o2 + v2 + coda
                        if w not in GRAMMAR_WORDS:
                            words.append(w)
                        if len(words) == size:
                            return words
    raise CorpusError(f"cannot generate {size} noise words")


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    ``vocab_size`` counts word types (grammar words plus noise words).
    ``noise_rate`` is the chance of a noise word being inserted after each
    word of a salient sentence in the article; summaries never contain them.
    """

    vocab_size: int = 150
    num_examples: int = 500
    min_sentences: int = 4
    max_sentences: int = 6
    salient: int = 2
    noise_rate: float = 0.05
    noise_len: tuple[int, int] = (3, 5)
    paraphrase: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.salient < 1 or self.salient > self.min_sentences:
            raise CorpusError("salient sentence count must be between 1 and min_sentences")
        if self.min_sentences > self.max_sentences:
            raise CorpusError("min_sentences exceeds max_sentences")
        if self.vocab_size < len(GRAMMAR_WORDS) + 10:
            raise CorpusError(f"vocab_size {self.vocab_size} too small: grammar needs "
                              f"{len(GRAMMAR_WORDS)} words plus at least 10 noise words")
        if not 0.0 <= self.noise_rate < 1.0:
            raise CorpusError("noise_rate must be in [0, 1)")


def _salient_sentence(rng: np.random.Generator, used_subjects: set[str]) -> list[str]:
    choices = [s for s in SUBJECTS if s not in used_subjects]
    subj = choices[rng.integers(len(choices))]
    used_subjects.add(subj)
    return [subj, VERBS[rng.integers(len(VERBS))], ADJECTIVES[rng.integers(len(ADJECTIVES))],
            OBJECTS[rng.integers(len(OBJECTS))], "."]


def generate_examples(spec: SyntheticSpec) -> list[Example]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    noise_words = noise_lexicon(spec.vocab_size - len(GRAMMAR_WORDS))
    out = []
    for idx in range(spec.num_examples):
        n_sent = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
        used: set[str] = set()
        salient = [_salient_sentence(rng, used) for _ in range(spec.salient)]
        kinds = np.array([True] * spec.salient + [False] * (n_sent - spec.salient))
        rng.shuffle(kinds)
        tokens: list[str] = []
        summary: list[str] = []
        it = iter(salient)
        for is_salient in kinds:
            if is_salient:
                sent = next(it)
                for w in sent:
                    tokens.append(w)
                    if w != "." and rng.random() < spec.noise_rate:
                        tokens.append(noise_words[rng.integers(len(noise_words))])
                summary.extend(PARAPHRASE.get(w, w) if spec.paraphrase else w for w in sent)
            else:
                length = int(rng.integers(spec.noise_len[0], spec.noise_len[1] + 1))
                tokens.extend(noise_words[j] for j in rng.integers(len(noise_words), size=length))
                tokens.append(".")
        out.append(Example(f"syn-{spec.seed}-{idx:05d}", detokenize(tokens), detokenize(summary)))
    return out


def detokenize(tokens: Sequence[str]) -> str:
    text = " ".join(tokens)
    return text.replace(" .", ".")


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Example], list[Example],
                                                      list[Example]]:
    """Train/val/test split 80/10/10, fully determined by ``spec.seed``."""
    examples = generate_examples(spec)
    n = len(examples)
    a, b = int(round(0.8 * n)), int(round(0.9 * n))
    return examples[:a], examples[a:b], examples[b:]


def token_classes(tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """(salient, noise) boolean masks over synthetic article tokens.

    Periods end both kinds of sentence and belong to neither class.
    """
    grammar = set(GRAMMAR_WORDS) - {"."}
    salient = np.array([t in grammar for t in tokens], dtype=bool)
    noise = np.array([t not in GRAMMAR_WORDS for t in tokens], dtype=bool)
    return salient, noise


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

HIST_EDGES = (0, 8, 16, 32, 64, 128, 256, 512)


@dataclass
class CorpusStats:
    count: int
    article_tokens_mean: float
    summary_tokens_mean: float
    article_hist: dict[str, int]
    summary_hist: dict[str, int]
    vocab_types: int
    vocab_coverage: float | None

    def lines(self) -> list[str]:
        out = [f"examples {self.count}",
               f"article_tokens_mean {self.article_tokens_mean:.4f}",
               f"summary_tokens_mean {self.summary_tokens_mean:.4f}",
               f"vocab_types {self.vocab_types}"]
        if self.vocab_coverage is not None:
            out.append(f"vocab_coverage {self.vocab_coverage:.4f}")
        out += [f"article_len {k} {v}" for k, v in self.article_hist.items()]
        out += [f"summary_len {k} {v}" for k, v in self.summary_hist.items()]
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def _histogram(lengths: Sequence[int]) -> dict[str, int]:
    edges = list(HIST_EDGES)
    bins = {f"[{lo},{hi})": 0 for lo, hi in zip(edges[:-1], edges[1:])}
    bins[f"[{edges[-1]},inf)"] = 0
    keys = list(bins)
    for n in lengths:
        idx = int(np.searchsorted(edges, n, side="right")) - 1
        bins[keys[idx]] += 1
    return bins


def stats(examples: Sequence[Example], vocab=None) -> CorpusStats:
    """Counts, token-length histograms and (with ``vocab``) token coverage."""
    art = [tokenize(e.article) for e in examples]
    summ = [tokenize(e.summary) for e in examples]
    counts: Counter[str] = Counter()
    for toks in art + summ:
        counts.update(toks)
    coverage = None
    if vocab is not None:
        total = sum(counts.values())
        covered = sum(c for t, c in counts.items() if t in vocab)
        coverage = covered / total if total else 0.0
    n = len(examples)
    return CorpusStats(
        count=n,
        article_tokens_mean=float(np.mean([len(a) for a in art])) if n else 0.0,
        summary_tokens_mean=float(np.mean([len(s) for s in summ])) if n else 0.0,
        article_hist=_histogram([len(a) for a in art]),
        summary_hist=_histogram([len(s) for s in summ]),
        vocab_types=len(counts),
        vocab_coverage=coverage,
    )
