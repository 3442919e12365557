"""ROUGE-1/2/L F1 scoring, shared by evaluation and the RL reward."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .tokenizer import tokenize

VARIANTS = ("rouge1", "rouge2", "rougeL")
DEFAULT_WEIGHTS = (0.4, 0.3, 0.3)


@dataclass(frozen=True)
class Score:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> Score:
        if n_cand == 0 or n_ref == 0:
            return cls(0.0, 0.0, 0.0)
        p = overlap / n_cand
        r = overlap / n_ref
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


@dataclass(frozen=True)
class RougeScore:
    rouge1: Score
    rouge2: Score
    rougeL: Score

    def __getitem__(self, variant: str) -> Score:
        return getattr(self, variant)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> Score:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return Score.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> Score:
    """Sentence-level ROUGE-L: the whole summary is one token stream."""
    return Score.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def score_tokens(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore(rouge_n(candidate, reference, 1),
                      rouge_n(candidate, reference, 2),
                      rouge_l(candidate, reference))


def score(candidate: str, reference: str) -> RougeScore:
    return score_tokens(tokenize(candidate), tokenize(reference))


def check_weights(weights: Sequence[float]) -> tuple[float, float, float]:
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0 for x in w):
        raise ValueError(f"reward weights must be three nonnegative numbers, got {weights}")
    if abs(sum(w) - 1.0) > 1e-9:
        raise ValueError(f"reward weights must sum to 1, got {sum(w)!r}")
    return w  # type: ignore[return-value]


def weighted_f1(s: RougeScore, weights: Sequence[float]) -> float:
    w1, w2, wl = weights
    return w1 * s.rouge1.f1 + w2 * s.rouge2.f1 + wl * s.rougeL.f1


def reward(candidate: str | Sequence[str], reference: str | Sequence[str],
           weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    """Weighted sum of ROUGE-1/2/L F1 in [0, 1]."""
    w = check_weights(weights)
    cand = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    ref = tokenize(reference) if isinstance(reference, str) else list(reference)
    return min(1.0, max(0.0, weighted_f1(score_tokens(cand, ref), w)))


@dataclass(frozen=True)
class CorpusScore:
    scores: RougeScore
    mean_reward: float
    count: int

    def lines(self) -> list[str]:
        out = []
        for v in VARIANTS:
            s = self.scores[v]
            out.append(f"{v} {s.precision:.4f} {s.recall:.4f} {s.f1:.4f}")
        out.append(f"mean_reward {self.mean_reward:.4f}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def corpus_eval(pairs: Iterable[tuple[str, str]],
                weights: Sequence[float] = DEFAULT_WEIGHTS) -> CorpusScore:
    """Unweighted mean of per-pair P/R/F1 for each variant, plus mean reward."""
    w = check_weights(weights)
    per = [score(c, r) for c, r in pairs]
    if not per:
        raise ValueError("corpus_eval: no pairs")
    n = len(per)

    def avg(variant: str) -> Score:
        return Score(sum(s[variant].precision for s in per) / n,
                     sum(s[variant].recall for s in per) / n,
                     sum(s[variant].f1 for s in per) / n)

    mean_reward = sum(weighted_f1(s, w) for s in per) / n
    return CorpusScore(RougeScore(avg("rouge1"), avg("rouge2"), avg("rougeL")), mean_reward, n)
