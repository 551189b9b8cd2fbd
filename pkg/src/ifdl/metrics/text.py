"""Lexical text metrics: BLEU-1, ROUGE-L and CIDEr."""

from __future__ import annotations

import math
import re
import warnings
from collections import Counter
from typing import Sequence

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str | Sequence[str]) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace. Token lists pass through."""
    if isinstance(text, str):
        return _PUNCT.sub(" ", text.lower()).split()
    return list(text)


def bleu1(candidate, reference) -> float:
    c, r = tokenize(candidate), tokenize(reference)
    if not r:
        raise ValueError("reference must be non-empty")
    if not c:
        return 0.0
    ref_counts = Counter(r)
    clipped = sum(min(n, ref_counts[w]) for w, n in Counter(c).items())
    precision = clipped / len(c)
    bp = math.exp(min(0.0, 1.0 - len(r) / len(c)))
    return precision * bp


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta: float = 1.2) -> float:
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return (1 + beta**2) * p * rec / (rec + beta**2 * p)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _cosine(a: dict, b: dict) -> float:
    dot = sum(v * b.get(k, 0.0) for k, v in a.items())
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def cider(candidates: Sequence, references: Sequence[Sequence], max_n: int = 4) -> tuple[list[float], float]:
    """Plain CIDEr: mean over n=1..max_n of 10 x TF-IDF cosine, IDF from the reference corpus.

    ``references[i]`` is the list of reference texts for ``candidates[i]``. With a
    single document every IDF is log(1) = 0 and all scores are zero.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates for {len(references)} reference sets")
    if not candidates:
        return [], 0.0
    cands = [tokenize(c) for c in candidates]
    refs = [[tokenize(r) for r in rs] for rs in references]
    n_docs = len(refs)
    if n_docs < 2:
        warnings.warn("CIDEr over a single document: every IDF is zero", RuntimeWarning, stacklevel=2)

    df: list[Counter] = [Counter() for _ in range(max_n)]
    for rs in refs:
        for n in range(1, max_n + 1):
            seen = set()
            for r in rs:
                seen.update(_ngrams(r, n))
            df[n - 1].update(seen)
    log_n = math.log(float(n_docs))

    def vec(tokens: list[str], n: int) -> dict:
        return {g: tf * (log_n - math.log(max(1.0, df[n - 1][g]))) for g, tf in _ngrams(tokens, n).items()}

    scores = []
    for cand, rs in zip(cands, refs):
        if not cand or not rs:
            scores.append(0.0)
            continue
        per_n = []
        for n in range(1, max_n + 1):
            cv = vec(cand, n)
            per_n.append(sum(_cosine(cv, vec(r, n)) for r in rs) / len(rs))
        scores.append(10.0 * sum(per_n) / max_n)
    return scores, sum(scores) / len(scores)
