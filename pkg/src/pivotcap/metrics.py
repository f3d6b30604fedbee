"""Caption quality metrics and structure-coincidence probes.

All text metrics operate on pre-tokenized captions (lists of token strings),
corpus-level, one reference per candidate. Structure probes compare scene
graphs by their directed label-pair edge sets and constituency trees by
their (label, depth) phrasal-node multisets.
"""
from __future__ import annotations

import math
from collections import Counter
from typing import Dict, List, Sequence

from .structures import ConstituencyTree, SceneGraph, sc_nodes_by_depth, sg_edge_triples

Tokens = Sequence[str]


def _check_corpus(candidates: Sequence[Tokens], references: Sequence[Tokens], name: str) -> None:
    if not candidates:
        raise ValueError(f"{name}: empty candidate set")
    if len(candidates) != len(references):
        raise ValueError(
            f"{name}: {len(candidates)} candidates but {len(references)} references"
        )


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> Dict[str, float]:
    """Corpus BLEU with clipped modified n-gram precision and brevity penalty.

    Returns per-order cumulative scores bleu_1..bleu_{max_n} (geometric mean
    of precisions 1..k times the brevity penalty), the raw precisions, and
    the penalty itself. bleu_{max_n} is duplicated under "bleu".
    """
    _check_corpus(candidates, references, "bleu")
    if max_n < 1:
        raise ValueError(f"bleu: max_n must be >= 1, got {max_n}")
    matched = [0] * max_n
    possible = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cn = _ngrams(cand, n)
            rn = _ngrams(ref, n)
            possible[n - 1] += sum(cn.values())
            matched[n - 1] += sum(min(c, rn[g]) for g, c in cn.items())
    precisions = [
        (matched[i] / possible[i]) if possible[i] > 0 else 0.0 for i in range(max_n)
    ]
    if cand_len == 0:
        bp = 0.0
    elif cand_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / cand_len)
    out: Dict[str, float] = {"brevity_penalty": bp}
    for k in range(1, max_n + 1):
        ps = precisions[:k]
        if min(ps) <= 0.0:
            out[f"bleu_{k}"] = 0.0
        else:
            out[f"bleu_{k}"] = bp * math.exp(sum(math.log(p) for p in ps) / k)
    out["precisions"] = precisions
    out["bleu"] = out[f"bleu_{max_n}"]
    return out


def rouge_l(candidates: Sequence[Tokens], references: Sequence[Tokens], beta: float = 1.2) -> float:
    """Corpus-averaged LCS F-measure.

    F = (1 + beta^2) R P / (R + beta^2 P) with recall against the reference;
    a pair with no common subsequence contributes zero.
    """
    _check_corpus(candidates, references, "rouge_l")
    total = 0.0
    for cand, ref in zip(candidates, references):
        lcs = _lcs_length(cand, ref)
        if lcs == 0 or not cand or not ref:
            continue
        p = lcs / len(cand)
        r = lcs / len(ref)
        total += (1.0 + beta * beta) * r * p / (r + beta * beta * p)
    return total / len(candidates)


def _lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def cider(candidates: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4) -> float:
    """TF-IDF n-gram cosine consensus, averaged over n = 1..max_n and over
    the corpus.

    IDF comes from the reference side: idf(g) = ln(N) - ln(max(df(g), 1))
    with df counting references containing g. Unweighted and unscaled, so
    identical corpora score 1.0 whenever every sample keeps at least one
    positive-IDF n-gram at each order, and disjoint vocabularies score 0.
    """
    _check_corpus(candidates, references, "cider")
    n_docs = len(references)
    df: List[Counter] = [Counter() for _ in range(max_n)]
    for ref in references:
        for n in range(1, max_n + 1):
            for g in set(_ngrams(ref, n)):
                df[n - 1][g] += 1
    log_n = math.log(n_docs)
    total = 0.0
    for cand, ref in zip(candidates, references):
        sim_sum = 0.0
        for n in range(1, max_n + 1):
            cv = _tfidf(_ngrams(cand, n), df[n - 1], log_n)
            rv = _tfidf(_ngrams(ref, n), df[n - 1], log_n)
            sim_sum += _cosine(cv, rv)
        total += sim_sum / max_n
    return total / len(candidates)


def _tfidf(counts: Counter, df: Counter, log_n: float) -> Dict[tuple, float]:
    return {g: c * (log_n - math.log(max(df[g], 1))) for g, c in counts.items()}


def _cosine(a: Dict[tuple, float], b: Dict[tuple, float]) -> float:
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def sg_coincidence(a: SceneGraph, b: SceneGraph) -> float:
    """Jaccard overlap of directed (source-label, destination-label) edge
    pair sets. Two edgeless graphs coincide trivially and score 1.0."""
    pa = set(sg_edge_triples(a))
    pb = set(sg_edge_triples(b))
    if not pa and not pb:
        return 1.0
    return len(pa & pb) / len(pa | pb)


def sc_coincidence(a: ConstituencyTree, b: ConstituencyTree) -> float:
    """Depth-discounted overlap of phrasal nodes matched as (label, depth).

    Each matched node contributes 1/depth (root depth 1); the denominator is
    the plain size of the (label, depth) multiset union. Because only the
    numerator is depth-discounted, identical trees score exactly 1.0 only
    when every phrasal node sits at depth 1; deeper shared structure is
    valued less than the union that contains it.
    """
    ca = Counter(sc_nodes_by_depth(a))
    cb = Counter(sc_nodes_by_depth(b))
    union = sum((ca | cb).values())
    if union == 0:
        return 1.0
    matched = 0.0
    for key, count in (ca & cb).items():
        _, depth = key
        matched += count / depth
    return matched / union
