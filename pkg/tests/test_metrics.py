"""Metric oracles.

Every score is checked against an arithmetic path independent of the
implementation: hand-counted clipped n-grams for BLEU, a memoized recursive
LCS for ROUGE-L, and explicit TF-IDF cosine arithmetic for CIDEr. The two
structure-coincidence worked examples (0.5 and 0.375) are asserted exactly.
"""
import math
from collections import Counter
from fractions import Fraction
from functools import lru_cache

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pivotcap.metrics import bleu, cider, rouge_l, sc_coincidence, sg_coincidence
from pivotcap.structures import ConstituencyTree, SceneGraph, ScNode, SgNode

TOL = 1e-9


# -- toy corpora -------------------------------------------------------------

CAND_A = "the cat sat on the mat".split()
REF_A = "the cat is on the mat".split()
CAND_B = "the dog runs fast".split()
REF_B = "the dog runs fast".split()

# clipped n-gram counts for (CAND_A, REF_A) and (CAND_B, REF_B), counted by
# hand: (matched, possible) per order 1..4 summed over both sentence pairs
HAND_COUNTS = [(9, 10), (6, 8), (3, 6), (1, 4)]


def test_bleu_matches_hand_counted_ngrams():
    out = bleu([CAND_A, CAND_B], [REF_A, REF_B])
    assert out["brevity_penalty"] == 1.0
    precisions = [Fraction(m, p) for m, p in HAND_COUNTS]
    for got, want in zip(out["precisions"], precisions):
        assert got == pytest.approx(float(want), abs=TOL)
    for k in range(1, 5):
        logs = [math.log(float(p)) for p in precisions[:k]]
        want = math.exp(sum(logs) / k)
        assert out[f"bleu_{k}"] == pytest.approx(want, abs=TOL)
    assert out["bleu"] == out["bleu_4"]


def test_bleu_identity_and_disjoint():
    out = bleu([CAND_A], [CAND_A])
    assert out["bleu_4"] == pytest.approx(1.0, abs=TOL)
    out = bleu([["aa", "bb"]], [["cc", "dd"]])
    assert out["bleu_1"] == 0.0
    assert out["bleu_4"] == 0.0


def test_bleu_brevity_penalty():
    # candidate shorter than reference: bp = exp(1 - ref/cand)
    out = bleu([["the", "cat"]], [["the", "cat", "sat", "down"]])
    assert out["brevity_penalty"] == pytest.approx(math.exp(1.0 - 4.0 / 2.0), abs=TOL)
    # longer candidate pays no penalty
    out = bleu([["the", "cat", "sat", "down", "now"]], [["the", "cat"]])
    assert out["brevity_penalty"] == 1.0


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([CAND_A], [])
    with pytest.raises(ValueError):
        bleu([CAND_A], [REF_A], max_n=0)


def _lcs_oracle(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))

    return rec(len(a), len(b))


def test_rouge_l_matches_recursive_lcs_oracle():
    pairs = [
        (CAND_A, REF_A),
        (CAND_B, REF_B),
        ("a b c d".split(), "b d e".split()),
        ("x y".split(), "p q".split()),
    ]
    beta = 1.2
    total = 0.0
    for cand, ref in pairs:
        lcs = _lcs_oracle(cand, ref)
        if lcs == 0:
            continue
        p = lcs / len(cand)
        r = lcs / len(ref)
        total += (1 + beta * beta) * r * p / (r + beta * beta * p)
    want = total / len(pairs)
    got = rouge_l([c for c, _ in pairs], [r for _, r in pairs])
    assert got == pytest.approx(want, abs=TOL)


def test_rouge_l_identity_and_disjoint():
    assert rouge_l([CAND_A], [CAND_A]) == pytest.approx(1.0, abs=TOL)
    assert rouge_l([["aa"]], [["bb"]]) == 0.0


def _cider_oracle(candidates, references, max_n=4):
    n_docs = len(references)
    df = [Counter() for _ in range(max_n)]
    for ref in references:
        for n in range(1, max_n + 1):
            grams = {tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)}
            for g in grams:
                df[n - 1][g] += 1

    def vec(tokens, n):
        counts = Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        return {
            g: c * (math.log(n_docs) - math.log(max(df[n - 1][g], 1)))
            for g, c in counts.items()
        }

    def cosine(u, v):
        dot = sum(val * v[g] for g, val in u.items() if g in v)
        nu = math.sqrt(sum(val * val for val in u.values()))
        nv = math.sqrt(sum(val * val for val in v.values()))
        return 0.0 if nu == 0.0 or nv == 0.0 else dot / (nu * nv)

    total = 0.0
    for cand, ref in zip(candidates, references):
        total += sum(cosine(vec(cand, n), vec(ref, n)) for n in range(1, max_n + 1)) / max_n
    return total / len(candidates)


def test_cider_matches_tfidf_arithmetic():
    candidates = [
        "a red cube sits on a blue ball".split(),
        "the small dog chases the ball".split(),
        "a green cone stands alone".split(),
    ]
    references = [
        "a red cube rests on a blue ball".split(),
        "a small dog chases a red ball".split(),
        "the green cone stands alone".split(),
    ]
    got = cider(candidates, references)
    want = _cider_oracle(candidates, references)
    assert got == pytest.approx(want, abs=TOL)


def test_cider_identity_and_disjoint():
    corpus = [
        "a red cube sits there".split(),
        "the blue ball rolls away".split(),
        "one green cone stands tall".split(),
    ]
    assert cider(corpus, corpus) == pytest.approx(1.0, abs=TOL)
    disjoint = [["xx", "yy"], ["zz", "ww"], ["vv", "uu"]]
    assert cider(disjoint, corpus) == pytest.approx(0.0, abs=TOL)


def test_corpus_metrics_are_permutation_invariant():
    cands = [CAND_A, CAND_B, "a b c".split()]
    refs = [REF_A, REF_B, "a c d".split()]
    perm = [2, 0, 1]
    pc = [cands[i] for i in perm]
    pr = [refs[i] for i in perm]
    assert bleu(pc, pr)["bleu_4"] == pytest.approx(bleu(cands, refs)["bleu_4"], abs=TOL)
    assert rouge_l(pc, pr) == pytest.approx(rouge_l(cands, refs), abs=TOL)
    assert cider(pc, pr) == pytest.approx(cider(cands, refs), abs=TOL)


# -- structure coincidence ---------------------------------------------------


def _graph(labels, edges):
    nodes = [SgNode(id=i, label=lab, kind="object") for i, lab in enumerate(labels)]
    return SceneGraph(nodes=nodes, edges=edges)


def test_sg_coincidence_worked_example():
    # three label pairs each, two shared: Jaccard 2/4 = 0.5 exactly
    a = _graph(["cat", "mat", "dog", "bone"], [(0, 1), (2, 3), (0, 3)])
    b = _graph(["cat", "mat", "dog", "bone", "tree"], [(0, 1), (2, 3), (2, 4)])
    assert sg_coincidence(a, b) == 0.5


def test_sg_coincidence_identity_disjoint_symmetry():
    a = _graph(["cat", "mat"], [(0, 1)])
    b = _graph(["dog", "bone"], [(0, 1)])
    assert sg_coincidence(a, a) == 1.0
    assert sg_coincidence(a, b) == 0.0
    assert sg_coincidence(a, b) == sg_coincidence(b, a)
    empty = _graph(["cat"], [])
    assert sg_coincidence(empty, empty) == 1.0


def test_sg_coincidence_is_case_insensitive_on_labels():
    a = _graph(["Cat", "Mat"], [(0, 1)])
    b = _graph(["cat", "mat"], [(0, 1)])
    assert sg_coincidence(a, b) == 1.0


def _tree(spec):
    """Builds a ConstituencyTree from ("LABEL", [children]) with strings as
    word leaves."""
    nodes, parent, children = [], [], []

    def add(node_spec, par):
        idx = len(nodes)
        if isinstance(node_spec, str):
            nodes.append(ScNode(id=idx, label=node_spec, kind="word"))
            parent.append(par)
            children.append([])
            return idx
        label, kids = node_spec
        nodes.append(ScNode(id=idx, label=label, kind="phrasal"))
        parent.append(par)
        children.append([])
        for kid in kids:
            children[idx].append(add(kid, idx))
        return idx

    add(spec, None)
    return ConstituencyTree(nodes=nodes, parent=parent, children=children)


def test_sc_coincidence_worked_example():
    # shared: root S at depth 1 (weight 1) and NP at depth 2 (weight 1/2);
    # the (label, depth) union holds 4 entries -> (1 + 0.5) / 4 = 0.375
    a = _tree(("S", [("NP", ["dog"]), ("VP", ["runs"]), ("PP", ["far"])]))
    b = _tree(("S", [("NP", ["cat"])]))
    assert sc_coincidence(a, b) == 0.375


def test_sc_coincidence_identity_and_disjoint():
    flat = _tree(("S", ["the", "dog"]))
    assert sc_coincidence(flat, flat) == 1.0
    other = _tree(("X", ["a"]))
    assert sc_coincidence(flat, other) == 0.0


def test_sc_coincidence_discounts_depth():
    # matched nodes below the root contribute 1/depth, so an identical deep
    # tree scores the depth-discounted ratio rather than 1
    deep = _tree(("S", [("NP", ["dog"])]))
    assert sc_coincidence(deep, deep) == (1.0 + 0.5) / 2.0


@given(
    st.lists(
        st.tuples(st.integers(0, 3), st.integers(0, 3)).filter(lambda e: e[0] != e[1]),
        max_size=6,
    ),
    st.lists(
        st.tuples(st.integers(0, 3), st.integers(0, 3)).filter(lambda e: e[0] != e[1]),
        max_size=6,
    ),
)
def test_sg_coincidence_bounded_and_symmetric(edges_a, edges_b):
    labels = ["n0", "n1", "n2", "n3"]
    a = _graph(labels, edges_a)
    b = _graph(labels, edges_b)
    v = sg_coincidence(a, b)
    assert 0.0 <= v <= 1.0
    assert v == sg_coincidence(b, a)
