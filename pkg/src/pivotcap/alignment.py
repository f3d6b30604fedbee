"""Contrastive structure alignment between node-representation sets.

Cross-modal alignment compares visual scene-graph nodes with language
scene-graph nodes; cross-lingual alignment compares pivot constituency-tree
nodes with target constituency-tree nodes. Both share one mechanism:

1. a cosine similarity matrix between the two representation sets,
2. positive-pair selection: each anchor row i takes its best column j* as a
   positive only when the similarity strictly exceeds a threshold rho,
3. an InfoNCE-style loss with temperature tau, summed over selected pairs.

The denominator in step 3 deliberately excludes the positive term itself:

    Z_i = sum_{k != j*} exp(s_ik / tau)

With that normalizer a well-separated pair drives log Z below s_ij/tau and the
per-pair loss goes negative; this is kept as the default because downstream
thresholds were tuned against it. Set include_positive_in_denominator=True for
the conventional form whose per-pair loss is bounded below by zero.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .tensor import (
    Tensor,
    add,
    cosine_matrix,
    exp,
    log,
    narrow,
    scale,
    tensor_sum,
    transpose,
)


class EmptyPairSetWarning(UserWarning):
    """Raised (as a warning) when no anchor clears its selection threshold."""


@dataclass
class AlignmentConfig:
    rho_m: float = 0.6
    rho_l: float = 0.3
    tau_m: float = 0.1
    tau_l: float = 0.1
    include_positive_in_denominator: bool = False
    symmetric_anchors: bool = False


def similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities, rows of `a` against rows of `b`."""
    return cosine_matrix(a, b)


def select_positive_pairs(s: np.ndarray, rho: float) -> List[Tuple[int, int]]:
    """For each row pick the argmax column, keep it only if strictly above rho.

    Ties go to the lowest column index. Returns (row, column) pairs in row
    order. Operates on plain similarity values, not on the graph, so callers
    can probe selection behaviour without building tensors.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"select_positive_pairs: expected a matrix, got shape {s.shape}")
    pairs: List[Tuple[int, int]] = []
    for i in range(s.shape[0]):
        j = int(np.argmax(s[i]))
        if s[i, j] > rho:
            pairs.append((i, j))
    return pairs


def contrastive_loss(
    s: Tensor,
    pairs: List[Tuple[int, int]],
    tau: float,
    include_positive_in_denominator: bool = False,
) -> Tensor:
    """Sum over selected pairs of  log Z_i - s_ij / tau.

    Z_i sums exp(s_ik / tau) over the anchor's row; the positive column is
    excluded unless include_positive_in_denominator is set. Log-sum-exp is
    computed against a detached per-row maximum so large s/tau cannot
    overflow. An empty pair list yields a constant zero and a warning, as
    does a pair whose denominator would be empty (a one-column matrix under
    the exclusive normalizer).
    """
    if tau <= 0.0:
        raise ValueError(f"contrastive_loss: tau must be positive, got {tau}")
    if s.data.ndim != 2:
        raise ValueError(f"contrastive_loss: expected a matrix, got shape {s.shape}")
    n_cols = s.shape[1]
    terms = []
    skipped = 0
    for i, j in pairs:
        if not (0 <= i < s.shape[0]) or not (0 <= j < n_cols):
            raise IndexError(f"contrastive_loss: pair ({i}, {j}) outside matrix of shape {s.shape}")
        if n_cols == 1 and not include_positive_in_denominator:
            skipped += 1
            continue
        row = narrow(s, 0, i, 1)
        z = scale(row, 1.0 / tau)
        if include_positive_in_denominator:
            masked = z
            m = float(np.max(z.data))
        else:
            mask = np.zeros((1, n_cols))
            mask[0, j] = -np.inf
            masked = add(z, Tensor(mask))
            m = float(np.max(masked.data))
        shifted = add(masked, Tensor(np.full((1, n_cols), -m)))
        lse = add(log(tensor_sum(exp(shifted))), Tensor(np.float64(m)))
        positive = scale(tensor_sum(narrow(row, 1, j, 1)), 1.0 / tau)
        terms.append(add(lse, scale(positive, -1.0)))
    if skipped:
        warnings.warn(
            f"contrastive_loss: skipped {skipped} pair(s) with an empty denominator",
            EmptyPairSetWarning,
        )
    if not terms:
        if not skipped:
            warnings.warn(
                "contrastive_loss: no positive pairs selected, loss is zero",
                EmptyPairSetWarning,
            )
        return Tensor(np.float64(0.0))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


def _aligned_loss(a: Tensor, b: Tensor, rho: float, tau: float, cfg: AlignmentConfig) -> Tensor:
    s = similarity_matrix(a, b)
    pairs = select_positive_pairs(s.data, rho)
    loss = contrastive_loss(s, pairs, tau, cfg.include_positive_in_denominator)
    if cfg.symmetric_anchors:
        st = transpose(s)
        pairs_t = select_positive_pairs(st.data, rho)
        loss = add(loss, contrastive_loss(st, pairs_t, tau, cfg.include_positive_in_denominator))
    return loss


def cma_loss(visual: Tensor, language: Tensor, cfg: AlignmentConfig) -> Tensor:
    """Cross-modal alignment: visual scene-graph nodes as anchors against
    language scene-graph nodes, threshold rho_m, temperature tau_m."""
    return _aligned_loss(visual, language, cfg.rho_m, cfg.tau_m, cfg)


def cla_loss(pivot: Tensor, target: Tensor, cfg: AlignmentConfig) -> Tensor:
    """Cross-lingual alignment: pivot constituency-tree nodes as anchors
    against target-tree nodes, threshold rho_l, temperature tau_l."""
    return _aligned_loss(pivot, target, cfg.rho_l, cfg.tau_l, cfg)
