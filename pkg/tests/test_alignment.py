"""Contrastive alignment oracles.

The loss is recomputed with explicit Python loops over pairs and normalizer
entries, in both denominator modes, and a few closed-form values are frozen
as literals. Pair selection is likewise brute-forced.
"""
import math
import warnings

import numpy as np
import pytest

from pivotcap.alignment import (
    AlignmentConfig,
    EmptyPairSetWarning,
    cla_loss,
    cma_loss,
    contrastive_loss,
    select_positive_pairs,
    similarity_matrix,
)
from pivotcap.tensor import Tensor

TOL = 1e-9


def brute_force_pairs(s, rho):
    pairs = []
    for i in range(s.shape[0]):
        best_j = 0
        for j in range(1, s.shape[1]):
            if s[i, j] > s[i, best_j]:
                best_j = j
        if s[i, best_j] > rho:
            pairs.append((i, best_j))
    return pairs


def brute_force_loss(s, pairs, tau, include_positive):
    total = 0.0
    for i, j in pairs:
        z = 0.0
        for k in range(s.shape[1]):
            if k == j and not include_positive:
                continue
            z += math.exp(s[i, k] / tau)
        total += math.log(z) - s[i, j] / tau
    return total


def test_loss_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(42)
    for trial in range(20):
        s = rng.uniform(-1.0, 1.0, size=(4, 5))
        tau = float(rng.uniform(0.05, 2.0))
        rho = float(rng.uniform(-0.5, 0.9))
        pairs = select_positive_pairs(s, rho)
        assert pairs == brute_force_pairs(s, rho)
        for include in (False, True):
            if not pairs:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyPairSetWarning)
                got = float(contrastive_loss(Tensor(s), pairs, tau, include).item())
            want = brute_force_loss(s, pairs, tau, include)
            assert got == pytest.approx(want, abs=TOL), (trial, include)


def test_frozen_values():
    # exclusive normalizer, one anchor, one negative at similarity zero:
    # loss = log(exp(0)) - 1 = -1 exactly
    s = Tensor(np.array([[1.0, 0.0]]))
    got = float(contrastive_loss(s, [(0, 0)], tau=1.0, include_positive_in_denominator=False).item())
    assert got == pytest.approx(-1.0, abs=TOL)
    # conventional normalizer on the same matrix: log(e + 1) - 1
    got = float(contrastive_loss(s, [(0, 0)], tau=1.0, include_positive_in_denominator=True).item())
    assert got == pytest.approx(math.log(math.e + 1.0) - 1.0, abs=TOL)


def test_uniform_rows_give_log_n():
    n = 7
    s = Tensor(np.full((1, n), 0.37))
    got = float(contrastive_loss(s, [(0, 2)], tau=0.5, include_positive_in_denominator=True).item())
    assert got == pytest.approx(math.log(n), abs=TOL)
    got = float(contrastive_loss(s, [(0, 2)], tau=0.5, include_positive_in_denominator=False).item())
    assert got == pytest.approx(math.log(n - 1), abs=TOL)


def test_selection_threshold_is_strict():
    s = np.array([[0.5, 0.3], [0.2, 0.1]])
    assert select_positive_pairs(s, 0.5) == []
    assert select_positive_pairs(s, 0.2) == [(0, 0)]
    assert select_positive_pairs(s, -1.0) == [(0, 0), (1, 0)]


def test_selection_tie_goes_to_lowest_column():
    s = np.array([[0.7, 0.7, 0.1]])
    assert select_positive_pairs(s, 0.0) == [(0, 0)]


def test_selection_rejects_non_matrix():
    with pytest.raises(ValueError):
        select_positive_pairs(np.zeros(3), 0.0)


def test_empty_pair_list_warns_and_returns_zero():
    s = Tensor(np.array([[0.1, 0.2]]))
    with pytest.warns(EmptyPairSetWarning):
        out = contrastive_loss(s, [], tau=1.0)
    assert float(out.item()) == 0.0
    assert not out.requires_grad


def test_one_column_exclusive_denominator_skips_and_warns():
    s = Tensor(np.array([[0.9], [0.8]]))
    with pytest.warns(EmptyPairSetWarning):
        out = contrastive_loss(s, [(0, 0), (1, 0)], tau=1.0, include_positive_in_denominator=False)
    assert float(out.item()) == 0.0
    # the conventional form is defined there and equals zero per pair
    got = float(contrastive_loss(s, [(0, 0)], tau=1.0, include_positive_in_denominator=True).item())
    assert got == pytest.approx(0.0, abs=TOL)


def test_tau_and_pair_validation():
    s = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        contrastive_loss(s, [(0, 0)], tau=0.0)
    with pytest.raises(ValueError):
        contrastive_loss(s, [(0, 0)], tau=-1.0)
    with pytest.raises(IndexError):
        contrastive_loss(s, [(2, 0)], tau=1.0)
    with pytest.raises(IndexError):
        contrastive_loss(s, [(0, 5)], tau=1.0)
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(np.zeros(3)), [], tau=1.0)


def test_similarity_invariant_under_common_rotation():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(5, 6))
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    s0 = similarity_matrix(Tensor(a), Tensor(b)).data
    s1 = similarity_matrix(Tensor(a @ q), Tensor(b @ q)).data
    assert np.max(np.abs(s0 - s1)) < TOL
    cfg = AlignmentConfig(rho_m=0.0, tau_m=0.5)
    l0 = float(cma_loss(Tensor(a), Tensor(b), cfg).item())
    l1 = float(cma_loss(Tensor(a @ q), Tensor(b @ q), cfg).item())
    assert l0 == pytest.approx(l1, abs=TOL)


def test_loss_decreases_as_positive_similarity_rises():
    base = np.array([[0.2, 0.1, -0.3]])
    for include in (False, True):
        losses = []
        for val in (0.2, 0.5, 0.8):
            s = base.copy()
            s[0, 0] = val
            losses.append(
                float(contrastive_loss(Tensor(s), [(0, 0)], 0.7, include).item())
            )
        assert losses[0] > losses[1] > losses[2]


def test_symmetric_anchors_adds_the_transposed_direction():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(5, 4)))
    cfg = AlignmentConfig(rho_l=-1.0, tau_l=0.9, symmetric_anchors=False)
    one_way = float(cla_loss(a, b, cfg).item())
    s = similarity_matrix(b, a)
    pairs = select_positive_pairs(s.data, cfg.rho_l)
    other_way = float(contrastive_loss(s, pairs, cfg.tau_l, cfg.include_positive_in_denominator).item())
    cfg_sym = AlignmentConfig(rho_l=-1.0, tau_l=0.9, symmetric_anchors=True)
    both = float(cla_loss(a, b, cfg_sym).item())
    assert both == pytest.approx(one_way + other_way, abs=TOL)


def test_cma_and_cla_use_their_own_thresholds():
    rng = np.random.default_rng(2)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(3, 4)))
    # rho_m high enough to select nothing, rho_l permissive
    cfg = AlignmentConfig(rho_m=1.1, rho_l=-1.1, tau_m=0.5, tau_l=0.5)
    with pytest.warns(EmptyPairSetWarning):
        zero = cma_loss(a, b, cfg)
    assert float(zero.item()) == 0.0
    nonzero = cla_loss(a, b, cfg)
    assert float(nonzero.item()) != 0.0


def test_loss_backward_produces_finite_gradients():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    y = Tensor(rng.normal(size=(4, 4)))
    s = similarity_matrix(x, y)
    pairs = select_positive_pairs(s.data, -1.0)
    loss = contrastive_loss(s, pairs, tau=0.5, include_positive_in_denominator=True)
    loss.backward()
    assert x.grad is not None
    assert np.isfinite(x.grad).all()
