import math

import numpy as np
import pytest
import torch

from centroida.calibration import (
    ProbBatch,
    batch_weights,
    max_prob,
    row_entropy,
    temperature_softmax,
)


def t64(x):
    return torch.tensor(x, dtype=torch.float64)


def _rand_probs(b, k, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.random((b, k)) + 1e-3
    return torch.tensor(p / p.sum(axis=1, keepdims=True))


# ------------------------------------------------------------ temperature_softmax

def test_softmax_symmetric_logits():
    out = temperature_softmax(t64([[0.0, 0.0]]), 2.0)
    torch.testing.assert_close(out, t64([[0.5, 0.5]]))


def test_softmax_analytic_two_thirds():
    out = temperature_softmax(t64([[2.0 * math.log(2.0), 0.0]]), 2.0)
    torch.testing.assert_close(out, t64([[2.0 / 3.0, 1.0 / 3.0]]), atol=1e-12, rtol=0)


def test_softmax_extreme_logits_no_overflow():
    out = temperature_softmax(t64([[1000.0, 0.0]]), 2.0)
    assert torch.isfinite(out).all()
    torch.testing.assert_close(out, t64([[1.0, 0.0]]), atol=1e-12, rtol=0)


def test_softmax_matches_plain_softmax_at_t1():
    logits = torch.tensor(np.random.default_rng(1).standard_normal((6, 5)))
    mine = temperature_softmax(logits, 1.0)
    ref = torch.softmax(logits, dim=1)
    assert (mine - ref).abs().max() < 1e-10


def test_softmax_high_temperature_tends_uniform():
    logits = torch.tensor(np.random.default_rng(2).standard_normal((4, 3)))
    out = temperature_softmax(logits, 1e8)
    assert (out - 1.0 / 3.0).abs().max() < 1e-6


def test_softmax_rejects_bad_inputs():
    with pytest.raises(ValueError):
        temperature_softmax(torch.zeros(3), 2.0)
    with pytest.raises(ValueError):
        temperature_softmax(torch.zeros(2, 2), 0.0)
    with pytest.raises(ValueError, match="non-finite"):
        temperature_softmax(t64([[float("nan"), 0.0]]), 2.0)


def test_softmax_rows_sum_to_one():
    probs = temperature_softmax(torch.tensor(np.random.default_rng(3).standard_normal((8, 7))), 2.0)
    torch.testing.assert_close(probs.sum(dim=1), torch.ones(8, dtype=torch.float64), atol=1e-12, rtol=0)


# ------------------------------------------------------------------------- stats

def test_max_prob_cases():
    assert float(max_prob(t64([[0.8, 0.2]]))) == pytest.approx(0.8)
    assert float(max_prob(t64([[0.25, 0.25, 0.25, 0.25]]))) == pytest.approx(0.25)
    assert float(max_prob(t64([[0.0, 1.0, 0.0]]))) == pytest.approx(1.0)


def test_entropy_one_hot_is_zero():
    assert float(row_entropy(t64([[0.0, 1.0]]))) == pytest.approx(0.0, abs=1e-10)


def test_entropy_uniform_is_log_k():
    h = float(row_entropy(t64([[0.25] * 4])))
    assert h == pytest.approx(math.log(4.0), abs=1e-12)


def test_entropy_ordering_peaked_vs_spread():
    a = float(row_entropy(t64([[0.5, 0.4, 0.1, 0.0]])))
    b = float(row_entropy(t64([[0.5, 0.1, 0.2, 0.2]])))
    assert a < b


def test_entropy_bounds_on_random_rows():
    probs = _rand_probs(20, 6, seed=4)
    h = row_entropy(probs)
    assert (h >= -1e-12).all() and (h <= math.log(6.0) + 1e-12).all()


# ----------------------------------------------------------------- batch_weights

def test_weights_single_row_equal_max_prob():
    probs = t64([[0.7, 0.3]])
    assert float(batch_weights(probs)) == pytest.approx(0.7, abs=1e-12)


def test_weights_hand_case_8_7_and_3_7():
    probs = t64([[1.0, 0.0], [0.5, 0.5]])
    w = batch_weights(probs)
    torch.testing.assert_close(w, torch.tensor([8.0 / 7.0, 3.0 / 7.0], dtype=torch.float64), atol=1e-6, rtol=0)


def test_weights_lower_entropy_wins_at_equal_max_prob():
    # both rows have max prob 0.5; the first is more peaked overall
    probs = t64([[0.5, 0.5, 0.0, 0.0], [0.5, 0.2, 0.2, 0.1]])
    w = batch_weights(probs)
    assert float(w[0]) > float(w[1])


def test_weights_factorization_and_normalization():
    probs = _rand_probs(16, 5, seed=5)
    w = batch_weights(probs)
    h = row_entropy(probs)
    factor = probs.shape[0] * (1.0 + torch.exp(-h)) / (1.0 + torch.exp(-h)).sum()
    torch.testing.assert_close(w, factor * max_prob(probs), atol=1e-12, rtol=0)
    assert float(factor.sum()) == pytest.approx(16.0, abs=1e-6)


def test_weights_permutation_equivariant():
    probs = _rand_probs(10, 4, seed=6)
    perm = torch.randperm(10, generator=torch.Generator().manual_seed(0))
    w = batch_weights(probs)
    w_perm = batch_weights(probs[perm])
    torch.testing.assert_close(w_perm, w[perm], atol=1e-12, rtol=0)


# --------------------------------------------------------------------- ProbBatch

def test_prob_batch_from_logits_consistent():
    logits = torch.tensor(np.random.default_rng(7).standard_normal((12, 4)))
    pb = ProbBatch.from_logits(logits, 2.0)
    pb.validate()
    torch.testing.assert_close(pb.probs, temperature_softmax(logits, 2.0))
    torch.testing.assert_close(pb.max_prob, max_prob(pb.probs))
    torch.testing.assert_close(pb.entropy, row_entropy(pb.probs))
    torch.testing.assert_close(pb.weight, batch_weights(pb.probs))


def test_prob_batch_validate_rejects_bad_rows():
    pb = ProbBatch(
        probs=t64([[0.9, 0.3]]),
        max_prob=torch.tensor([0.9]),
        entropy=torch.tensor([0.3]),
        weight=torch.tensor([0.9]),
    )
    with pytest.raises(ValueError, match="sum to 1"):
        pb.validate()
