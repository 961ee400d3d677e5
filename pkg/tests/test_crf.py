import itertools
import math

import numpy as np
import pytest

from qlstm.crf import (
    CrfParams,
    crf_log_partition,
    crf_nll,
    gold_score,
    init_crf,
    softmax_head_nll,
    viterbi_decode,
)


def zero_crf(n_tags, in_dim=4):
    return CrfParams(
        emit_W=np.zeros((n_tags, in_dim)), emit_b=np.zeros(n_tags),
        trans=np.zeros((n_tags, n_tags)), start=np.zeros(n_tags),
        stop=np.zeros(n_tags))


def random_crf(rng, n_tags):
    p = zero_crf(n_tags)
    p.trans = rng.normal(size=(n_tags, n_tags))
    p.start = rng.normal(size=n_tags)
    p.stop = rng.normal(size=n_tags)
    return p


def brute_force_log_partition(emissions, p):
    tau, n_tags = emissions.shape
    scores = []
    for path in itertools.product(range(n_tags), repeat=tau):
        scores.append(gold_score(emissions, list(path), p))
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def brute_force_best_path(emissions, p):
    tau, n_tags = emissions.shape
    best, best_score = None, -math.inf
    for path in itertools.product(range(n_tags), repeat=tau):
        s = gold_score(emissions, list(path), p)
        if s > best_score:  # strict: first (lexicographically lowest) wins ties
            best, best_score = list(path), s
    return best


def test_partition_uniform_cases():
    p = zero_crf(3)
    assert abs(crf_log_partition(np.zeros((1, 3)), p) - math.log(3)) < 1e-12
    p2 = zero_crf(2)
    assert abs(crf_log_partition(np.zeros((2, 2)), p2) - math.log(4)) < 1e-12


def test_partition_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n_tags = int(rng.integers(2, 4))
        tau = int(rng.integers(1, 5))
        p = random_crf(rng, n_tags)
        emis = rng.normal(size=(tau, n_tags))
        assert abs(crf_log_partition(emis, p)
                   - brute_force_log_partition(emis, p)) < 1e-10


def test_viterbi_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n_tags = int(rng.integers(2, 4))
        tau = int(rng.integers(1, 5))
        p = random_crf(rng, n_tags)
        emis = rng.normal(size=(tau, n_tags))
        assert viterbi_decode(emis, p) == brute_force_best_path(emis, p)


def test_viterbi_peaked_and_tie_rule():
    p = zero_crf(3)
    emis = np.array([[0.0, 5.0, 0.0], [0.0, 0.0, 5.0], [5.0, 0.0, 0.0]])
    assert viterbi_decode(emis, p) == [1, 2, 0]
    assert viterbi_decode(np.zeros((4, 3)), p) == [0, 0, 0, 0]


def test_nll_single_tag_is_zero():
    p = zero_crf(1)
    loss, _, _ = crf_nll(np.zeros((3, 1)), [0, 0, 0], p)
    assert abs(loss) < 1e-12


def test_nll_nonnegative_and_gold_prob_bounded():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = random_crf(rng, 3)
        emis = rng.normal(size=(4, 3))
        tags = rng.integers(0, 3, size=4).tolist()
        loss, _, _ = crf_nll(emis, tags, p)
        assert loss >= -1e-12
        assert 0 < math.exp(-loss) <= 1 + 1e-12


def test_nll_emission_grads_sum_to_zero():
    rng = np.random.default_rng(3)
    p = random_crf(rng, 3)
    emis = rng.normal(size=(4, 3))
    _, grad_emis, _ = crf_nll(emis, [0, 1, 2, 1], p)
    assert np.max(np.abs(grad_emis.sum(axis=1))) < 1e-12


def test_nll_rejects_bad_tags():
    p = zero_crf(2)
    with pytest.raises(ValueError):
        crf_nll(np.zeros((2, 2)), [0], p)
    with pytest.raises(ValueError):
        crf_nll(np.zeros((2, 2)), [0, 5], p)


def test_nll_finite_differences():
    rng = np.random.default_rng(4)
    p = random_crf(rng, 3)
    emis = rng.normal(size=(3, 3))
    tags = [2, 0, 1]
    loss, grad_emis, grads = crf_nll(emis, tags, p)
    eps = 1e-6

    def num_grad(arr):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            lp, _, _ = crf_nll(emis, tags, p)
            arr[idx] = orig - eps
            lm, _, _ = crf_nll(emis, tags, p)
            arr[idx] = orig
            g[idx] = (lp - lm) / (2 * eps)
        return g

    assert np.max(np.abs(num_grad(emis) - grad_emis)) < 1e-6
    for name, arr in (("trans", p.trans), ("start", p.start), ("stop", p.stop)):
        assert np.max(np.abs(num_grad(arr) - grads[name])) < 1e-6, name


def test_viterbi_score_below_partition():
    rng = np.random.default_rng(5)
    p = random_crf(rng, 3)
    emis = rng.normal(size=(4, 3))
    path = viterbi_decode(emis, p)
    assert gold_score(emis, path, p) <= crf_log_partition(emis, p) + 1e-12


def test_constant_emission_shift():
    rng = np.random.default_rng(6)
    p = random_crf(rng, 3)
    emis = rng.normal(size=(4, 3))
    shifted = emis.copy()
    shifted[2] += 7.0
    assert abs(crf_log_partition(shifted, p)
               - (crf_log_partition(emis, p) + 7.0)) < 1e-10
    assert viterbi_decode(shifted, p) == viterbi_decode(emis, p)


def test_init_crf_rejects_bad_tags():
    with pytest.raises(ValueError):
        init_crf(4, 0, np.random.default_rng(0))


def test_softmax_head_uniform_loss():
    loss, _ = softmax_head_nll(np.zeros((3, 4)), [0, 1, 2])
    assert abs(loss - math.log(4)) < 1e-12


def test_softmax_head_margin_drives_loss_down():
    losses = []
    for margin in (1.0, 5.0, 20.0):
        logits = np.zeros((2, 3))
        logits[0, 1] = margin
        logits[1, 0] = margin
        loss, _ = softmax_head_nll(logits, [1, 0])
        losses.append(loss)
    assert losses[0] > losses[1] > losses[2]
    assert losses[-1] < 1e-8


def test_softmax_head_finite_differences():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(3, 4))
    tags = [1, 3, 0]
    _, grad = softmax_head_nll(logits, tags)
    eps = 1e-6
    for idx in np.ndindex(logits.shape):
        orig = logits[idx]
        logits[idx] = orig + eps
        lp, _ = softmax_head_nll(logits, tags)
        logits[idx] = orig - eps
        lm, _ = softmax_head_nll(logits, tags)
        logits[idx] = orig
        assert abs((lp - lm) / (2 * eps) - grad[idx]) < 1e-6
