import numpy as np
import pytest

from qlstm.backprop import (
    decompose_gate_gradient,
    finite_diff_check,
    lstm_backward_direction,
    residual_trend,
)
from qlstm.lstm import GateMode, GateSpec, bilstm_forward, init_params
from qlstm.model import SequenceTagger
from qlstm.quantize import RoundClipScheme

RC_HALF = GateSpec(round_clip=RoundClipScheme(0.5, 1.0))


def make_batch(rng, vocab, tags, n_sentences, tau_max):
    batch = []
    for _ in range(n_sentences):
        tau = int(rng.integers(1, tau_max + 1))
        batch.append((rng.integers(0, vocab, size=tau).tolist(),
                      rng.integers(0, tags, size=tau).tolist()))
    return batch


def test_zero_loss_grad_gives_zero_param_grads():
    p = init_params(5, 3, 4, seed=0)
    _, (fw, _) = bilstm_forward(p, [1, 2, 3], GateMode.identity(), "train")
    dh = [np.zeros(4)] * 3
    grads, dx = lstm_backward_direction(p.fwd, fw, dh, GateMode.identity(),
                                        "full", "fwd")
    assert all(np.all(g == 0) for g in grads.values())
    assert all(np.all(d == 0) for d in dx)


def test_cache_grad_length_mismatch():
    p = init_params(5, 3, 4, seed=0)
    _, (fw, _) = bilstm_forward(p, [1, 2, 3], GateMode.identity(), "train")
    with pytest.raises(ValueError):
        lstm_backward_direction(p.fwd, fw, [np.zeros(4)] * 2,
                                GateMode.identity(), "full", "fwd")


def test_single_timestep_finite_diff():
    model = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2, seed=3)
    assert finite_diff_check(model, [([1], [0])]) < 1e-6


def test_multi_timestep_finite_diff():
    rng = np.random.default_rng(4)
    model = SequenceTagger.build(vocab=5, emb_dim=3, hidden=3, n_tags=3, seed=4)
    batch = make_batch(rng, 5, 3, 2, 5)
    assert finite_diff_check(model, batch) < 1e-4


def test_finite_diff_eps_robust():
    # two step sizes either side of the default agree on pass/fail
    model = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2, seed=5)
    batch = [([1, 2, 0], [0, 1, 1])]
    assert finite_diff_check(model, batch, eps=1e-4) < 1e-4
    assert finite_diff_check(model, batch, eps=3e-4) < 1e-4


def test_finite_diff_refuses_quantized_mode():
    mode = GateMode(forget_gate=RC_HALF, train_time_quant=True)
    model = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2,
                                 seed=6, gate_mode=mode)
    with pytest.raises(ValueError, match="Identity"):
        finite_diff_check(model, [([1], [0])])


def test_corrupted_gradient_detected():
    # mutation test: a 1% scale error on W_f must fail the check
    model = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2, seed=7)
    batch = [([1, 2, 3], [0, 1, 0])]
    _, grads, _ = model.batch_loss_and_grads(batch)
    eps = 1e-5
    arr = model.lstm.fwd.W_f
    bad = 0
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + eps
        lp = model.batch_loss(batch)
        arr[idx] = orig - eps
        lm = model.batch_loss(batch)
        arr[idx] = orig
        numeric = (lp - lm) / (2 * eps)
        corrupted = grads["fwd.W_f"][idx] * 1.01
        denom = max(abs(corrupted), abs(numeric), 1e-8)
        if abs(corrupted - numeric) / denom > 1e-4:
            bad += 1
    assert bad > 0


def test_quantized_gate_on_code_point_matches_full_precision():
    # zero weights put every raw gate at exactly 0.5, a code point, so the
    # quantized forward and the straight-through backward coincide with the
    # untransformed run
    mode = GateMode(input_gate=RC_HALF, forget_gate=RC_HALF,
                    train_time_quant=True)
    m_q = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2, seed=8,
                               gate_mode=mode)
    m_id = SequenceTagger.build(vocab=4, emb_dim=2, hidden=2, n_tags=2, seed=8)
    for m in (m_q, m_id):
        for name, arr in m.lstm.named():
            if name != "embedding" and not name.endswith("V_C"):
                arr[...] = 0.0
    batch = [([1, 2], [0, 1])]
    loss_q, grads_q, _ = m_q.batch_loss_and_grads(batch)
    loss_id, grads_id, _ = m_id.batch_loss_and_grads(batch)
    assert loss_q == loss_id
    for name in grads_q:
        assert np.array_equal(grads_q[name], grads_id[name]), name


def test_ste_rule_does_not_change_forward_loss():
    mode = GateMode(input_gate=RC_HALF, forget_gate=RC_HALF,
                    train_time_quant=True)
    losses = []
    for ste in ("full", "quantized"):
        m = SequenceTagger.build(vocab=4, emb_dim=2, hidden=3, n_tags=2,
                                 seed=9, gate_mode=mode, ste=ste)
        losses.append(m.batch_loss([([1, 2, 3], [0, 1, 0])]))
    assert losses[0] == losses[1]


def test_decompose_scalar_identities():
    # f_bar=0.5, delta=0.1: 0.6*0.4 = 0.25 + 0.1*(1-1.0-0.1)
    assert abs(0.6 * 0.4 - (0.25 + 0.1 * (1 - 2 * 0.5 - 0.1))) < 1e-15
    # f_bar=1.0, delta=-0.2: 0.8*0.2 = 0 + (-0.2)*(1-2+0.2)
    assert abs(0.8 * 0.2 - (0.0 + (-0.2) * (1 - 2 * 1.0 + 0.2))) < 1e-15


def test_decompose_gate_gradient_identity_and_bound():
    p = init_params(6, 3, 8, seed=10)
    mode = GateMode(input_gate=RC_HALF, forget_gate=RC_HALF,
                    train_time_quant=True)
    _, (fw, bw) = bilstm_forward(p, [1, 2, 3, 4, 5], mode, "train")
    for caches in (fw, bw):
        stats = decompose_gate_gradient(caches)
        assert set(stats) == {"input", "forget"}
        for s in stats.values():
            assert 0 <= s.mean_abs_delta <= 0.25 + 1e-12
        # bound on the second-term factor for scheme (0.5, 1.0)
        for c in caches:
            for dec in (c.decomp_i, c.decomp_f):
                factor = 1.0 - 2.0 * dec.f_bar - dec.delta_f
                assert np.all(factor >= -1 - 1e-12)
                assert np.all(factor <= 1 + 1e-12)


def test_decompose_requires_quantized_caches():
    p = init_params(6, 3, 4, seed=11)
    _, (fw, _) = bilstm_forward(p, [1, 2], GateMode.identity(), "train")
    with pytest.raises(ValueError):
        decompose_gate_gradient(fw)


def test_residual_trend():
    assert residual_trend([0.2, 0.2, 0.2])["decreased"] is False
    assert residual_trend([0.3, 0.2, 0.1])["decreased"] is True
    with pytest.raises(ValueError):
        residual_trend([0.1])
