import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qlstm.data import SynthConfig, synth_task
from qlstm.estimator import LstmTagger


def string_corpus(seed, n):
    cfg = SynthConfig(n_train=n, n_dev=1, n_test=1)
    ds = synth_task(seed, cfg)
    X, y = [], []
    for tok_ids, tag_ids in ds.split("train"):
        X.append([ds.token_vocab.decode(t) for t in tok_ids])
        y.append([ds.tag_vocab.decode(t) for t in tag_ids])
    return X, y


def small_tagger(**kw):
    base = dict(hidden=4, emb_dim=4, max_epochs=2, patience=1, seed=0)
    base.update(kw)
    return LstmTagger(**base)


def test_fit_predict_score():
    X, y = string_corpus(0, 60)
    est = small_tagger().fit(X, y)
    pred = est.predict(X[:5])
    assert len(pred) == 5
    for tokens, tags in zip(X[:5], pred):
        assert len(tags) == len(tokens)
        assert set(tags) <= {"B", "I", "O"}
    assert 0.0 <= est.score(X[:20], y[:20]) <= 1.0


def test_fit_returns_self_and_sets_report():
    X, y = string_corpus(1, 40)
    est = small_tagger()
    assert est.fit(X, y) is est
    assert est.report_.best_epoch >= 1


def test_unfitted_raises():
    est = small_tagger()
    with pytest.raises(NotFittedError):
        est.predict([["a"]])
    with pytest.raises(NotFittedError):
        est.score([["a"]], [["O"]])


def test_fit_input_validation():
    est = small_tagger()
    with pytest.raises(ValueError):
        est.fit([["a"]], [])
    with pytest.raises(ValueError):
        est.fit([], [])


def test_get_params_round_trip_and_clone():
    est = small_tagger(settings="BI,BF,NEW", r=0.2, c=0.4)
    params = est.get_params()
    assert params["settings"] == "BI,BF,NEW"
    assert params["r"] == 0.2
    dup = clone(est)
    assert dup.get_params() == params
    est.set_params(lr=0.01)
    assert est.get_params()["lr"] == 0.01


def test_quantized_settings_fit():
    X, y = string_corpus(2, 50)
    est = small_tagger(settings="BI,BF,NEW").fit(X, y)
    assert 0.0 <= est.score(X[:10], y[:10]) <= 1.0


def test_unknown_tokens_fall_back_to_unk():
    X, y = string_corpus(3, 40)
    est = small_tagger().fit(X, y)
    pred = est.predict([["totally", "novel", "tokens"]])
    assert len(pred[0]) == 3
