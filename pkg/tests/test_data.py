import numpy as np
import pytest

from qlstm.data import (
    RESET,
    TRIGGER,
    ConllFormatError,
    SynthConfig,
    Vocab,
    batch_iter,
    build_vocab,
    dataset_from_conll,
    label_delayed_trigger,
    load_embeddings,
    read_conll,
    synth_task,
)


def test_read_conll_basic(tmp_path):
    p = tmp_path / "toy.conll"
    p.write_text("the DT\ncat NN\n\n")
    out = read_conll(p)
    assert out == [(["the", "cat"], ["DT", "NN"])]


def test_read_conll_comments_and_trailing_sentence(tmp_path):
    p = tmp_path / "toy.conll"
    p.write_text("# header\nthe DT\n\n# mid comment\ncat NN")
    out = read_conll(p)
    assert out == [(["the"], ["DT"]), (["cat"], ["NN"])]


def test_read_conll_missing_column_reports_line(tmp_path):
    p = tmp_path / "bad.conll"
    p.write_text("the DT\nbroken\n")
    with pytest.raises(ConllFormatError, match=":2"):
        read_conll(p)


def test_read_conll_empty_file(tmp_path):
    p = tmp_path / "empty.conll"
    p.write_text("")
    assert read_conll(p) == []


def test_read_conll_column_selection(tmp_path):
    p = tmp_path / "cols.conll"
    p.write_text("1 the DT B-NP\n2 cat NN I-NP\n")
    out = read_conll(p, token_col=1, tag_col=3)
    assert out == [(["the", "cat"], ["B-NP", "I-NP"])]


def test_build_vocab_min_count():
    sents = [(["a", "a", "b"], ["O", "O", "O"]), (["b", "c"], ["B", "O"])]
    tok, tag = build_vocab(sents, min_count=1)
    assert tok.itos[0] == "<unk>"
    assert set(tok.itos) == {"<unk>", "a", "b", "c"}
    # order: count desc then lexicographic
    assert tok.itos[1:3] == ["a", "b"]
    assert tag.itos == sorted({"O", "B"})

    tok_hi, _ = build_vocab(sents, min_count=10)
    assert tok_hi.itos == ["<unk>"]


def test_vocab_unknown_maps_to_unk():
    tok, _ = build_vocab([(["a"], ["O"])], min_count=1)
    assert tok.encode("never-seen") == 0
    assert tok.decode(tok.encode("a")) == "a"


def test_dataset_round_trip(tmp_path):
    p = tmp_path / "t.conll"
    p.write_text("the O\ncat B\nsat I\n\nthe O\ndog B\n")
    ds = dataset_from_conll(p, dev_path=None, test_path=None)
    for (tok_ids, tag_ids), (tokens, tags) in zip(ds.split("train"),
                                                  read_conll(p)):
        assert [ds.token_vocab.decode(t) for t in tok_ids] == tokens
        assert [ds.tag_vocab.decode(t) for t in tag_ids] == tags


def test_dataset_rejects_unseen_dev_tag(tmp_path):
    train = tmp_path / "train.conll"
    train.write_text("a O\n")
    dev = tmp_path / "dev.conll"
    dev.write_text("a WEIRD\n")
    with pytest.raises(ValueError, match="WEIRD"):
        dataset_from_conll(train, dev_path=dev)


def test_label_no_trigger_all_o():
    assert label_delayed_trigger(["s1", "s2", "s3"]) == ["O", "O", "O"]


def test_label_trigger_at_start():
    tokens = [TRIGGER, "s1", "s2", "s3"]
    assert label_delayed_trigger(tokens) == ["O", "B", "I", "I"]


def test_label_reset_closes_span():
    tokens = [TRIGGER, "s1", RESET, "s2"]
    assert label_delayed_trigger(tokens) == ["O", "B", "O", "O"]


def test_label_trigger_distance_delays_onset():
    tokens = [TRIGGER, "s1", "s2", "s3", "s4"]
    assert label_delayed_trigger(tokens, trigger_distance=3) == \
        ["O", "O", "O", "B", "I"]


def test_synth_deterministic():
    a = synth_task(99, SynthConfig(n_train=30, n_dev=10, n_test=10))
    b = synth_task(99, SynthConfig(n_train=30, n_dev=10, n_test=10))
    assert a.splits == b.splits
    assert a.token_vocab.itos == b.token_vocab.itos


def test_synth_tags_rederivable():
    cfg = SynthConfig(n_train=40, n_dev=10, n_test=10, trigger_distance=2)
    ds = synth_task(3, cfg)
    for tok_ids, tag_ids in ds.split("train"):
        tokens = [ds.token_vocab.decode(t) for t in tok_ids]
        tags = [ds.tag_vocab.decode(t) for t in tag_ids]
        assert label_delayed_trigger(tokens, cfg.trigger_distance) == tags


def test_synth_splits_disjoint():
    ds = synth_task(4, SynthConfig(n_train=60, n_dev=30, n_test=30))
    seen = set()
    for name in ("train", "dev", "test"):
        for tok_ids, _ in ds.split(name):
            key = tuple(tok_ids)
            assert key not in seen
            seen.add(key)


def test_synth_rejects_empty_split():
    with pytest.raises(ValueError):
        synth_task(0, SynthConfig(n_train=0))


def test_batch_iter_covers_everything():
    sents = [([i], [0]) for i in range(13)]
    for epoch in (0, 1):
        seen = []
        for batch in batch_iter(sents, 4, shuffle_seed=7, epoch=epoch):
            assert len(batch) <= 4
            seen.extend(b[0][0] for b in batch)
        assert sorted(seen) == list(range(13))


def test_batch_iter_deterministic_but_epoch_dependent():
    sents = [([i], [0]) for i in range(20)]
    run = lambda e: [b[0][0] for batch in batch_iter(sents, 5, 7, e)
                     for b in batch]
    assert run(0) == run(0)
    assert run(0) != run(1)


def test_batch_iter_single_batch():
    sents = [([i], [0]) for i in range(3)]
    batches = list(batch_iter(sents, 10, 0, 0))
    assert len(batches) == 1 and len(batches[0]) == 3


def test_load_embeddings(tmp_path):
    vocab = Vocab(["<unk>", "cat", "dog"])
    table = np.zeros((3, 2))
    p = tmp_path / "emb.txt"
    p.write_text("cat 1.0 2.0\nhorse 9.0 9.0\n")
    filled = load_embeddings(p, vocab, table)
    assert filled == 1
    assert np.array_equal(table[1], [1.0, 2.0])
    assert np.all(table[2] == 0)
    p.write_text("dog 1.0 2.0 3.0\n")
    with pytest.raises(ValueError, match="width"):
        load_embeddings(p, vocab, table)
