import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweetvec.corpus import build_corpus, read_labels, read_records
from tweetvec.evaluation import (
    PENALTY_GRID,
    EntityInstance,
    LinearSVM,
    SyntheticSpec,
    entity_matrix,
    entity_vector,
    evaluate,
    f1,
    generate_synthetic,
    instances_from_labels,
    keyword_spec,
    split_by_user,
    train_linear,
)


# -- entity vectors ------------------------------------------------------------

def test_entity_vector_mean():
    vecs = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert entity_vector([0, 1], vecs).tolist() == [0.5, 0.5]


def test_entity_vector_single():
    vecs = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert entity_vector([1], vecs).tolist() == [3.0, 4.0]


@given(st.permutations(range(5)))
def test_entity_vector_order_free(perm):
    vecs = np.random.default_rng(0).normal(size=(5, 3))
    assert np.allclose(entity_vector(list(perm), vecs), entity_vector(range(5), vecs), atol=1e-15)


def test_entity_vector_needs_a_tweet():
    with pytest.raises(ValueError):
        entity_vector([], np.zeros((2, 2)))


def test_entity_matrix_unknown_tweet():
    corpus = build_corpus(generate_synthetic(SyntheticSpec(n_users=2, tweets_per_user=4)).records)
    with pytest.raises(KeyError, match="nope"):
        entity_matrix([EntityInstance("e", ["nope"], 1)], corpus, np.zeros((corpus.n_tweets, 2)))


# -- f1 ------------------------------------------------------------------------

def test_f1_examples():
    assert f1([1, 0, 1], [1, 0, 1]) == 1.0
    assert f1([0, 0, 0], [1, 0, 1]) == 0.0
    # TP=1, FP=1, FN=1
    assert f1([1, 1, 0], [1, 0, 1]) == 0.5


def test_f1_no_positives_anywhere():
    assert f1([0, 0], [0, 0]) == 0.0


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_f1_matches_reference(pairs):
    from sklearn.metrics import f1_score

    pred, lab = zip(*pairs)
    assert f1(pred, lab) == pytest.approx(f1_score(lab, pred, zero_division=0.0), abs=1e-12)


# -- classifier ------------------------------------------------------------------

def _separable(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([2, 2], 0.5, size=(n // 2, 2)), rng.normal([-2, -2], 0.5, size=(n // 2, 2))])
    y = np.array([1] * (n // 2) + [0] * (n // 2))
    return X, y


@pytest.mark.parametrize("C", PENALTY_GRID)
def test_separable_training_f1(C):
    X, y = _separable()
    model = LinearSVM(C=C).fit(X, y)
    assert f1(model.predict(X), y) == 1.0


def test_matches_sklearn_on_separable_data():
    from sklearn.svm import LinearSVC

    X, y = _separable(seed=3, n=60)
    ours = LinearSVM(C=1.0).fit(X, y).predict(X)
    ref = LinearSVC(C=1.0).fit(X, y).predict(X)
    assert np.array_equal(ours, ref)


def test_duplicated_point_degenerate():
    X = np.array([[1.0, 1.0]] * 4)
    y = np.array([1, 0, 1, 0])
    model = LinearSVM().fit(X, y)
    assert f1(model.predict(X), y) <= 0.5


def test_grid_of_one():
    X, y = _separable()
    model, C, score = train_linear(X, y, X, y, penalty_grid=[0.1])
    assert C == 0.1
    assert score == 1.0


def test_one_class_training_rejected():
    X, _ = _separable()
    with pytest.raises(ValueError, match="single class"):
        train_linear(X, np.ones(len(X)), X, np.ones(len(X)))
    with pytest.raises(ValueError):
        LinearSVM().fit(X, np.ones(len(X)))


def test_empty_validation_rejected():
    X, y = _separable()
    with pytest.raises(ValueError, match="validation"):
        train_linear(X, y, X[:0], y[:0])


def test_classifier_is_deterministic():
    X, y = _separable(seed=5)
    a = LinearSVM(C=10).fit(X, y)
    b = LinearSVM(C=10).fit(X, y)
    assert a.coef_.tobytes() == b.coef_.tobytes()


def test_string_labels():
    X, y = _separable()
    labels = np.where(y == 1, "pos", "neg")
    model = LinearSVM().fit(X, labels)
    assert set(model.predict(X)) == {"pos", "neg"}


# -- synthetic corpora -----------------------------------------------------------

def test_default_spec_line_count(tmp_path):
    syn = generate_synthetic(SyntheticSpec())
    syn.write(tmp_path / "c.tsv", tmp_path / "l.tsv")
    assert len((tmp_path / "c.tsv").read_text().splitlines()) == 1000
    assert len(list(read_records(tmp_path / "c.tsv"))) == 1000


def test_same_seed_identical_files(tmp_path):
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        generate_synthetic(SyntheticSpec(seed=4)).write(tmp_path / d / "c.tsv", tmp_path / d / "l.tsv")
    for name in ("c.tsv", "l.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    generate_synthetic(SyntheticSpec(seed=5)).write(tmp_path / "x.tsv", tmp_path / "y.tsv")
    assert (tmp_path / "x.tsv").read_bytes() != (tmp_path / "a" / "c.tsv").read_bytes()


def test_topic_vocabularies_disjoint():
    syn = generate_synthetic(SyntheticSpec(n_topics=2))
    seen = {0: set(), 1: set()}
    for rec in syn.records:
        seen[syn.topics[rec.tweet_id]].update(rec.text.split())
    assert seen[0] and seen[1]
    assert not seen[0] & seen[1]


def test_block_structure():
    spec = SyntheticSpec(n_users=3, tweets_per_user=23, n_topics=3, block_length=5)
    syn = generate_synthetic(spec)
    for u in range(3):
        topics = [syn.topics[f"u{u:03d}_{j:04d}"] for j in range(23)]
        for start in range(0, 23, 5):
            assert len(set(topics[start:start + 5])) == 1


def test_adjacent_pattern_shares_topic_with_next_tweet_only():
    spec = SyntheticSpec(n_users=2, tweets_per_user=30, n_topics=8, relevance="adjacent", topic_words=8)
    syn = generate_synthetic(spec)
    texts = {r.tweet_id: set(w.split("w")[0] for w in r.text.split()) for r in syn.records}
    for u in range(2):
        for j in range(30):
            here = texts[f"u{u:03d}_{j:04d}"]
            assert len(here) <= 2
            for d in (2, 3):
                if j + d < 30:
                    assert not here & texts[f"u{u:03d}_{j + d:04d}"]


def test_entities_and_labels(tmp_path):
    syn = generate_synthetic(SyntheticSpec(n_users=3, tweets_per_user=20))
    assert len(syn.entities) == 6
    for name, label, ids in syn.entities:
        topic = int(name.rsplit("topic", 1)[1])
        assert label == int(topic == 0)
        assert all(syn.topics[t] == topic for t in ids)
    syn.write(tmp_path / "c.tsv", tmp_path / "l.tsv")
    assert read_labels(tmp_path / "l.tsv") == syn.entities


def test_keyword_spec_token_mix():
    syn = generate_synthetic(keyword_spec(n_users=2, tweets_per_user=5))
    for rec in syn.records:
        toks = rec.text.split()
        assert len(toks) == 8
        assert sum(t.startswith("c") for t in toks) == 6


def test_spec_validation():
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(relevance="random"))
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticSpec(filler_words=3, filler_vocab=0))


# -- splits and the pipeline -----------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(0, 1000))
def test_split_by_user_disjoint(n_users, seed):
    syn = generate_synthetic(SyntheticSpec(n_users=n_users, tweets_per_user=10))
    corpus = build_corpus(syn.records)
    inst = instances_from_labels(syn.entities)
    split_by_user(inst, corpus, seed=seed)
    users = {s: set() for s in ("train", "valid", "test")}
    for i in inst:
        users[i.split].add(i.entity_id.split("_")[0])
    assert all(users.values())
    assert not users["train"] & users["valid"]
    assert not users["train"] & users["test"]
    assert not users["valid"] & users["test"]


def test_split_ratio():
    syn = generate_synthetic(SyntheticSpec(n_users=20, tweets_per_user=10))
    corpus = build_corpus(syn.records)
    inst = instances_from_labels(syn.entities)
    split_by_user(inst, corpus)
    counts = {s: len({i.entity_id.split("_")[0] for i in inst if i.split == s}) for s in ("train", "valid", "test")}
    assert counts == {"train": 14, "valid": 2, "test": 4}


def _oracle_vectors(syn, corpus, noise=0.3, seed=0):
    # tweet vectors that encode the generating topic plus noise
    rng = np.random.default_rng(seed)
    topics = np.array([syn.topics[t] for t in corpus.tweet_ids])
    return np.eye(2)[topics] + rng.normal(0, noise, size=(len(topics), 2))


def test_evaluate_on_topic_vectors():
    syn = generate_synthetic(SyntheticSpec())
    corpus = build_corpus(syn.records)
    inst = instances_from_labels(syn.entities)
    split_by_user(inst, corpus)
    res = evaluate(inst, corpus, _oracle_vectors(syn, corpus))
    assert res["penalty"] in PENALTY_GRID
    assert res["valid_f1"] == 1.0
    assert res["test_f1"] == 1.0


def test_evaluate_is_deterministic():
    syn = generate_synthetic(SyntheticSpec())
    corpus = build_corpus(syn.records)
    vecs = _oracle_vectors(syn, corpus, noise=3.0)
    out = []
    for _ in range(2):
        inst = instances_from_labels(syn.entities)
        split_by_user(inst, corpus, seed=1)
        res = evaluate(inst, corpus, vecs)
        out.append((res["penalty"], res["valid_f1"], res["test_f1"]))
    assert out[0] == out[1]


def _adjacent_f1(mode, seed=0):
    from tweetvec.trainer import TrainConfig, train

    syn = generate_synthetic(SyntheticSpec(relevance="adjacent", n_topics=12, seed=seed))
    corpus = build_corpus(syn.records)
    result = train(corpus, TrainConfig(dim=50, context_size=4, epochs=10, use_user=mode == "learned",
                                       attention_mode=mode, seed=seed))
    inst = instances_from_labels(syn.entities)
    split_by_user(inst, corpus, seed=seed)
    return evaluate(inst, corpus, result.store.tweet_vectors)["test_f1"]


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="attention concentrates on offsets +-1, but at this corpus size "
                   "held-out F1 of learned and uniform attention differ only by split noise")
def test_learned_attention_beats_uniform_when_only_adjacent_tweets_are_relevant():
    learned, uniform = _adjacent_f1("learned"), _adjacent_f1("uniform")
    print(f"\nheld-out F1: learned {learned:.3f}, uniform {uniform:.3f}")
    assert learned > uniform
