"""Entity-level evaluation: averaged tweet vectors, a hinge-loss linear classifier, F1."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .corpus import Corpus, TimelineRecord, write_labels, write_records

PENALTY_GRID = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
SPLITS = ("train", "valid", "test")


@dataclass
class EntityInstance:
    entity_id: str
    tweet_ids: list[str]
    label: int
    split: str = "train"


def entity_vector(tweet_indices: Sequence[int], tweet_vectors: np.ndarray) -> np.ndarray:
    idx = np.asarray(tweet_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("an entity needs at least one tweet")
    return tweet_vectors[idx].mean(axis=0)


def entity_matrix(instances: Sequence[EntityInstance], corpus: Corpus, tweet_vectors: np.ndarray) -> np.ndarray:
    rows = []
    for inst in instances:
        try:
            idx = [corpus.tweet_index[t] for t in inst.tweet_ids]
        except KeyError as exc:
            raise KeyError(f"entity {inst.entity_id!r} references unknown tweet {exc.args[0]!r}") from None
        rows.append(entity_vector(idx, tweet_vectors))
    return np.vstack(rows) if rows else np.zeros((0, tweet_vectors.shape[1]))


def f1(predictions, labels) -> float:
    """F1 of the positive class; 0.0 when precision + recall is 0."""
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    tp = np.sum(p & y)
    fp = np.sum(p & ~y)
    fn = np.sum(~p & y)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2 * precision * recall / (precision + recall))


class LinearSVM(ClassifierMixin, BaseEstimator):
    """L2-regularised hinge-loss classifier trained by full-batch projected subgradient steps.

    Minimises ``lam/2 |w|^2 + mean(hinge)`` with ``lam = 1 / (C * n_samples)``,
    i.e. the usual ``1/2 |w|^2 + C * sum(hinge)`` objective rescaled.  The bias
    is an extra constant feature and is regularised with the weights.  Features
    are standardised on the training set when ``standardize`` is true.
    """

    def __init__(self, C: float = 1.0, max_iter: int = 2000, standardize: bool = True):
        self.C = C
        self.max_iter = max_iter
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"training labels need exactly two classes, got {self.classes_.tolist()}")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Z = self._augment(X)
        s = np.where(y == self.classes_[1], 1.0, -1.0)
        n = len(s)
        lam = 1.0 / (self.C * n)
        radius = 1.0 / np.sqrt(lam)
        w = np.zeros(Z.shape[1])
        for t in range(1, self.max_iter + 1):
            eta = 1.0 / (lam * t)
            viol = s * (Z @ w) < 1.0
            w *= 1.0 - eta * lam
            if viol.any():
                w += (eta / n) * (s[viol] @ Z[viol])
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        self.coef_ = w[:-1]
        self.intercept_ = w[-1]
        self.n_features_in_ = X.shape[1]
        return self

    def _augment(self, X):
        Z = (X - self.mean_) / self.scale_
        return np.hstack([Z, np.ones((len(Z), 1))])

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        Z = (X - self.mean_) / self.scale_
        return Z @ self.coef_ + self.intercept_

    def predict(self, X):
        # ties go to the first class
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


def train_linear(X_train, y_train, X_valid, y_valid, penalty_grid: Sequence[float] = PENALTY_GRID):
    """Fit one :class:`LinearSVM` per penalty; keep the best validation F1 (first wins ties).

    Returns ``(model, penalty, valid_f1)``.
    """
    y_train = np.asarray(y_train)
    if len(np.unique(y_train)) < 2:
        raise ValueError("training split contains a single class")
    if len(y_valid) == 0:
        raise ValueError("validation split is empty")
    best = None
    for C in penalty_grid:
        model = LinearSVM(C=C).fit(X_train, y_train)
        score = f1(model.predict(X_valid), y_valid)
        if best is None or score > best[2]:
            best = (model, C, score)
    return best


def split_by_user(instances: Sequence[EntityInstance], corpus: Corpus, seed: int = 0,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> None:
    """Assign train/valid/test in place so that no user spans two splits."""
    owner = []
    for inst in instances:
        users = {corpus.tweets[corpus.tweet_index[t]].user_index for t in inst.tweet_ids}
        owner.append(min(users))
    users = np.array(sorted(set(owner)))
    rng = np.random.default_rng(seed)
    users = users[rng.permutation(len(users))]
    n = len(users)
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    if n >= 3:
        n_train = min(max(n_train, 1), n - 2)
        n_valid = min(max(n_valid, 1), n - n_train - 1)
    split_of = {}
    for k, u in enumerate(users):
        split_of[int(u)] = "train" if k < n_train else "valid" if k < n_train + n_valid else "test"
    for inst, u in zip(instances, owner):
        inst.split = split_of[u]


def evaluate(instances: Sequence[EntityInstance], corpus: Corpus, tweet_vectors: np.ndarray,
             penalty_grid: Sequence[float] = PENALTY_GRID) -> dict:
    """Tune the penalty on ``valid`` and report F1 on ``valid`` and ``test``."""
    X = entity_matrix(instances, corpus, tweet_vectors)
    y = np.array([inst.label for inst in instances])
    split = np.array([inst.split for inst in instances])
    tr, va, te = (split == s for s in SPLITS)
    model, C, valid_f1 = train_linear(X[tr], y[tr], X[va], y[va], penalty_grid)
    test_f1 = f1(model.predict(X[te]), y[te]) if te.any() else float("nan")
    return {"penalty": C, "valid_f1": valid_f1, "test_f1": test_f1, "model": model}


# -- synthetic corpora -------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Desk-scale timelines with known topical structure.

    ``relevance="block"``: runs of ``block_length`` same-topic tweets.
    ``relevance="adjacent"``: tweet ``j`` mixes words of topics ``k_j`` and
    ``k_{j+1}`` taken from a cyclic topic order, so with ``n_topics`` larger
    than the context window only offsets -1 and +1 share a topic with the
    target.  Each tweet has ``topic_words`` topical tokens plus
    ``filler_words`` tokens from a topic-free vocabulary of ``filler_vocab``.
    """

    n_users: int = 20
    tweets_per_user: int = 50
    n_topics: int = 2
    words_per_topic: int = 20
    block_length: int = 5
    topic_words: int = 8
    filler_words: int = 0
    filler_vocab: int = 0
    relevance: str = "block"
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.relevance not in ("block", "adjacent"):
            raise ValueError("relevance must be 'block' or 'adjacent'")
        if min(self.n_users, self.tweets_per_user, self.n_topics, self.words_per_topic,
               self.block_length, self.topic_words) < 1:
            raise ValueError("synthetic spec sizes must be positive")
        if self.filler_words and self.filler_vocab < 1:
            raise ValueError("filler_words needs a non-empty filler_vocab")
        return self


def keyword_spec(**overrides) -> SyntheticSpec:
    """Two topical keywords per tweet among six filler tokens.

    The topic of a tweet then cannot be read off its word window alone, which
    is what forces topical information into the tweet vectors.
    """
    return SyntheticSpec(**{"topic_words": 2, "filler_words": 6, "filler_vocab": 30, **overrides})


@dataclass
class SyntheticCorpus:
    records: list[TimelineRecord]
    entities: list[tuple[str, int, list[str]]]
    # topic per tweet id; for "adjacent" the first of the tweet's two topics
    topics: dict[str, int]

    def write(self, corpus_path: str | Path, labels_path: str | Path) -> None:
        write_records(self.records, corpus_path)
        write_labels(self.entities, labels_path)


def _topic_sequence(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.tweets_per_user
    if spec.relevance == "block":
        n_blocks = -(-n // spec.block_length)
        seq = []
        while len(seq) < n_blocks:
            seq.extend(rng.permutation(spec.n_topics).tolist())
        # a fresh permutation may start with the topic that ended the last one
        return np.repeat(np.asarray(seq[:n_blocks]), spec.block_length)[:n]
    # a cyclic topic order: no topic recurs within n_topics consecutive steps
    order = rng.permutation(spec.n_topics)
    start = int(rng.integers(spec.n_topics))
    return order[(start + np.arange(n + 1)) % spec.n_topics]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Build timelines and one labeled entity per (user, topic); label is 1 for topic 0."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = [[f"t{k}w{i}" for i in range(spec.words_per_topic)] for k in range(spec.n_topics)]
    filler = [f"c{i}" for i in range(spec.filler_vocab)]
    records, topics = [], {}
    by_user_topic: dict[tuple[int, int], list[str]] = {}
    for u in range(spec.n_users):
        user = f"u{u:03d}"
        seq = _topic_sequence(spec, rng)
        for j in range(spec.tweets_per_user):
            tid = f"{user}_{j:04d}"
            if spec.relevance == "block":
                topic = int(seq[j])
                words = [vocab[topic][i] for i in rng.integers(0, spec.words_per_topic, spec.topic_words)]
            else:
                topic, other = int(seq[j]), int(seq[j + 1])
                half = spec.topic_words // 2
                words = [vocab[topic][i] for i in rng.integers(0, spec.words_per_topic, spec.topic_words - half)]
                words += [vocab[other][i] for i in rng.integers(0, spec.words_per_topic, half)]
            if spec.filler_words:
                words += [filler[i] for i in rng.integers(0, spec.filler_vocab, spec.filler_words)]
            words = [words[i] for i in rng.permutation(len(words))]
            records.append(TimelineRecord(user, tid, j, " ".join(words)))
            topics[tid] = topic
            by_user_topic.setdefault((u, topic), []).append(tid)
    entities = [
        (f"u{u:03d}_topic{k}", int(k == 0), ids)
        for (u, k), ids in sorted(by_user_topic.items())
    ]
    return SyntheticCorpus(records, entities, topics)


def instances_from_labels(rows: Sequence[tuple[str, int, Sequence[str]]]) -> list[EntityInstance]:
    return [EntityInstance(e, list(ids), int(label)) for e, label, ids in rows]
