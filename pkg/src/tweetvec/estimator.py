"""scikit-learn facade over corpus building and training."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus, TimelineRecord, TokenizerConfig, build_corpus, ingest
from .evaluation import entity_vector
from .params import read_word_vectors
from .trainer import TrainConfig, train


def as_corpus(X, tokenizer: TokenizerConfig | None = None, min_count: int = 1) -> Corpus:
    """Accept a Corpus, a corpus file path, or an iterable of records / 4-tuples."""
    if isinstance(X, Corpus):
        return X
    if isinstance(X, (str, Path)):
        return ingest(X, tokenizer, min_count)
    records = [r if isinstance(r, TimelineRecord) else TimelineRecord(str(r[0]), str(r[1]), int(r[2]), str(r[3]))
               for r in X]
    return build_corpus(records, tokenizer, min_count)


class TweetEmbedder(TransformerMixin, BaseEstimator):
    """Learns tweet vectors and maps entities (lists of tweet ids) to averaged vectors.

    ``fit`` trains on ``corpus`` when it is set, otherwise on ``X``; this lets
    the embedder sit in a :class:`~sklearn.pipeline.Pipeline` whose ``X`` is a
    list of entities.

    >>> emb = TweetEmbedder(dim=16, epochs=1).fit(records)  # doctest: +SKIP
    >>> emb.transform([["t1", "t2"], ["t3"]]).shape          # doctest: +SKIP
    (2, 16)
    """

    def __init__(
        self,
        corpus=None,
        dim: int = 200,
        word_window: int = 10,
        context_size: int = 2,
        epochs: int = 5,
        lr: float = 0.001,
        use_user: bool = False,
        attention: str = "learned",
        min_count: int = 1,
        seed: int = 0,
        term_weights: dict | None = None,
        pretrained_words=None,
        deterministic: bool = True,
        workers: int = 1,
    ):
        self.corpus = corpus
        self.dim = dim
        self.word_window = word_window
        self.context_size = context_size
        self.epochs = epochs
        self.lr = lr
        self.use_user = use_user
        self.attention = attention
        self.min_count = min_count
        self.seed = seed
        self.term_weights = term_weights
        self.pretrained_words = pretrained_words
        self.deterministic = deterministic
        self.workers = workers

    def _config(self) -> TrainConfig:
        cfg = TrainConfig(
            dim=self.dim,
            word_window=self.word_window,
            context_size=self.context_size,
            epochs=self.epochs,
            lr=self.lr,
            use_user=bool(self.use_user),
            attention_mode=self.attention,
            seed=self.seed,
            deterministic=self.deterministic,
            workers=self.workers,
        )
        if self.term_weights:
            cfg.term_weights = {**cfg.term_weights, **self.term_weights}
        return cfg.validate()

    def fit(self, X=None, y=None):
        source = self.corpus if self.corpus is not None else X
        if source is None:
            raise ValueError("no corpus given to fit")
        self.corpus_ = as_corpus(source, min_count=self.min_count)
        self.config_ = self._config()
        pretrained = read_word_vectors(self.pretrained_words) if self.pretrained_words else None
        result = train(self.corpus_, self.config_, pretrained=pretrained)
        self.store_ = result.store
        self.optimizer_ = result.adam
        self.attention_report_ = result.attention
        self.loss_curve_ = result.loss_curve
        return self

    @property
    def tweet_vectors_(self) -> np.ndarray:
        return self.store_.tweet_vectors

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "store_")
        rows = []
        for item in X:
            ids = [item] if isinstance(item, str) else list(item)
            try:
                idx = [self.corpus_.tweet_index[t] for t in ids]
            except KeyError as exc:
                raise KeyError(f"unknown tweet id {exc.args[0]!r}") from None
            rows.append(entity_vector(idx, self.store_.tweet_vectors))
        return np.vstack(rows) if rows else np.zeros((0, self.dim))
