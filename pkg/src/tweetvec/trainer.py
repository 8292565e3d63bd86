"""Joint training loop over the four likelihood terms."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .params import AdamState, ParameterStore, SparseGrad, apply_gradients, init_params
from .tweetctx import (
    ATTENTION_MODES,
    context_offsets,
    temporal_loss_grad,
    temporal_samples,
    user_from_tweets_loss_grad,
)
from .wordctx import tweet_from_words_loss_grad, word_loss_grad, word_samples

log = logging.getLogger(__name__)

TERMS = ("word", "tweet_from_words", "temporal", "user_from_tweets")
CONTEXT_SIZE_GRID = (1, 2, 4, 6, 8, 10, 12, 14, 16)


class NumericalError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    dim: int = 200
    word_window: int = 10
    context_size: int = 2
    epochs: int = 5
    lr: float = 0.001
    use_user: bool = False
    attention_mode: str = "learned"
    seed: int = 0
    term_weights: dict = field(default_factory=lambda: {t: 1.0 for t in TERMS})
    deterministic: bool = True
    workers: int = 1
    freeze_attention: bool = False

    def validate(self) -> "TrainConfig":
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.word_window < 1:
            raise ValueError("word_window must be >= 1")
        if self.context_size < 1:
            raise ValueError("context_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.use_user and self.attention_mode != "learned":
            raise ValueError("user vectors are only part of the learned-attention model; "
                             "the uniform and sd baselines run without them")
        unknown = set(self.term_weights) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        return self

    def weight(self, term: str) -> float:
        return float(self.term_weights.get(term, 1.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["term_weights"] = {t: self.weight(t) for t in TERMS}
        d["use_user"] = int(bool(self.use_user))
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class AttentionReport:
    """Mean attention per epoch and context offset.

    A sample contributes to an offset only where that offset exists in the
    timeline.  A second set of accumulators only sees samples whose whole
    context window is available (``full_context=True``).
    """

    def __init__(self, context_size: int):
        self.offsets = context_offsets(context_size)
        self._acc: dict[tuple[int, bool], tuple[np.ndarray, np.ndarray]] = {}

    def _slot(self, epoch: int, full: bool):
        if (epoch, full) not in self._acc:
            self._acc[(epoch, full)] = (np.zeros(len(self.offsets)), np.zeros(len(self.offsets), dtype=np.int64))
        return self._acc[(epoch, full)]

    def record(self, epoch: int, alpha: np.ndarray, mask: np.ndarray) -> None:
        sums, counts = self._slot(epoch, False)
        sums += np.where(mask, alpha, 0.0)
        counts += mask
        if mask.all():
            sums, counts = self._slot(epoch, True)
            sums += alpha
            counts += 1

    def merge(self, other: "AttentionReport") -> None:
        for key, (s, c) in other._acc.items():
            sums, counts = self._slot(*key)
            sums += s
            counts += c

    @property
    def epochs(self) -> list[int]:
        return sorted({e for e, _ in self._acc})

    def counts(self, epoch: int, full_context: bool = False) -> np.ndarray:
        return self._slot(epoch, full_context)[1].copy()

    def means(self, epoch: int, full_context: bool = False) -> np.ndarray:
        s, c = self._slot(epoch, full_context)
        return np.divide(s, c, out=np.full(len(c), np.nan), where=c > 0)

    def rows(self, full_context: bool = False) -> list[tuple[int, int, float, int]]:
        out = []
        for epoch in self.epochs:
            means = self.means(epoch, full_context)
            counts = self._slot(epoch, full_context)[1]
            for k, off in enumerate(self.offsets):
                out.append((epoch, int(off), float(means[k]), int(counts[k])))
        return out

    def to_csv(self, path: str | Path, full_context: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "offset", "mean_attention", "sample_count"])
            for epoch, off, mean, count in self.rows(full_context):
                w.writerow([epoch, off, repr(mean), count])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AttentionReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        context_size = max((abs(int(r["offset"])) for r in rows), default=1)
        report = cls(context_size)
        slot = {int(o): k for k, o in enumerate(report.offsets)}
        for r in rows:
            sums, counts = report._slot(int(r["epoch"]), False)
            k = slot[int(r["offset"])]
            counts[k] = int(r["sample_count"])
            sums[k] = float(r["mean_attention"]) * counts[k] if counts[k] else 0.0
        return report


@dataclass
class LossCurve:
    # (epoch, term, mean_loss); term "total" is the summed objective per tweet
    rows: list = field(default_factory=list)

    def total(self) -> list[float]:
        return [m for _, t, m in self.rows if t == "total"]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "term", "mean_loss"])
            for epoch, term, mean in self.rows:
                w.writerow([epoch, term, repr(mean)])


@dataclass
class TrainResult:
    store: ParameterStore
    adam: AdamState
    attention: AttentionReport
    loss_curve: LossCurve
    config: TrainConfig


class _EpochStats:
    def __init__(self):
        self.sums = {t: 0.0 for t in TERMS}
        self.counts = {t: 0 for t in TERMS}

    def add(self, term: str, loss: float) -> None:
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss in term {term!r}")
        self.sums[term] += loss
        self.counts[term] += 1

    def merge(self, other: "_EpochStats") -> None:
        for t in TERMS:
            self.sums[t] += other.sums[t]
            self.counts[t] += other.counts[t]


def _train_user(user: int, epoch: int, store, adam, corpus: Corpus, config: TrainConfig,
                stats: _EpochStats, report: AttentionReport) -> None:
    frozen = ("attention",) if (config.freeze_attention or config.attention_mode != "learned") else ()
    line = corpus.timelines[user]
    temporal = {s.target: s for s in temporal_samples(corpus, user, config.context_size)} if len(line) > 1 else {}
    for t in line:
        tweet = corpus.tweets[t]
        for sample in word_samples(tweet, config.word_window):
            loss, grads = word_loss_grad(sample, store, corpus, config.weight("word"))
            stats.add("word", loss)
            apply_gradients(store, adam, grads)
        out = tweet_from_words_loss_grad(tweet, store, corpus, config.weight("tweet_from_words"))
        if out is not None:
            stats.add("tweet_from_words", out[0])
            apply_gradients(store, adam, out[1])
        sample = temporal.get(int(t))
        if sample is not None:
            loss, grads, alpha = temporal_loss_grad(sample, store, corpus, config.use_user,
                                                    config.attention_mode, config.weight("temporal"))
            stats.add("temporal", loss)
            report.record(epoch, alpha, sample.mask)
            apply_gradients(store, adam, grads, frozen=frozen)
    out = user_from_tweets_loss_grad(user, store, corpus, config.weight("user_from_tweets"))
    if out is not None:
        stats.add("user_from_tweets", out[0])
        apply_gradients(store, adam, out[1])


def train(
    corpus: Corpus,
    config: TrainConfig,
    store: ParameterStore | None = None,
    adam: AdamState | None = None,
    pretrained: dict | None = None,
) -> TrainResult:
    """Run ``config.epochs`` passes over the corpus, users in seeded shuffled order."""
    config.validate()
    if corpus.n_tweets == 0:
        raise ValueError("cannot train on an empty corpus")
    if store is None:
        store = init_params(corpus.n_words, corpus.n_tweets, corpus.n_users, config.dim,
                            config.word_window, config.context_size, config.seed,
                            pretrained=pretrained, vocab_words=corpus.vocab.index_to_word)
    if adam is None:
        adam = AdamState.for_store(store, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    report = AttentionReport(config.context_size)
    curve = LossCurve()
    threaded = not config.deterministic and config.workers > 1

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(corpus.n_users)
        stats = _EpochStats()
        if threaded:
            _run_threaded(order, epoch, store, adam, corpus, config, stats, report)
        else:
            for user in order:
                _train_user(int(user), epoch, store, adam, corpus, config, stats, report)
        if not store.is_finite():
            raise NumericalError(f"non-finite parameters after epoch {epoch}")
        total = 0.0
        for term in TERMS:
            if stats.counts[term]:
                curve.rows.append((epoch, term, stats.sums[term] / stats.counts[term]))
            total += stats.sums[term]
        curve.rows.append((epoch, "total", total / corpus.n_tweets))
        log.info("epoch %d: mean loss per tweet %.6f", epoch, total / corpus.n_tweets)
    return TrainResult(store, adam, report, curve, config)


def _run_threaded(order, epoch, store, adam, corpus, config, stats, report) -> None:
    # hogwild: workers share store and optimizer state without locks
    parts = np.array_split(order, config.workers)
    local = [(_EpochStats(), AttentionReport(config.context_size)) for _ in parts]
    errors: list[BaseException] = []

    def work(users, s, r):
        try:
            for u in users:
                _train_user(int(u), epoch, store, adam, corpus, config, s, r)
        except BaseException as exc:  # re-raised at the barrier
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(p, s, r)) for p, (s, r) in zip(parts, local)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    for s, r in local:
        stats.merge(s)
        report.merge(r)


def objective_grad(store: ParameterStore, corpus: Corpus, config: TrainConfig):
    """Summed weighted loss per term over the whole corpus, plus the gradient of their sum.

    Nothing is updated; this is the objective the per-sample steps descend.
    """
    totals = {t: 0.0 for t in TERMS}
    grads = SparseGrad()
    for user, line in enumerate(corpus.timelines):
        for t in line:
            tweet = corpus.tweets[t]
            for sample in word_samples(tweet, config.word_window):
                loss, g = word_loss_grad(sample, store, corpus, config.weight("word"))
                totals["word"] += loss
                grads.merge(g)
            out = tweet_from_words_loss_grad(tweet, store, corpus, config.weight("tweet_from_words"))
            if out is not None:
                totals["tweet_from_words"] += out[0]
                grads.merge(out[1])
        if len(line) > 1:
            for sample in temporal_samples(corpus, user, config.context_size):
                loss, g, _ = temporal_loss_grad(sample, store, corpus, config.use_user,
                                                config.attention_mode, config.weight("temporal"))
                totals["temporal"] += loss
                grads.merge(g)
        out = user_from_tweets_loss_grad(user, store, corpus, config.weight("user_from_tweets"))
        if out is not None:
            totals["user_from_tweets"] += out[0]
            grads.merge(out[1])
    return totals, grads


def term_losses(store: ParameterStore, corpus: Corpus, config: TrainConfig) -> dict[str, float]:
    return objective_grad(store, corpus, config)[0]


def loss_report(store: ParameterStore, corpus: Corpus, config: TrainConfig) -> float:
    return float(sum(term_losses(store, corpus, config).values()))
