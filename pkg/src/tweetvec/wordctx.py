"""Word-context head: predict each word from its window plus the tweet vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .corpus import CodingTree, Corpus, Tweet
from .params import AdamState, ParameterStore, SparseGrad, apply_gradients


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def hs_loss_grad(h: np.ndarray, leaf: int, tree: CodingTree, nodes: np.ndarray):
    """Hierarchical-softmax negative log-likelihood of ``leaf`` given input ``h``.

    Bit 0 at a node means the left branch, taken with probability
    ``sigmoid(<h, node>)``.  Returns ``(loss, grad_h, node_rows, node_grads)``.
    """
    path = tree.paths[leaf]
    if len(path) == 0:
        return 0.0, np.zeros_like(h), path, np.zeros((0, h.shape[0]))
    sign = 1.0 - 2.0 * tree.codes[leaf]
    vecs = nodes[path]
    scores = sign * (vecs @ h)
    loss = -float(np.sum(log_sigmoid(scores)))
    # d loss / d <h, node> = -sign * sigmoid(-score)
    coef = -sign * np.exp(log_sigmoid(-scores))
    return loss, coef @ vecs, path, np.outer(coef, h)


def hs_log_prob(h: np.ndarray, leaf: int, tree: CodingTree, nodes: np.ndarray) -> float:
    path = tree.paths[leaf]
    if len(path) == 0:
        return 0.0
    sign = 1.0 - 2.0 * tree.codes[leaf]
    return float(np.sum(log_sigmoid(sign * (nodes[path] @ h))))


@dataclass(frozen=True)
class WordContextSample:
    tweet_index: int
    position: int
    target: int
    context: np.ndarray


def word_samples(tweet: Tweet, window: int) -> Iterator[WordContextSample]:
    """One sample per token, window clipped at the tweet edges; nothing for <2 tokens."""
    toks = tweet.tokens
    n = len(toks)
    if n < 2:
        return
    for i in range(n):
        lo, hi = max(0, i - window), min(n, i + window + 1)
        ctx = np.concatenate([toks[lo:i], toks[i + 1:hi]])
        yield WordContextSample(tweet.tweet_index, i, int(toks[i]), ctx)


def word_loss_grad(sample: WordContextSample, store: ParameterStore, corpus: Corpus, weight: float = 1.0):
    h = store.word_vectors[sample.context].sum(axis=0) + store.tweet_vectors[sample.tweet_index]
    loss, gh, rows, node_grads = hs_loss_grad(h, sample.target, corpus.word_tree, store.word_tree_nodes)
    grads = SparseGrad()
    gh = weight * gh
    grads.add("word_vectors", sample.context, np.broadcast_to(gh, (len(sample.context), len(gh))))
    grads.add("tweet_vectors", sample.tweet_index, gh)
    if len(rows):
        grads.add("word_tree_nodes", rows, weight * node_grads)
    return weight * loss, grads


def word_forward_backward(sample, store, corpus, adam: AdamState, weight: float = 1.0) -> float:
    loss, grads = word_loss_grad(sample, store, corpus, weight)
    apply_gradients(store, adam, grads)
    return loss


def tweet_from_words_loss_grad(tweet: Tweet, store: ParameterStore, corpus: Corpus, weight: float = 1.0):
    """Predict the tweet's own leaf from the mean of its word vectors.

    Returns ``None`` for a tweet with no in-vocabulary tokens.
    """
    toks = tweet.tokens
    if len(toks) == 0:
        return None
    h = store.word_vectors[toks].mean(axis=0)
    loss, gh, rows, node_grads = hs_loss_grad(h, tweet.tweet_index, corpus.tweet_tree, store.tweet_tree_nodes)
    grads = SparseGrad()
    gw = weight * gh / len(toks)
    grads.add("word_vectors", toks, np.broadcast_to(gw, (len(toks), len(gw))))
    if len(rows):
        grads.add("tweet_tree_nodes", rows, weight * node_grads)
    return weight * loss, grads


def tweet_from_words_loss(tweet, store, corpus, adam: AdamState, weight: float = 1.0) -> float:
    out = tweet_from_words_loss_grad(tweet, store, corpus, weight)
    if out is None:
        return 0.0
    loss, grads = out
    apply_gradients(store, adam, grads)
    return loss
