"""Attention-weighted temporal context, user vectors and the user-from-tweets head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .corpus import Corpus
from .params import AdamState, ParameterStore, SparseGrad, apply_gradients
from .wordctx import hs_loss_grad

ATTENTION_MODES = ("learned", "uniform", "sd")


def context_offsets(context_size: int) -> np.ndarray:
    """Slot order: -C..-1 then +1..+C."""
    return np.concatenate([np.arange(-context_size, 0), np.arange(1, context_size + 1)])


@dataclass(frozen=True)
class TemporalSample:
    target: int
    user: int
    # tweet index per slot, -1 where the offset falls outside the timeline
    context: np.ndarray
    mask: np.ndarray


def temporal_sample(corpus: Corpus, tweet_index: int, context_size: int) -> TemporalSample | None:
    user = corpus.tweets[tweet_index].user_index
    line = corpus.timelines[user]
    pos = corpus.position[tweet_index]
    where = pos + context_offsets(context_size)
    mask = (where >= 0) & (where < len(line))
    if not mask.any():
        return None
    context = np.full(len(where), -1, dtype=np.int64)
    context[mask] = line[where[mask]]
    return TemporalSample(tweet_index, user, context, mask)


def temporal_samples(corpus: Corpus, user: int, context_size: int) -> Iterator[TemporalSample]:
    for t in corpus.timelines[user]:
        s = temporal_sample(corpus, int(t), context_size)
        if s is not None:
            yield s


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(logits, dtype=np.float64)
    if not mask.any():
        raise ValueError("no available context slot")
    z = logits[mask]
    e = np.exp(z - z.max())
    out[mask] = e / e.sum()
    return out


def context_matrix(sample: TemporalSample, store: ParameterStore) -> np.ndarray:
    X = np.zeros((len(sample.context), store.dim))
    X[sample.mask] = store.tweet_vectors[sample.context[sample.mask]]
    return X


def attention_weights(X: np.ndarray, mask: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Softmax of ``A @ concat(context vectors)`` over the available slots."""
    return masked_softmax(A @ X.ravel(), mask)


def uniform_attention(mask: np.ndarray) -> np.ndarray:
    return mask / mask.sum()


def sd_attention(mask: np.ndarray) -> np.ndarray:
    """Weights inversely proportional to |offset|, normalised over available slots."""
    mask = np.asarray(mask, dtype=bool)
    offsets = context_offsets(len(mask) // 2)
    w = np.where(mask, 1.0 / np.abs(offsets), 0.0)
    return w / w.sum()


def temporal_loss_grad(
    sample: TemporalSample,
    store: ParameterStore,
    corpus: Corpus,
    use_user: bool = False,
    mode: str = "learned",
    weight: float = 1.0,
):
    """Loss and gradients for predicting ``sample.target`` from its context.

    Returns ``(loss, grads, alpha)``.
    """
    X = context_matrix(sample, store)
    if mode == "learned":
        alpha = attention_weights(X, sample.mask, store.attention)
    elif mode == "uniform":
        alpha = uniform_attention(sample.mask)
    elif mode == "sd":
        alpha = sd_attention(sample.mask)
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    h = alpha @ X
    if use_user:
        h = h + store.user_vectors[sample.user]
    loss, gh, rows, node_grads = hs_loss_grad(h, sample.target, corpus.tweet_tree, store.tweet_tree_nodes)
    gh = weight * gh

    grads = SparseGrad()
    gX = np.outer(alpha, gh)
    if mode == "learned":
        dalpha = X @ gh
        dz = alpha * (dalpha - alpha @ dalpha)
        dz[~sample.mask] = 0.0
        grads.add("attention", np.arange(len(dz)), np.outer(dz, X.ravel()))
        gX += (store.attention.T @ dz).reshape(X.shape)
    m = sample.mask
    grads.add("tweet_vectors", sample.context[m], gX[m])
    if use_user:
        grads.add("user_vectors", sample.user, gh)
    if len(rows):
        grads.add("tweet_tree_nodes", rows, weight * node_grads)
    return weight * loss, grads, alpha


def tweet_forward_backward(sample, store, corpus, adam: AdamState, use_user=False, mode="learned",
                           weight: float = 1.0, freeze_attention: bool = False):
    loss, grads, alpha = temporal_loss_grad(sample, store, corpus, use_user, mode, weight)
    apply_gradients(store, adam, grads, frozen=("attention",) if freeze_attention else ())
    return loss, alpha


def user_from_tweets_loss_grad(user: int, store: ParameterStore, corpus: Corpus, weight: float = 1.0):
    line = corpus.timelines[user]
    if len(line) == 0:
        return None
    h = store.tweet_vectors[line].mean(axis=0)
    loss, gh, rows, node_grads = hs_loss_grad(h, user, corpus.user_tree, store.user_tree_nodes)
    grads = SparseGrad()
    gt = weight * gh / len(line)
    grads.add("tweet_vectors", line, np.broadcast_to(gt, (len(line), len(gt))))
    if len(rows):
        grads.add("user_tree_nodes", rows, weight * node_grads)
    return weight * loss, grads


def user_from_tweets_loss(user, store, corpus, adam: AdamState, weight: float = 1.0) -> float:
    out = user_from_tweets_loss_grad(user, store, corpus, weight)
    if out is None:
        return 0.0
    loss, grads = out
    apply_gradients(store, adam, grads)
    return loss
