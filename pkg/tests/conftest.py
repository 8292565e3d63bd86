import math
import re

import numpy as np
import pytest

from tweetvec.corpus import TimelineRecord, build_corpus
from tweetvec.params import PARAM_NAMES, init_params


def toy_records(n_users=2, tweets_per_user=4, seed=0, vocab=("a", "b", "c", "d", "e", "f"), length=(1, 5)):
    rng = np.random.default_rng(seed)
    records = []
    for u in range(n_users):
        for j in range(tweets_per_user):
            k = int(rng.integers(length[0], length[1] + 1))
            words = [vocab[i] for i in rng.integers(0, len(vocab), k)]
            records.append(TimelineRecord(f"user{u}", f"u{u}t{j}", j, " ".join(words)))
    return records


def toy_model(seed=0, dim=4, word_window=2, context_size=1, scale=0.5, **kw):
    """Toy corpus (|V| = 6, 2 users x 4 tweets) with every parameter randomised."""
    records = toy_records(seed=seed, **kw)
    # make sure all six words occur so |V| = 6
    records[0] = TimelineRecord(records[0].user_id, records[0].tweet_id, 0, "a b c d e f")
    corpus = build_corpus(records)
    store = init_params(corpus.n_words, corpus.n_tweets, corpus.n_users, dim, word_window, context_size, seed)
    rng = np.random.default_rng(seed + 1000)
    for name in PARAM_NAMES:
        arr = store[name]
        arr[...] = rng.normal(0.0, scale, size=arr.shape)
    return corpus, store


def numeric_gradient(loss_fn, store, h=1e-4):
    """Central differences of ``loss_fn(store)`` w.r.t. every parameter entry."""
    out = {}
    for name in PARAM_NAMES:
        arr = store[name]
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn(store)
            arr[idx] = orig - h
            down = loss_fn(store)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_error(analytic, numeric):
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if den < 1e-10:
        return 0.0
    return num / den


def gradient_errors(loss_grad, store, h=1e-4):
    """Per-parameter relative error between analytic and central-difference gradients.

    ``loss_grad(store)`` returns ``(loss, SparseGrad)``.
    """
    _, grads = loss_grad(store)
    analytic = grads.dense(store)
    numeric = numeric_gradient(lambda s: loss_grad(s)[0], store, h)
    return {name: relative_error(analytic[name], numeric[name]) for name in PARAM_NAMES}


def uniform_reference_loss(sample, store, corpus):
    """Temporal loss under equal weights, written without the library's helpers.

    Mean of the available context vectors, then minus the log of the product of
    branch probabilities along the target's code path.
    """
    vecs = [store.tweet_vectors[t] for t in sample.context if t >= 0]
    h = sum(vecs) / len(vecs)
    tree = corpus.tweet_tree
    loss = 0.0
    for bit, node in zip(tree.codes[sample.target], tree.paths[sample.target]):
        s = float(store.tweet_tree_nodes[node] @ h)
        s = s if bit == 0 else -s
        # -log sigmoid(s), stable on both sides
        loss += math.log1p(math.exp(-s)) if s > 0 else -s + math.log1p(math.exp(s))
    return loss


# one PASS/FAIL line per acceptance criterion in the terminal summary
_criteria = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.outcome != "passed":
        _criteria[key] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {num}: {status}  {name.replace('_', ' ')}")


@pytest.fixture
def toy():
    return toy_model()
