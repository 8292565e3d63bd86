"""Trainable parameters, lazy Adam state, checkpoints and embedding export."""

from __future__ import annotations

import io
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# order of matrices in memory, checkpoints and gradient dicts
PARAM_NAMES = (
    "word_vectors",
    "tweet_vectors",
    "user_vectors",
    "word_tree_nodes",
    "tweet_tree_nodes",
    "user_tree_nodes",
    "attention",
)

MAGIC = b"TLE1"


class CheckpointError(IOError):
    pass


@dataclass
class ParameterStore:
    word_vectors: np.ndarray
    tweet_vectors: np.ndarray
    user_vectors: np.ndarray
    word_tree_nodes: np.ndarray
    tweet_tree_nodes: np.ndarray
    user_tree_nodes: np.ndarray
    attention: np.ndarray
    dim: int
    word_window: int
    context_size: int
    seed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())

    def copy(self) -> "ParameterStore":
        arrays = {k: v.copy() for k, v in self.arrays().items()}
        return ParameterStore(**arrays, dim=self.dim, word_window=self.word_window,
                              context_size=self.context_size, seed=self.seed)


def expected_shapes(n_words: int, n_tweets: int, n_users: int, dim: int, context_size: int) -> dict[str, tuple[int, int]]:
    slots = 2 * context_size
    return {
        "word_vectors": (n_words, dim),
        "tweet_vectors": (n_tweets, dim),
        "user_vectors": (n_users, dim),
        "word_tree_nodes": (max(n_words - 1, 0), dim),
        "tweet_tree_nodes": (max(n_tweets - 1, 0), dim),
        "user_tree_nodes": (max(n_users - 1, 0), dim),
        "attention": (slots, slots * dim),
    }


def read_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Read ``word v1 ... vn`` lines; a leading ``<count> <dim>`` header is optional."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float64)
            if dim is None:
                dim = len(vec)
            if len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} components, got {len(vec)}")
            vectors[parts[0]] = vec
    return vectors


def init_params(
    n_words: int,
    n_tweets: int,
    n_users: int,
    dim: int = 200,
    word_window: int = 10,
    context_size: int = 2,
    seed: int = 0,
    pretrained: dict[str, np.ndarray] | None = None,
    vocab_words: Sequence[str] | None = None,
) -> ParameterStore:
    """Random input vectors in ``[-0.5/dim, 0.5/dim)``; output nodes and attention start at zero.

    Words present in ``pretrained`` take their pretrained vector instead of the
    random draw (the draw still happens, so other rows do not depend on which
    words were matched).
    """
    rng = np.random.default_rng(seed)
    shapes = expected_shapes(n_words, n_tweets, n_users, dim, context_size)
    scale = 0.5 / dim

    def uniform(shape):
        return rng.uniform(-scale, scale, size=shape)

    word_vectors = uniform(shapes["word_vectors"])
    tweet_vectors = uniform(shapes["tweet_vectors"])
    user_vectors = uniform(shapes["user_vectors"])
    if pretrained:
        if vocab_words is None:
            raise ValueError("vocab_words is required with pretrained vectors")
        some = next(iter(pretrained.values()))
        if len(some) != dim:
            raise ValueError(f"pretrained vectors have dimension {len(some)}, model dimension is {dim}")
        for i, w in enumerate(vocab_words):
            if w in pretrained:
                word_vectors[i] = pretrained[w]
    return ParameterStore(
        word_vectors=word_vectors,
        tweet_vectors=tweet_vectors,
        user_vectors=user_vectors,
        word_tree_nodes=np.zeros(shapes["word_tree_nodes"]),
        tweet_tree_nodes=np.zeros(shapes["tweet_tree_nodes"]),
        user_tree_nodes=np.zeros(shapes["user_tree_nodes"]),
        attention=np.zeros(shapes["attention"]),
        dim=dim,
        word_window=word_window,
        context_size=context_size,
        seed=seed,
    )


class SparseGrad:
    """Row-sparse gradient accumulator keyed by parameter name."""

    def __init__(self):
        self._rows: dict[str, list[np.ndarray]] = {}
        self._vals: dict[str, list[np.ndarray]] = {}

    def add(self, name: str, rows, values: np.ndarray) -> None:
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        values = np.asarray(values, dtype=np.float64).reshape(len(rows), -1)
        self._rows.setdefault(name, []).append(rows)
        self._vals.setdefault(name, []).append(values)

    def merge(self, other: "SparseGrad") -> "SparseGrad":
        for name in other._rows:
            self._rows.setdefault(name, []).extend(other._rows[name])
            self._vals.setdefault(name, []).extend(other._vals[name])
        return self

    def scale(self, factor: float) -> "SparseGrad":
        for name in self._vals:
            self._vals[name] = [v * factor for v in self._vals[name]]
        return self

    def items(self):
        """Yield ``(name, unique_rows, summed_values)`` in declared parameter order."""
        for name in PARAM_NAMES:
            if name not in self._rows:
                continue
            chunks = self._rows[name]
            rows = chunks[0] if len(chunks) == 1 else np.concatenate(chunks)
            vals = self._vals[name][0] if len(chunks) == 1 else np.concatenate(self._vals[name])
            if len(set(rows.tolist())) == len(rows):
                yield name, rows, vals
                continue
            uniq, inverse = np.unique(rows, return_inverse=True)
            summed = np.zeros((len(uniq), vals.shape[1]))
            np.add.at(summed, inverse, vals)
            yield name, uniq, summed

    def dense(self, store: ParameterStore) -> dict[str, np.ndarray]:
        out = {name: np.zeros_like(arr) for name, arr in store.arrays().items()}
        for name, rows, vals in self.items():
            out[name][rows] += vals.reshape((len(rows),) + out[name].shape[1:])
        return out


@dataclass
class AdamState:
    """First/second moments per parameter matrix with one global step counter.

    Updates are lazy: only rows that received a gradient are touched, but the
    bias correction uses the global step count.
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, arr in store.arrays().items():
            state.first[name] = np.zeros_like(arr)
            state.second[name] = np.zeros_like(arr)
        return state

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.epsilon, self.step,
                         {k: v.copy() for k, v in self.first.items()},
                         {k: v.copy() for k, v in self.second.items()})


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, state: AdamState, step: int | None = None) -> np.ndarray:
    """Bias-corrected Adam descent on ``param`` in place; ``m``/``v`` are updated too."""
    t = state.step if step is None else step
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return param


def apply_gradients(store: ParameterStore, state: AdamState, grads: SparseGrad, frozen: Sequence[str] = ()) -> None:
    """One Adam step over every row touched by ``grads``."""
    state.step += 1
    t = state.step
    for name, rows, vals in grads.items():
        if name in frozen:
            continue
        arr = store[name]
        p = arr[rows]
        m = state.first[name][rows]
        v = state.second[name][rows]
        adam_step(p, vals, m, v, state, step=t)
        arr[rows] = p
        state.first[name][rows] = m
        state.second[name][rows] = v


# -- checkpoints -----------------------------------------------------------

def _write_matrix(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(struct.pack("<II", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_matrix(buf: io.BytesIO) -> np.ndarray:
    head = buf.read(8)
    if len(head) != 8:
        raise CheckpointError("truncated checkpoint")
    rows, cols = struct.unpack("<II", head)
    nbytes = rows * cols * 8
    data = buf.read(nbytes)
    if len(data) != nbytes:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(rows, cols)


def save_checkpoint(store: ParameterStore, state: AdamState, path: str | Path, config_hash: str = "") -> None:
    header = {
        "dim": store.dim,
        "word_window": store.word_window,
        "context_size": store.context_size,
        "seed": store.seed,
        "config_hash": config_hash,
        "adam": {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                 "epsilon": state.epsilon, "step": state.step},
        "shapes": {k: list(v.shape) for k, v in store.arrays().items()},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in PARAM_NAMES:
        _write_matrix(buf, store[name])
    for name in PARAM_NAMES:
        _write_matrix(buf, state.first.get(name, np.zeros_like(store[name])))
        _write_matrix(buf, state.second.get(name, np.zeros_like(store[name])))
    payload = buf.getvalue()
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path: str | Path, config_hash: str | None = None) -> tuple[ParameterStore, AdamState]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic or truncated)")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt or truncated")
    buf = io.BytesIO(payload[4:])
    (blen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(blen).decode("utf-8"))
    if config_hash is not None and header["config_hash"] != config_hash:
        warnings.warn(f"checkpoint config hash {header['config_hash']} differs from {config_hash}", stacklevel=2)
    arrays = {name: _read_matrix(buf) for name in PARAM_NAMES}
    for name in PARAM_NAMES:
        if list(arrays[name].shape) != header["shapes"][name]:
            raise CheckpointError(f"{path}: shape of {name} disagrees with header")
    store = ParameterStore(**arrays, dim=header["dim"], word_window=header["word_window"],
                           context_size=header["context_size"], seed=header["seed"])
    adam = header["adam"]
    state = AdamState(adam["lr"], adam["beta1"], adam["beta2"], adam["epsilon"], adam["step"])
    for name in PARAM_NAMES:
        state.first[name] = _read_matrix(buf)
        state.second[name] = _read_matrix(buf)
    return store, state


def checkpoint_config_hash(path: str | Path) -> str:
    raw = Path(path).read_bytes()
    (blen,) = struct.unpack("<I", raw[4:8])
    return json.loads(raw[8:8 + blen].decode("utf-8"))["config_hash"]


# -- text export -----------------------------------------------------------

def export_embeddings(matrix: np.ndarray, ids: Sequence[str], path: str | Path) -> None:
    """Write ``<count> <dim>`` then ``<id> v1 ... vn`` per row, 6 significant digits."""
    matrix = np.asarray(matrix)
    if len(ids) != len(matrix):
        raise ValueError("one id per row required")
    dim = matrix.shape[1] if matrix.ndim == 2 else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(matrix)} {dim}\n")
        for ident, row in zip(ids, matrix):
            fh.write(ident + " " + " ".join(f"{x:.6g}" for x in row) + "\n")


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        count, dim = (int(x) for x in fh.readline().split())
        ids, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    matrix = np.asarray(rows, dtype=np.float64).reshape(count, dim)
    return ids, matrix
