"""Layer-ensemble scorer: cross inner products of layer representations into an MLP.

For a user ``u`` and item ``v`` with layer representations ``h_u^0..h_u^K``
and ``h_v^0..h_v^K``, the ``(K+1)**2`` inner products ``h_u^i . h_v^j``
(row-major in ``i`` then ``j``) feed a ReLU MLP whose scalar output is the
pre-sigmoid relevance logit. Training uses binary cross-entropy against
uniformly sampled negatives and Adam with decoupled L2 decay. It reads only
the precomputed representation table.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .aggregate import LayerRepresentations
from .embeddings import sample_negatives
from .errors import BadMagicError, FormatError, TruncatedFileError, VersionMismatchError

log = logging.getLogger(__name__)

MODEL_MAGIC = b"FLTM"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.001
    l2: float = 1e-5
    epochs: int = 1000
    batch_size: int = 256
    negatives: int = 1
    patience: int = 40
    val_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr < 0 or self.l2 < 0:
            raise ValueError("lr and l2 must be nonnegative")
        for name in ("epochs", "batch_size", "negatives", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class ModelParams:
    weights: list
    biases: list
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           [x.copy() for x in self.m], [x.copy() for x in self.v], self.step)

    def same_as(self, other: "ModelParams") -> bool:
        return all(a.shape == b.shape and np.array_equal(a, b)
                   for a, b in zip(self.tensors(), other.tensors())) and self.sizes == other.sizes


def init_params(sizes, seed: int = 0) -> ModelParams:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def default_sizes(K: int, hidden=(64, 32)) -> list[int]:
    return [(K + 1) ** 2, *hidden, 1]


def cross_features(user_reprs: np.ndarray, item_reprs: np.ndarray) -> np.ndarray:
    """All ``(K+1)**2`` inner products between user and item layers.

    Accepts single ``(K+1, d)`` inputs or batches ``(B, K+1, d)``.
    """
    hu = np.asarray(user_reprs, dtype=np.float64)
    hv = np.asarray(item_reprs, dtype=np.float64)
    if hu.shape != hv.shape:
        raise ValueError(f"layer shapes differ: {hu.shape} vs {hv.shape}")
    grid = hu @ np.swapaxes(hv, -1, -2)
    return grid.reshape(*grid.shape[:-2], -1)


def forward(params: ModelParams, feats, cache: bool = False):
    """Raw logits for a feature vector or a ``(B, F)`` batch."""
    x = np.asarray(feats, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"expected {params.weights[0].shape[0]} features, got {x.shape[1]}")
    acts = [x]
    pre = []
    last = len(params.weights) - 1
    for n, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(z if n == last else np.maximum(z, 0.0))
    out = acts[-1][:, 0]
    if single:
        out = out[0]
    return (out, (acts, pre)) if cache else out


def bce_with_logits(z, y):
    return np.logaddexp(0.0, z) - y * z


def loss_and_grads(params: ModelParams, X, y):
    """Mean BCE over the batch and its gradient for every weight and bias."""
    z, (acts, pre) = forward(params, X, cache=True)
    z = np.atleast_1d(z)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    loss = float(np.mean(bce_with_logits(z, y)))
    delta = ((expit(z) - y) / len(y))[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for n in range(len(params.weights) - 1, -1, -1):
        gw[n] = acts[n].T @ delta
        gb[n] = delta.sum(axis=0)
        if n:
            delta = (delta @ params.weights[n].T) * (pre[n - 1] > 0)
    return loss, gw, gb


def adam_step(params: ModelParams, gw, gb, cfg: TrainConfig) -> None:
    """One Adam update with decoupled weight decay, in place."""
    tensors = params.tensors()
    grads = [*gw, *gb]
    if not params.m:
        params.m = [np.zeros_like(t) for t in tensors]
        params.v = [np.zeros_like(t) for t in tensors]
    params.step += 1
    c1 = 1.0 - cfg.beta1 ** params.step
    c2 = 1.0 - cfg.beta2 ** params.step
    for p, g, m, v in zip(tensors, grads, params.m, params.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * ((m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.l2 * p)


def gradient_check(params: ModelParams, feats, label, step: float = 1e-5) -> float:
    """Max relative gap between backprop and central finite differences.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)`` so exactly-zero
    gradients on both sides count as agreement.
    """
    X = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    y = np.atleast_1d(np.asarray(label, dtype=np.float64))
    _, gw, gb = loss_and_grads(params, X, y)
    worst = 0.0
    for p, g in zip(params.tensors(), [*gw, *gb]):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = np.mean(bce_with_logits(np.atleast_1d(forward(params, X)), y))
            flat[idx] = orig - step
            down = np.mean(bce_with_logits(np.atleast_1d(forward(params, X)), y))
            flat[idx] = orig
            num = (up - down) / (2 * step)
            err = abs(gflat[idx] - num) / max(abs(gflat[idx]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def pair_features(reprs: LayerRepresentations, users, items) -> np.ndarray:
    return cross_features(reprs.values[users], reprs.values[items])


def _mean_loss(params, reprs, users, items, labels, batch=4096):
    total = 0.0
    for s in range(0, len(users), batch):
        z = forward(params, pair_features(reprs, users[s:s + batch], items[s:s + batch]))
        total += float(np.sum(bce_with_logits(np.atleast_1d(z), labels[s:s + batch])))
    return total / len(users)


def _with_negatives(rng, users, items, codes, n_users, n_nodes, negatives):
    neg_u = np.repeat(users, negatives)
    neg_i = sample_negatives(rng, neg_u, codes, n_users, n_nodes)
    u = np.concatenate([users, neg_u])
    i = np.concatenate([items, neg_i])
    y = np.concatenate([np.ones(len(users)), np.zeros(len(neg_u))])
    return u, i, y


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    epoch_seconds: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{t!r},{v!r}" for e, t, v in self.rows]
        return "\n".join(lines) + "\n"


def train(params: ModelParams, reprs: LayerRepresentations, users, items, exclude_codes,
          n_users: int, cfg: TrainConfig, clock=None):
    """Fit the scorer on observed (user, item) pairs.

    ``exclude_codes`` are sorted ``user * n_nodes + item`` codes of every known
    positive, used to keep them out of the negative samples. Returns the
    parameters of the best validation epoch and the history; epoch 0 is the
    untrained model. ``clock`` (e.g. ``time.perf_counter``) enables per-epoch
    timing.
    """
    cfg.validate()
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) == 0:
        raise ValueError("model training set is empty")
    n_nodes = reprs.n_nodes
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(users))
    n_val = max(1, int(round(cfg.val_fraction * len(users))))
    if n_val >= len(users):
        raise ValueError("model training set too small for a validation split")
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    tr_u, tr_i = users[tr_idx], items[tr_idx]
    vu, vi, vy = _with_negatives(rng, users[val_idx], items[val_idx], exclude_codes,
                                 n_users, n_nodes, cfg.negatives)
    probe_u, probe_i, probe_y = _with_negatives(rng, tr_u, tr_i, exclude_codes,
                                                n_users, n_nodes, cfg.negatives)

    params = params.copy()
    history = TrainHistory()
    best_val = _mean_loss(params, reprs, vu, vi, vy)
    history.rows.append((0, _mean_loss(params, reprs, probe_u, probe_i, probe_y), best_val))
    best = params.copy()
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = clock() if clock else None
        eu, ei, ey = _with_negatives(rng, tr_u, tr_i, exclude_codes, n_users, n_nodes, cfg.negatives)
        order = rng.permutation(len(eu))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            X = pair_features(reprs, eu[b], ei[b])
            loss, gw, gb = loss_and_grads(params, X, ey[b])
            adam_step(params, gw, gb, cfg)
            losses.append(loss * len(b))
        if clock:
            history.epoch_seconds.append(clock() - t0)
        train_loss = float(np.sum(losses) / len(order))
        val_loss = _mean_loss(params, reprs, vu, vi, vy)
        history.rows.append((epoch, train_loss, val_loss))
        log.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best, stale = val_loss, params.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


def score_items(params: ModelParams, reprs: LayerRepresentations, users, n_users: int,
                batch_users: int = 64) -> np.ndarray:
    """Logits of every item for each given user, shape ``(len(users), M)``."""
    users = np.asarray(users, dtype=np.int64)
    items = reprs.values[n_users:].astype(np.float64)
    M, L, d = items.shape
    flat_items = items.reshape(M * L, d).T
    out = np.empty((len(users), M))
    for s in range(0, len(users), batch_users):
        hu = reprs.values[users[s:s + batch_users]].astype(np.float64)
        B = len(hu)
        grid = (hu.reshape(B * L, d) @ flat_items).reshape(B, L, M, L)
        feats = grid.transpose(0, 2, 1, 3).reshape(B * M, L * L)
        out[s:s + B] = np.atleast_1d(forward(params, feats)).reshape(B, M)
    return out


_CKPT_HEAD = struct.Struct("<4sII")  # magic, version, number of layer sizes


def save_model(params: ModelParams, path) -> None:
    sizes = params.sizes
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, len(sizes)))
        fh.write(np.asarray(sizes, dtype="<u4").tobytes())
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a model checkpoint")
    if len(blob) < _CKPT_HEAD.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n_sizes = _CKPT_HEAD.unpack_from(blob)
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {MODEL_VERSION}")
    off = _CKPT_HEAD.size
    if len(blob) < off + 4 * n_sizes:
        raise TruncatedFileError(f"{path}: layer table truncated")
    sizes = np.frombuffer(blob, dtype="<u4", count=n_sizes, offset=off).astype(int).tolist()
    off += 4 * n_sizes
    need = off + 8 * sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(blob) < need:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, expected {need}")
    if len(blob) > need:
        raise FormatError(f"{path}: {len(blob) - need} trailing bytes")
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(np.frombuffer(blob, dtype="<f8", count=a * b, offset=off).reshape(a, b).copy())
        off += 8 * a * b
        biases.append(np.frombuffer(blob, dtype="<f8", count=b, offset=off).copy())
        off += 8 * b
    return ModelParams(weights, biases)
