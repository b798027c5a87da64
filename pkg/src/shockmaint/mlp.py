"""Small feed-forward ReLU classifier trained with Adam on cross-entropy.

Weights are stored as (inputs, outputs) matrices so a batch forward pass is
``h @ W + b``; the compiled simulator uses the same layout.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

WIDTHS = (256, 128, 128)


class DegenerateDataError(ValueError):
    """Training data cannot identify a classifier (e.g. a single class)."""


@dataclass
class MLP:
    Ws: list[np.ndarray]
    bs: list[np.ndarray]
    mu: np.ndarray
    sd: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.Ws[0].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(W.shape[1] for W in self.Ws)

    def logits(self, X: np.ndarray) -> np.ndarray:
        h = (np.atleast_2d(X) - self.mu) / self.sd
        for W, b in zip(self.Ws[:-1], self.bs[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return h @ self.Ws[-1] + self.bs[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        z = self.logits(X)
        return (z[:, 1] > z[:, 0]).astype(np.int64)

    def kernel_weights(self) -> tuple:
        out = [self.mu, self.sd]
        for W, b in zip(self.Ws, self.bs):
            out += [W, b]
        if len(out) != 10:
            raise ValueError("the compiled simulator expects exactly four layers")
        return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in out)

    # flat binary: magic, n_layers, dims..., mu, sd, then per layer W (row-major) and b
    _MAGIC = b"SMNN0001"

    def to_bytes(self) -> bytes:
        dims = [self.input_dim] + list(self.widths)
        parts = [self._MAGIC, struct.pack("<q", len(self.Ws)), struct.pack(f"<{len(dims)}q", *dims),
                 self.mu.astype("<f8").tobytes(), self.sd.astype("<f8").tobytes()]
        for W, b in zip(self.Ws, self.bs):
            parts += [np.ascontiguousarray(W, dtype="<f8").tobytes(), b.astype("<f8").tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["MLP", int]:
        if buf[offset:offset + 8] != cls._MAGIC:
            raise ValueError("not a network weight block")
        o = offset + 8
        (L,) = struct.unpack_from("<q", buf, o)
        o += 8
        dims = struct.unpack_from(f"<{L + 1}q", buf, o)
        o += 8 * (L + 1)

        def take(n):
            nonlocal o
            a = np.frombuffer(buf, dtype="<f8", count=n, offset=o).astype(np.float64)
            o += 8 * n
            return a

        mu = take(dims[0])
        sd = take(dims[0])
        Ws, bs = [], []
        for i in range(L):
            Ws.append(take(dims[i] * dims[i + 1]).reshape(dims[i], dims[i + 1]))
            bs.append(take(dims[i + 1]))
        return cls(Ws, bs, mu, sd), o


def init_mlp(d: int, rng: np.random.Generator, widths=WIDTHS, n_out: int = 2) -> MLP:
    dims = [d] + list(widths) + [n_out]
    Ws = [rng.standard_normal((a, b)) * math.sqrt(2.0 / a) for a, b in zip(dims[:-1], dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    return MLP(Ws, bs, np.zeros(d), np.ones(d))


def loss_and_grads(net: MLP, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean softmax cross-entropy and its gradients (standardization held fixed)."""
    hs = [(X - net.mu) / net.sd]
    for W, b in zip(net.Ws[:-1], net.bs[:-1]):
        hs.append(np.maximum(hs[-1] @ W + b, 0.0))
    z = hs[-1] @ net.Ws[-1] + net.bs[-1]
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(lse - z[np.arange(n), y]))
    g = np.exp(z - lse[:, None])
    g[np.arange(n), y] -= 1.0
    g /= n
    gW = [None] * len(net.Ws)
    gb = [None] * len(net.Ws)
    for i in range(len(net.Ws) - 1, -1, -1):
        gW[i] = hs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.Ws[i].T) * (hs[i] > 0)
    return loss, gW, gb


@dataclass
class TrainReport:
    epochs: int
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: float = float("nan")
    n_train: int = 0
    n_val: int = 0


def train_classifier(X: np.ndarray, y: np.ndarray, seed: int = 0, widths=WIDTHS, batch_size: int = 64,
                     lr: float = 1e-3, patience: int = 10, max_epochs: int = 200,
                     val_frac: float = 0.1) -> tuple[MLP, TrainReport]:
    """Adam on mini-batches, 90/10 split, early stop on validation loss.

    Returns the weights with the best validation loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] < 2 or len(np.unique(y)) < 2:
        raise DegenerateDataError("training data needs both classes")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(X.shape[0])
    n_val = max(1, int(round(val_frac * X.shape[0])))
    vi, ti = idx[:n_val], idx[n_val:]
    Xt, yt, Xv, yv = X[ti], y[ti], X[vi], y[vi]
    net = init_mlp(X.shape[1], rng, widths)
    net.mu = Xt.mean(axis=0)
    sd = Xt.std(axis=0)
    net.sd = np.where(sd > 1e-12, sd, 1.0)
    params = net.Ws + net.bs
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    rep = TrainReport(0, n_train=len(ti), n_val=n_val)
    best = (math.inf, None)
    bad = 0
    for ep in range(max_epochs):
        order = rng.permutation(len(ti))
        tot = 0.0
        for s in range(0, len(order), batch_size):
            bi = order[s:s + batch_size]
            loss, gW, gb = loss_and_grads(net, Xt[bi], yt[bi])
            if not math.isfinite(loss):
                raise FloatingPointError("training loss diverged")
            tot += loss * len(bi)
            step += 1
            for p, g, a, v in zip(params, gW + gb, m1, m2):
                a *= b1
                a += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= lr * (a / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
        vl, _, _ = loss_and_grads(net, Xv, yv)
        rep.train_loss.append(tot / len(ti))
        rep.val_loss.append(vl)
        rep.epochs = ep + 1
        if vl < best[0] - 1e-12:
            best = (vl, ([W.copy() for W in net.Ws], [b.copy() for b in net.bs]))
            bad = 0
        else:
            bad += 1
            if bad >= patience:
                break
    net.Ws, net.bs = best[1]
    rep.val_accuracy = float(np.mean(net.predict(Xv) == yv))
    return net, rep
