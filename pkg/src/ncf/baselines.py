"""Classical predictors used for comparison.

Branch side: a per-pc two-bit saturating counter, a per-pc history
perceptron, and a register-snapshot MLP.  Address side: a per-load
stride table and a per-load address-correlation (Markov) table.  All of
them run online over a trace: predict first, then learn the outcome.
"""

from dataclasses import dataclass, field

import numpy as np

from .asm import REGISTERS, MASK64
from . import encode


class Bimodal:
    """Two-bit saturating counter per branch pc, initialized weakly taken."""

    def __init__(self, init=2):
        self.init = init
        self.counters = {}

    def predict(self, pc):
        return self.counters.get(pc, self.init) >= 2

    def update(self, pc, taken):
        c = self.counters.get(pc, self.init)
        c = min(c + 1, 3) if taken else max(c - 1, 0)
        self.counters[pc] = c


class Perceptron:
    """Per-pc perceptron over that pc's +/-1 outcome history.

    Training threshold theta = floor(1.93 * h + 14).  Weights start at
    zero and the history at all not-taken; no state is shared between
    pcs.  Updates apply L2 shrink before the +/-1 adjustment, so weights
    drift off the integers.
    """

    def __init__(self, history=64, l2=1e-4):
        self.h = history
        self.l2 = l2
        self.theta = int(np.floor(1.93 * history + 14))
        self.weights = {}
        self.ghrs = {}  # per pc, most recent outcome first

    def _w(self, pc):
        if pc not in self.weights:
            self.weights[pc] = np.zeros(self.h + 1)
        return self.weights[pc]

    def _ghr(self, pc):
        if pc not in self.ghrs:
            self.ghrs[pc] = -np.ones(self.h)
        return self.ghrs[pc]

    def _score(self, pc):
        w = self._w(pc)
        return w[0] + float(w[1:] @ self._ghr(pc))

    def predict(self, pc):
        return self._score(pc) >= 0

    def update(self, pc, taken):
        w = self._w(pc)
        ghr = self._ghr(pc)
        y = self._score(pc)
        predicted = y >= 0
        t = 1.0 if taken else -1.0
        if predicted != taken or abs(y) <= self.theta:
            x = np.concatenate(([1.0], ghr))
            self.weights[pc] = w * (1.0 - self.l2) + t * x
        self.ghrs[pc] = np.concatenate(([t], ghr[:-1]))


class Stride:
    """Per-pc stride table: predict last address plus the most frequent
    stride, most recently seen wins ties.  No table bounds."""

    def __init__(self):
        self.last = {}
        self.counts = {}
        self.recency = {}
        self.tick = 0

    def predict(self, pc):
        if pc not in self.counts or not self.counts[pc]:
            return None
        counts = self.counts[pc]
        best = max(counts, key=lambda s: (counts[s], self.recency[pc][s]))
        return (self.last[pc] + best) & MASK64

    def update(self, pc, addr):
        addr &= MASK64
        self.tick += 1
        if pc in self.last:
            stride = (addr - self.last[pc]) & MASK64
            pc_counts = self.counts.setdefault(pc, {})
            pc_counts[stride] = pc_counts.get(stride, 0) + 1
            self.recency.setdefault(pc, {})[stride] = self.tick
        self.last[pc] = addr


class AddressCorrelation:
    """Per-pc first-order Markov table over load addresses: predict the
    most frequent successor of the current address, most recently seen
    wins ties.  No table bounds."""

    def __init__(self):
        self.last = {}
        self.succ = {}
        self.recency = {}
        self.tick = 0

    def predict(self, pc, addr):
        table = self.succ.get(pc, {}).get(addr & MASK64)
        if not table:
            return None
        rec = self.recency[pc][addr & MASK64]
        return max(table, key=lambda a: (table[a], rec[a]))

    def update(self, pc, addr):
        addr &= MASK64
        self.tick += 1
        if pc in self.last:
            prev = self.last[pc]
            table = self.succ.setdefault(pc, {}).setdefault(prev, {})
            table[addr] = table.get(addr, 0) + 1
            self.recency.setdefault(pc, {}).setdefault(prev, {})[addr] = self.tick
        self.last[pc] = addr


class MlpDiverged(Exception):
    pass


class Mlp:
    """Plain fully-connected net, ReLU hidden layers, one sigmoid output.

    float64 throughout, seeded init, SGD or Adam; raises MlpDiverged on a
    non-finite loss.
    """

    def __init__(self, dims, seed=0, l2=0.0):
        if len(dims) < 2 or dims[-1] != 1:
            raise ValueError("dims must end in a single output")
        self.dims = list(dims)
        self.l2 = l2
        rng = np.random.RandomState(seed)
        self.ws = []
        self.bs = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            bound = np.sqrt(1.0 / fan_in)
            self.ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.bs.append(np.zeros(fan_out))

    def _forward(self, x):
        acts = [x]
        for i, (w, b) in enumerate(zip(self.ws, self.bs)):
            z = acts[-1] @ w.T + b
            acts.append(np.maximum(z, 0.0) if i < len(self.ws) - 1 else z)
        return acts

    def predict_proba(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        logits = self._forward(x)[-1][:, 0]
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-logits))

    def _grads(self, x, y):
        acts = self._forward(x)
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp(-acts[-1][:, 0]))
        eps = 1e-12
        loss = float(-np.mean(
            y * np.log(np.clip(p, eps, 1)) + (1 - y) * np.log(np.clip(1 - p, eps, 1))))
        delta = ((p - y) / len(y))[:, None]
        gw, gb = [], []
        for i in range(len(self.ws) - 1, -1, -1):
            gw.append(delta.T @ acts[i] + self.l2 * self.ws[i])
            gb.append(delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.ws[i]) * (acts[i] > 0)
        return loss, gw[::-1], gb[::-1]

    def fit(self, x, y, epochs=100, lr=0.01, batch_size=32, seed=0,
            optimizer="adam"):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.RandomState(seed)
        if optimizer == "adam":
            m_w = [np.zeros_like(w) for w in self.ws]
            v_w = [np.zeros_like(w) for w in self.ws]
            m_b = [np.zeros_like(b) for b in self.bs]
            v_b = [np.zeros_like(b) for b in self.bs]
            beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        history = []
        for _ in range(epochs):
            order = rng.permutation(len(x))
            total = 0.0
            for lo in range(0, len(x), batch_size):
                idx = order[lo:lo + batch_size]
                loss, gw, gb = self._grads(x[idx], y[idx])
                if not np.isfinite(loss):
                    raise MlpDiverged("non-finite loss")
                total += loss * len(idx)
                step += 1
                for i in range(len(self.ws)):
                    if optimizer == "adam":
                        for g, p, m, v in ((gw[i], self.ws, m_w, v_w),
                                           (gb[i], self.bs, m_b, v_b)):
                            m[i] = beta1 * m[i] + (1 - beta1) * g
                            v[i] = beta2 * v[i] + (1 - beta2) * g * g
                            m_hat = m[i] / (1 - beta1 ** step)
                            v_hat = v[i] / (1 - beta2 ** step)
                            p[i] = p[i] - lr * m_hat / (np.sqrt(v_hat) + eps)
                    else:
                        self.ws[i] -= lr * gw[i]
                        self.bs[i] -= lr * gb[i]
            history.append(total / len(x))
        return history


def branch_snapshot_features(event):
    """Register-file features for the snapshot MLP: every register binary
    encoded, concatenated in canonical order."""
    enc = encode.Binary(64)
    parts = [encode.encode_value(enc, event.regs[name]) for name in REGISTERS]
    return np.concatenate(parts)


def make_branch_mlp(seed=0, l2=0.0):
    """Snapshot MLP: two hidden layers the same size as the input."""
    width = len(REGISTERS) * encode.feature_width(encode.Binary(64))
    return Mlp([width, width, width, 1], seed=seed, l2=l2)


class LinearClassifier:
    """One-vs-rest linear classifier with squared hinge loss and L2, the
    standard linear-SVM objective, fit full batch with Adam."""

    def __init__(self, n_features, n_classes, l2=0.01, seed=0):
        self.l2 = l2
        rng = np.random.RandomState(seed)
        bound = np.sqrt(1.0 / max(n_features, 1))
        self.w = rng.uniform(-bound, bound, size=(n_classes, n_features))
        self.b = np.zeros(n_classes)

    def decision(self, x):
        return np.atleast_2d(x) @ self.w.T + self.b

    def predict(self, x):
        return np.argmax(self.decision(x), axis=1)

    def fit(self, x, labels, epochs=500, lr=0.05):
        x = np.asarray(x, dtype=np.float64)
        labels = np.asarray(labels)
        signs = np.where(labels[:, None] == np.arange(len(self.b))[None, :],
                         1.0, -1.0)
        m_w, v_w = np.zeros_like(self.w), np.zeros_like(self.w)
        m_b, v_b = np.zeros_like(self.b), np.zeros_like(self.b)
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        for step in range(1, epochs + 1):
            margin = np.maximum(0.0, 1.0 - signs * self.decision(x))
            gscore = -2.0 * signs * margin / len(x)
            gw = gscore.T @ x + self.l2 * self.w
            gb = gscore.sum(axis=0)
            for g, p, m, v in ((gw, "w", m_w, v_w), (gb, "b", m_b, v_b)):
                m[...] = beta1 * m + (1 - beta1) * g
                v[...] = beta2 * v + (1 - beta2) * g * g
                m_hat = m / (1 - beta1 ** step)
                v_hat = v / (1 - beta2 ** step)
                setattr(self, p, getattr(self, p) - lr * m_hat / (np.sqrt(v_hat) + eps))
        return self
