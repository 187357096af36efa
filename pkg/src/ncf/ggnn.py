"""Gated graph network over fused program graphs, with exact gradients.

Initial node states are learned projections of each node's encoded value
plus a learned per-sub-type vector; instruction nodes start at zero.
After T propagation steps (see kernels), two heads read selected nodes:

- branch: one logistic unit on the conditional branch's instruction
  node; predicted taken at probability >= 0.5.
- next address: 64 independent logistic units on a load's memory-operand
  node, one per address bit, most significant first; each bit predicted
  1 at probability >= 0.5.

Training minimizes summed cross entropy over the labeled nodes of each
batch with Adam.  Every batch holds events of a single program graph:
the graph's edges are replicated per event so the whole batch runs as
one big disconnected graph.  All randomness flows through seeds and all
floats are float64, so identical configurations reproduce bit-for-bit.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

from . import encode
from .graph import SUBTYPES, assign_dynamic_values, packed_edges

N_EDGE_TYPES = 6
ADDR_BITS = 64


class TrainingDiverged(Exception):
    pass


class CheckpointError(Exception):
    pass


# ----------------------------------------------------------------- parameters

_MATRIX_NAMES = ("embed.proj", "embed.sub", "msg.A",
                 "gru.Wz", "gru.Uz", "gru.Wr", "gru.Ur", "gru.Wc", "gru.Uc",
                 "head.branch.w", "head.prefetch.W")


class Params:
    """Named parameter arrays in fixed order."""

    def __init__(self, arrays):
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = value

    def names(self):
        return list(self.arrays)

    def copy(self):
        return Params({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self):
        return Params({k: np.zeros_like(v) for k, v in self.arrays.items()})

    @classmethod
    def init(cls, seed, d=64, feat_width=65, bits=ADDR_BITS):
        """Uniform(-sqrt(1/d), sqrt(1/d)) matrices, zero biases."""
        rng = np.random.RandomState(seed)
        bound = np.sqrt(1.0 / d)
        shapes = {
            "embed.proj": (d, feat_width),
            "embed.sub": (len(SUBTYPES), d),
            "msg.A": (N_EDGE_TYPES, d, d),
            "msg.b": (N_EDGE_TYPES, d),
            "gru.Wz": (d, d), "gru.Uz": (d, d), "gru.bz": (d,),
            "gru.Wr": (d, d), "gru.Ur": (d, d), "gru.br": (d,),
            "gru.Wc": (d, d), "gru.Uc": (d, d), "gru.bc": (d,),
            "head.branch.w": (d,), "head.branch.b": (1,),
            "head.prefetch.W": (bits, d), "head.prefetch.b": (bits,),
        }
        arrays = {}
        for name, shape in shapes.items():
            if name in _MATRIX_NAMES:
                arrays[name] = rng.uniform(-bound, bound, size=shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(arrays)

    @property
    def d(self):
        return self["gru.Wz"].shape[0]

    @property
    def feat_width(self):
        return self["embed.proj"].shape[1]


_MAGIC = b"NCFCKPT1"


def save_params(params, path):
    """Binary checkpoint: little-endian, name-tagged float64 arrays."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params.arrays)))
        for name, arr in params.arrays.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = 8
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off)
        off += 8 * size
        arrays[name] = arr.reshape(shape).astype(np.float64)
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    return Params(arrays)


# ------------------------------------------------------------------- dataset

@dataclass(frozen=True)
class CompiledGraph:
    graph: object
    src: np.ndarray
    dst: np.ndarray
    ptr: np.ndarray
    sub_ids: np.ndarray  # per node, index into SUBTYPES (0 for instruction)
    valued: np.ndarray  # per node, False for instruction nodes

    @property
    def n_nodes(self):
        return len(self.sub_ids)


def compile_graph(graph):
    src, dst, ptr = packed_edges(graph)
    sub_ids = np.zeros(len(graph.nodes), dtype=np.int64)
    valued = np.zeros(len(graph.nodes), dtype=bool)
    for node in graph.nodes:
        if node.major != "instruction":
            sub_ids[node.idx] = SUBTYPES.index(node.sub)
            valued[node.idx] = True
    return CompiledGraph(graph=graph, src=src, dst=dst, ptr=ptr,
                         sub_ids=sub_ids, valued=valued)


def addr_bits(addr):
    """64 float bits of an address, most significant first."""
    shifts = np.arange(ADDR_BITS - 1, -1, -1, dtype=np.uint64)
    return ((np.uint64(addr) >> shifts) & np.uint64(1)).astype(np.float64)


def bits_to_addr(bits):
    """Inverse of addr_bits for 0/1 vectors."""
    value = 0
    for b in np.asarray(bits).astype(np.uint64):
        value = (value << 1) | int(b)
    return value


@dataclass
class Dataset:
    """Labeled samples over one program graph.

    One sample per labeled event: its re-valued node table plus the task
    node and label.  kind 0 = branch (label y), kind 1 = next address
    (label bits).  weights are per-sample loss masks.
    """

    cg: CompiledGraph
    values: np.ndarray  # (B, N) uint64
    missing: np.ndarray  # (B, N) bool
    kinds: np.ndarray  # (B,) int8
    nodes: np.ndarray  # (B,) int64 task node ids
    y: np.ndarray  # (B,) float64
    bits: np.ndarray  # (B, 64) float64
    seqs: np.ndarray  # (B,) int64 source event seq numbers
    weights: np.ndarray  # (B,) float64

    def __len__(self):
        return len(self.kinds)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.cg, self.values[idx], self.missing[idx],
                       self.kinds[idx], self.nodes[idx], self.y[idx],
                       self.bits[idx], self.seqs[idx], self.weights[idx])


def compile_dataset(graph, events, tasks=("branch", "prefetch")):
    """Events -> samples.  Branch events need a branch task node at their
    pc; load events contribute only when a next-address label exists."""
    cg = compile_graph(graph)
    n = cg.n_nodes
    rows = []
    for ev in events:
        if ev.kind == "branch" and "branch" in tasks:
            node = graph.branch_task_nodes[ev.pc]
            rows.append((ev, 0, node, float(ev.taken), np.zeros(ADDR_BITS)))
        elif ev.kind == "load" and "prefetch" in tasks and ev.next_present:
            node = graph.prefetch_task_nodes[ev.pc]
            rows.append((ev, 1, node, 0.0, addr_bits(ev.next_addr)))
    b = len(rows)
    values = np.zeros((b, n), dtype=np.uint64)
    missing = np.zeros((b, n), dtype=bool)
    kinds = np.zeros(b, dtype=np.int8)
    nodes = np.zeros(b, dtype=np.int64)
    y = np.zeros(b)
    bits = np.zeros((b, ADDR_BITS))
    seqs = np.zeros(b, dtype=np.int64)
    for i, (ev, kind, node, label, label_bits) in enumerate(rows):
        vg = assign_dynamic_values(graph, ev)
        values[i] = vg.values
        missing[i] = vg.missing
        kinds[i] = kind
        nodes[i] = node
        y[i] = label
        bits[i] = label_bits
        seqs[i] = ev.seq
    return Dataset(cg=cg, values=values, missing=missing, kinds=kinds,
                   nodes=nodes, y=y, bits=bits, seqs=seqs,
                   weights=np.ones(b))


def fit_encoding(name, datasets, bits=64):
    """Build the value encoding; scales/vocabularies come from training
    values only (missing slots excluded)."""
    if name == "binary":
        return encode.Binary(bits)
    observed = []
    for ds in datasets:
        mask = ds.cg.valued[None, :] & ~ds.missing
        observed.extend(int(v) for v in ds.values[mask].ravel())
    if name == "scalar":
        return encode.scale_from_values(observed)
    if name == "categorical":
        return encode.vocab_from_values(observed)
    raise ValueError(f"unknown encoding {name!r}")


# ------------------------------------------------------------ forward/backward

def _tile_edges(cg, b):
    """Replicate the graph's edges b times with node-id offsets, keeping
    edge-type grouping."""
    n = cg.n_nodes
    offsets = (np.arange(b, dtype=np.int64) * n)[:, None]
    src_parts, dst_parts, ptr = [], [], [0]
    for k in range(N_EDGE_TYPES):
        lo, hi = cg.ptr[k], cg.ptr[k + 1]
        src_parts.append((cg.src[lo:hi][None, :] + offsets).ravel())
        dst_parts.append((cg.dst[lo:hi][None, :] + offsets).ravel())
        ptr.append(ptr[-1] + (hi - lo) * b)
    return (np.concatenate(src_parts), np.concatenate(dst_parts),
            np.asarray(ptr, dtype=np.int64))


def embed_nodes(params, enc, values_flat, missing_flat, valued_flat, sub_flat):
    """Initial states: projection of encoded values plus sub-type vector;
    exact zeros for instruction nodes.  Also returns the feature matrix
    for the backward pass."""
    feats = encode.encode_batch(enc, values_flat, missing_flat)
    x = feats @ params["embed.proj"].T + params["embed.sub"][sub_flat]
    x[~valued_flat] = 0.0
    return x, feats


def _gru_args(params):
    return (params["msg.A"], params["msg.b"],
            params["gru.Wz"], params["gru.Uz"], params["gru.bz"],
            params["gru.Wr"], params["gru.Ur"], params["gru.br"],
            params["gru.Wc"], params["gru.Uc"], params["gru.bc"])


def propagate(params, cg, x, steps):
    """Final node states after `steps` rounds on a single graph."""
    from .kernels import propagate_forward
    cache = propagate_forward(x, cg.src, cg.dst, cg.ptr, *_gru_args(params),
                              steps)
    return cache[0][steps]


def _forward_batch(params, batch, enc, steps):
    from .kernels import propagate_forward
    b, n = batch.values.shape
    values_flat = batch.values.reshape(-1)
    missing_flat = batch.missing.reshape(-1)
    valued_flat = np.tile(batch.cg.valued, b)
    sub_flat = np.tile(batch.cg.sub_ids, b)
    x, feats = embed_nodes(params, enc, values_flat, missing_flat,
                           valued_flat, sub_flat)
    src, dst, ptr = _tile_edges(batch.cg, b)
    cache = propagate_forward(x, src, dst, ptr, *_gru_args(params), steps)
    h_final = cache[0][steps]
    rows = np.arange(b, dtype=np.int64) * n + batch.nodes
    return h_final, rows, (cache, feats, valued_flat, sub_flat, src, dst, ptr)


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _bce(p, y, eps=1e-12):
    p = np.clip(p, eps, 1.0 - eps)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def batch_loss(params, batch, enc, steps):
    """Summed cross entropy over the batch's labeled nodes."""
    h, rows, _ = _forward_batch(params, batch, enc, steps)
    return _loss_from_states(params, batch, h, rows)[0]


def _loss_from_states(params, batch, h, rows):
    is_b = batch.kinds == 0
    is_p = batch.kinds == 1
    loss = 0.0
    p_branch = None
    p_bits = None
    if is_b.any():
        logits = h[rows[is_b]] @ params["head.branch.w"] + params["head.branch.b"][0]
        p_branch = _sigmoid(logits)
        loss += float((_bce(p_branch, batch.y[is_b]) * batch.weights[is_b]).sum())
    if is_p.any():
        logits = h[rows[is_p]] @ params["head.prefetch.W"].T + params["head.prefetch.b"]
        p_bits = _sigmoid(logits)
        per = _bce(p_bits, batch.bits[is_p]).sum(axis=1)
        loss += float((per * batch.weights[is_p]).sum())
    return loss, p_branch, p_bits, is_b, is_p


def loss_and_grads(params, batch, enc, steps):
    """Loss plus exact gradients for every parameter, and d(loss)/d(x)."""
    from .kernels import propagate_backward
    h, rows, ctx = _forward_batch(params, batch, enc, steps)
    cache, feats, valued_flat, sub_flat, src, dst, ptr = ctx
    loss, p_branch, p_bits, is_b, is_p = _loss_from_states(params, batch, h, rows)

    grads = params.zeros_like()
    dh = np.zeros_like(h)
    if is_b.any():
        d_logit = (p_branch - batch.y[is_b]) * batch.weights[is_b]
        hb = h[rows[is_b]]
        grads["head.branch.w"] += d_logit @ hb
        grads["head.branch.b"] += d_logit.sum(keepdims=True)
        np.add.at(dh, rows[is_b], d_logit[:, None] * params["head.branch.w"])
    if is_p.any():
        d_logits = (p_bits - batch.bits[is_p]) * batch.weights[is_p][:, None]
        hp = h[rows[is_p]]
        grads["head.prefetch.W"] += d_logits.T @ hp
        grads["head.prefetch.b"] += d_logits.sum(axis=0)
        np.add.at(dh, rows[is_p], d_logits @ params["head.prefetch.W"])

    out = propagate_backward(dh, cache, src, dst, ptr, *_gru_args(params))
    (dx, dA, dAb, dWz, dUz, dbz, dWr, dUr, dbr, dWc, dUc, dbc) = out
    grads["msg.A"] += dA
    grads["msg.b"] += dAb
    grads["gru.Wz"] += dWz
    grads["gru.Uz"] += dUz
    grads["gru.bz"] += dbz
    grads["gru.Wr"] += dWr
    grads["gru.Ur"] += dUr
    grads["gru.br"] += dbr
    grads["gru.Wc"] += dWc
    grads["gru.Uc"] += dUc
    grads["gru.bc"] += dbc

    dx = dx.copy()
    dx[~valued_flat] = 0.0  # instruction nodes are pinned to zero
    grads["embed.proj"] += dx[valued_flat].T @ feats[valued_flat]
    np.add.at(grads["embed.sub"], sub_flat[valued_flat], dx[valued_flat])
    return loss, grads, dx


# ------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    steps: int = 5
    d: int = 64
    lr: float = 0.01
    head_lr: float = 0.0  # 0 means "same as lr"
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    encoding: str = "binary"
    bits: int = 64
    tasks: tuple = ("branch", "prefetch")


@dataclass
class TrainResult:
    params: Params
    enc: object
    config: TrainConfig
    history: list = field(default_factory=list)


_HEAD_PARAMS = frozenset(
    ("head.branch.w", "head.branch.b", "head.prefetch.W", "head.prefetch.b"))


def train(datasets, config):
    """Adam over per-graph batches.  Deterministic for a fixed config and
    seed; raises TrainingDiverged on a non-finite loss.

    Head weights start at zero: with random heads the cheapest descent
    direction on near-constant label mixes is to saturate the recurrent
    trunk into ignoring its inputs, which is irreversible.  Zero heads
    make the trunk gradient-silent until the heads have locked onto the
    label-correlated part of the initial representation.  head_lr > lr
    (when set) keeps that race winnable on small datasets."""
    datasets = [ds for ds in datasets if len(ds)]
    if not datasets:
        raise ValueError("no labeled samples to train on")
    enc = fit_encoding(config.encoding, datasets, bits=config.bits)
    params = Params.init(config.seed, d=config.d,
                         feat_width=encode.feature_width(enc))
    params["head.branch.w"][:] = 0.0
    params["head.prefetch.W"][:] = 0.0
    head_lr = config.head_lr if config.head_lr > 0 else config.lr
    m_state = params.zeros_like()
    v_state = params.zeros_like()
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    rng = np.random.RandomState(config.seed + 1)
    history = []
    for _ in range(config.epochs):
        batches = []
        for d_i, ds in enumerate(datasets):
            order = rng.permutation(len(ds))
            for lo in range(0, len(ds), config.batch_size):
                batches.append((d_i, order[lo:lo + config.batch_size]))
        rng.shuffle(batches)
        total, count = 0.0, 0
        for d_i, idx in batches:
            batch = datasets[d_i].subset(idx)
            loss, grads, _ = loss_and_grads(params, batch, enc, config.steps)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            total += loss
            count += len(batch)
            scale = 1.0 / max(len(batch), 1)
            step += 1
            for name in params.names():
                g = grads[name] * scale
                if config.l2:
                    g = g + config.l2 * params[name]
                m_state[name] = beta1 * m_state[name] + (1 - beta1) * g
                v_state[name] = beta2 * v_state[name] + (1 - beta2) * g * g
                m_hat = m_state[name] / (1 - beta1 ** step)
                v_hat = v_state[name] / (1 - beta2 ** step)
                lr = head_lr if name in _HEAD_PARAMS else config.lr
                params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
        history.append(total / max(count, 1))
    return TrainResult(params=params, enc=enc, config=config, history=history)


# ----------------------------------------------------------------- prediction

def predict_dataset(params, dataset, enc, steps, chunk=512):
    """Per-sample predictions: branch probabilities and reconstructed
    64-bit next addresses (bit >= 0.5 reads as 1)."""
    b = len(dataset)
    probs = np.zeros(b)
    addrs = np.zeros(b, dtype=np.uint64)
    for lo in range(0, b, chunk):
        sub = dataset.subset(np.arange(lo, min(lo + chunk, b)))
        h, rows, _ = _forward_batch(params, sub, enc, steps)
        is_b = sub.kinds == 0
        is_p = sub.kinds == 1
        if is_b.any():
            logits = h[rows[is_b]] @ params["head.branch.w"] + params["head.branch.b"][0]
            probs[lo:lo + len(sub)][is_b] = _sigmoid(logits)
        if is_p.any():
            logits = h[rows[is_p]] @ params["head.prefetch.W"].T + params["head.prefetch.b"]
            bits = (_sigmoid(logits) >= 0.5).astype(np.uint64)
            shifts = np.arange(ADDR_BITS - 1, -1, -1, dtype=np.uint64)
            vals = (bits << shifts[None, :]).sum(axis=1, dtype=np.uint64)
            addrs[lo:lo + len(sub)][is_p] = vals
    return probs, addrs


def export_embedding(params, graph, events, enc, steps, chunk=256):
    """Whole-program embedding: final node states averaged over nodes,
    then over events."""
    from .kernels import propagate_forward
    events = list(events)
    if not events:
        raise ValueError("need at least one event to embed")
    cg = compile_graph(graph)
    n = cg.n_nodes
    total = np.zeros(params.d)
    for lo in range(0, len(events), chunk):
        evs = events[lo:lo + chunk]
        b = len(evs)
        values = np.zeros((b, n), dtype=np.uint64)
        missing = np.zeros((b, n), dtype=bool)
        for i, ev in enumerate(evs):
            vg = assign_dynamic_values(graph, ev)
            values[i] = vg.values
            missing[i] = vg.missing
        x, _ = embed_nodes(params, enc, values.reshape(-1),
                           missing.reshape(-1), np.tile(cg.valued, b),
                           np.tile(cg.sub_ids, b))
        src, dst, ptr = _tile_edges(cg, b)
        cache = propagate_forward(x, src, dst, ptr, *_gru_args(params), steps)
        h = cache[0][steps].reshape(b, n, -1)
        total += h.mean(axis=1).sum(axis=0)
    return total / len(events)
