"""Message-propagation kernels, in two interchangeable implementations.

The recurrence, per step, over K edge types:

    m[v]  = sum over k, over edges (u, v) of type k:  h[u] @ A[k].T + Ab[k]
    z     = sigmoid(m @ Wz.T + h @ Uz.T + bz)
    r     = sigmoid(m @ Wr.T + h @ Ur.T + br)
    c     = tanh(m @ Wc.T + (r * h) @ Uc.T + bc)
    h'    = (1 - z) * h + z * c

Nodes without incoming edges of a type contribute nothing for it; a node
with no incoming edges at all sees a zero message.  Edges arrive packed:
src/dst index arrays with ptr[k]:ptr[k+1] delimiting type k, so edge
order (and therefore accumulation order) is fixed and runs reproduce
bit-for-bit within a backend.

The numba path is the default; set NCF_NO_NUMBA=1 to force the plain
numpy path (np.add.at scatter).  Both produce the same numbers and both
keep the full per-step cache needed for the exact backward pass.
"""

import os
import time

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but degrade anyway
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def use_numba():
    return _HAVE_NUMBA and not os.environ.get("NCF_NO_NUMBA")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------- numpy path

def _forward_np(X, src, dst, ptr, A, Ab, Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc, T):
    n, d = X.shape
    k_types = A.shape[0]
    Hs = np.zeros((T + 1, n, d))
    Ms = np.zeros((T, n, d))
    Zs = np.zeros((T, n, d))
    Rs = np.zeros((T, n, d))
    Cs = np.zeros((T, n, d))
    Hs[0] = X
    h = X
    for t in range(T):
        m = np.zeros((n, d))
        for k in range(k_types):
            lo, hi = ptr[k], ptr[k + 1]
            if lo == hi:
                continue
            proj = h @ A[k].T
            np.add.at(m, dst[lo:hi], proj[src[lo:hi]] + Ab[k])
        z = _sigmoid(m @ Wz.T + h @ Uz.T + bz)
        r = _sigmoid(m @ Wr.T + h @ Ur.T + br)
        c = np.tanh(m @ Wc.T + (r * h) @ Uc.T + bc)
        h = (1.0 - z) * h + z * c
        Ms[t], Zs[t], Rs[t], Cs[t], Hs[t + 1] = m, z, r, c, h
    return Hs, Ms, Zs, Rs, Cs


def _backward_np(dH, Hs, Ms, Zs, Rs, Cs, src, dst, ptr,
                 A, Ab, Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc):
    T, n, d = Ms.shape
    k_types = A.shape[0]
    dA = np.zeros_like(A)
    dAb = np.zeros_like(Ab)
    dWz, dUz, dbz = np.zeros_like(Wz), np.zeros_like(Uz), np.zeros_like(bz)
    dWr, dUr, dbr = np.zeros_like(Wr), np.zeros_like(Ur), np.zeros_like(br)
    dWc, dUc, dbc = np.zeros_like(Wc), np.zeros_like(Uc), np.zeros_like(bc)
    dh = dH.copy()
    for t in range(T - 1, -1, -1):
        h, m, z, r, c = Hs[t], Ms[t], Zs[t], Rs[t], Cs[t]
        dz = dh * (c - h)
        dc = dh * z
        dh = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        dWc += dac.T @ m
        dUc += dac.T @ (r * h)
        dbc += dac.sum(axis=0)
        dm = dac @ Wc
        drh = dac @ Uc
        dh += drh * r
        dar = (drh * h) * r * (1.0 - r)
        dWr += dar.T @ m
        dUr += dar.T @ h
        dbr += dar.sum(axis=0)
        dm += dar @ Wr
        dh += dar @ Ur
        daz = dz * z * (1.0 - z)
        dWz += daz.T @ m
        dUz += daz.T @ h
        dbz += daz.sum(axis=0)
        dm += daz @ Wz
        dh += daz @ Uz
        for k in range(k_types):
            lo, hi = ptr[k], ptr[k + 1]
            if lo == hi:
                continue
            dproj = np.zeros((n, d))
            np.add.at(dproj, src[lo:hi], dm[dst[lo:hi]])
            dAb[k] += dm[dst[lo:hi]].sum(axis=0)
            dA[k] += dproj.T @ h
            dh += dproj @ A[k]
    return (dh, dA, dAb, dWz, dUz, dbz, dWr, dUr, dbr, dWc, dUc, dbc)


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _forward_nb(X, src, dst, ptr, A, Ab, Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc, T):
    n, d = X.shape
    k_types = A.shape[0]
    Hs = np.zeros((T + 1, n, d))
    Ms = np.zeros((T, n, d))
    Zs = np.zeros((T, n, d))
    Rs = np.zeros((T, n, d))
    Cs = np.zeros((T, n, d))
    Hs[0] = X
    h = X.copy()
    for t in range(T):
        m = np.zeros((n, d))
        for k in range(k_types):
            lo, hi = ptr[k], ptr[k + 1]
            if lo == hi:
                continue
            proj = np.dot(h, A[k].T)
            for e in range(lo, hi):
                u = src[e]
                v = dst[e]
                for j in range(d):
                    m[v, j] += proj[u, j] + Ab[k, j]
        z = 1.0 / (1.0 + np.exp(-(np.dot(m, Wz.T) + np.dot(h, Uz.T) + bz)))
        r = 1.0 / (1.0 + np.exp(-(np.dot(m, Wr.T) + np.dot(h, Ur.T) + br)))
        c = np.tanh(np.dot(m, Wc.T) + np.dot(r * h, Uc.T) + bc)
        h = (1.0 - z) * h + z * c
        Ms[t] = m
        Zs[t] = z
        Rs[t] = r
        Cs[t] = c
        Hs[t + 1] = h
    return Hs, Ms, Zs, Rs, Cs


@njit(cache=True)
def _backward_nb(dH, Hs, Ms, Zs, Rs, Cs, src, dst, ptr,
                 A, Ab, Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc):
    T, n, d = Ms.shape
    k_types = A.shape[0]
    dA = np.zeros_like(A)
    dAb = np.zeros_like(Ab)
    dWz = np.zeros_like(Wz)
    dUz = np.zeros_like(Uz)
    dbz = np.zeros_like(bz)
    dWr = np.zeros_like(Wr)
    dUr = np.zeros_like(Ur)
    dbr = np.zeros_like(br)
    dWc = np.zeros_like(Wc)
    dUc = np.zeros_like(Uc)
    dbc = np.zeros_like(bc)
    dh = dH.copy()
    for t in range(T - 1, -1, -1):
        h = Hs[t]
        m = Ms[t]
        z = Zs[t]
        r = Rs[t]
        c = Cs[t]
        dz = dh * (c - h)
        dc = dh * z
        dh = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        dWc += np.dot(dac.T, m)
        dUc += np.dot(dac.T, r * h)
        dbc += dac.sum(axis=0)
        dm = np.dot(dac, Wc)
        drh = np.dot(dac, Uc)
        dh += drh * r
        dar = (drh * h) * r * (1.0 - r)
        dWr += np.dot(dar.T, m)
        dUr += np.dot(dar.T, h)
        dbr += dar.sum(axis=0)
        dm += np.dot(dar, Wr)
        dh += np.dot(dar, Ur)
        daz = dz * z * (1.0 - z)
        dWz += np.dot(daz.T, m)
        dUz += np.dot(daz.T, h)
        dbz += daz.sum(axis=0)
        dm += np.dot(daz, Wz)
        dh += np.dot(daz, Uz)
        for k in range(k_types):
            lo, hi = ptr[k], ptr[k + 1]
            if lo == hi:
                continue
            dproj = np.zeros((n, d))
            for e in range(lo, hi):
                u = src[e]
                v = dst[e]
                for j in range(d):
                    dproj[u, j] += dm[v, j]
                    dAb[k, j] += dm[v, j]
            dA[k] += np.dot(dproj.T, h)
            dh += np.dot(dproj, A[k])
    return (dh, dA, dAb, dWz, dUz, dbz, dWr, dUr, dbr, dWc, dUc, dbc)


# ----------------------------------------------------------------- dispatch

def propagate_forward(X, src, dst, ptr, A, Ab, Wz, Uz, bz, Wr, Ur, br,
                      Wc, Uc, bc, T):
    """Run T propagation steps.  Returns (Hs, Ms, Zs, Rs, Cs) where Hs has
    T+1 entries (initial states first) and the rest cache per-step
    intermediates for the backward pass."""
    args = (np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(src, dtype=np.int64),
            np.ascontiguousarray(dst, dtype=np.int64),
            np.ascontiguousarray(ptr, dtype=np.int64),
            np.ascontiguousarray(A, dtype=np.float64),
            np.ascontiguousarray(Ab, dtype=np.float64),
            np.ascontiguousarray(Wz, dtype=np.float64),
            np.ascontiguousarray(Uz, dtype=np.float64),
            np.ascontiguousarray(bz, dtype=np.float64),
            np.ascontiguousarray(Wr, dtype=np.float64),
            np.ascontiguousarray(Ur, dtype=np.float64),
            np.ascontiguousarray(br, dtype=np.float64),
            np.ascontiguousarray(Wc, dtype=np.float64),
            np.ascontiguousarray(Uc, dtype=np.float64),
            np.ascontiguousarray(bc, dtype=np.float64),
            int(T))
    fn = _forward_nb if use_numba() else _forward_np
    return fn(*args)


def propagate_backward(dH, cache, src, dst, ptr, A, Ab, Wz, Uz, bz,
                       Wr, Ur, br, Wc, Uc, bc):
    """Exact gradients for propagate_forward.  `cache` is its return value.
    Returns (dX, dA, dAb, dWz, dUz, dbz, dWr, dUr, dbr, dWc, dUc, dbc)."""
    Hs, Ms, Zs, Rs, Cs = cache
    args = (np.ascontiguousarray(dH, dtype=np.float64),
            Hs, Ms, Zs, Rs, Cs,
            np.ascontiguousarray(src, dtype=np.int64),
            np.ascontiguousarray(dst, dtype=np.int64),
            np.ascontiguousarray(ptr, dtype=np.int64),
            np.ascontiguousarray(A, dtype=np.float64),
            np.ascontiguousarray(Ab, dtype=np.float64),
            np.ascontiguousarray(Wz, dtype=np.float64),
            np.ascontiguousarray(Uz, dtype=np.float64),
            np.ascontiguousarray(bz, dtype=np.float64),
            np.ascontiguousarray(Wr, dtype=np.float64),
            np.ascontiguousarray(Ur, dtype=np.float64),
            np.ascontiguousarray(br, dtype=np.float64),
            np.ascontiguousarray(Wc, dtype=np.float64),
            np.ascontiguousarray(Uc, dtype=np.float64),
            np.ascontiguousarray(bc, dtype=np.float64))
    fn = _backward_nb if use_numba() else _backward_np
    return fn(*args)


def benchmark(n_nodes=2000, edges_per_type=4000, d=64, k_types=6, T=5,
              repeats=3, seed=0):
    """Time forward+backward on a random graph for both backends."""
    rng = np.random.RandomState(seed)
    X = rng.randn(n_nodes, d)
    src = rng.randint(0, n_nodes, size=edges_per_type * k_types).astype(np.int64)
    dst = rng.randint(0, n_nodes, size=edges_per_type * k_types).astype(np.int64)
    ptr = (np.arange(k_types + 1) * edges_per_type).astype(np.int64)
    A = rng.randn(k_types, d, d) * 0.1
    Ab = rng.randn(k_types, d) * 0.1
    mats = [rng.randn(d, d) * 0.1 for _ in range(3)]
    vecs = [np.zeros(d) for _ in range(3)]
    params = (A, Ab, mats[0], mats[0].T.copy(), vecs[0],
              mats[1], mats[1].T.copy(), vecs[1],
              mats[2], mats[2].T.copy(), vecs[2])
    dH = rng.randn(n_nodes, d)

    def run_once():
        cache = propagate_forward(X, src, dst, ptr, *params, T)
        propagate_backward(dH, cache, src, dst, ptr, *params)

    timings = {}
    saved = os.environ.get("NCF_NO_NUMBA")
    for label, flag in (("numba", ""), ("numpy", "1")):
        if label == "numba" and not _HAVE_NUMBA:
            continue
        os.environ["NCF_NO_NUMBA"] = flag
        run_once()  # warm up (jit compile / cache touch)
        best = min(_timed(run_once) for _ in range(repeats))
        timings[label] = best
    if saved is None:
        os.environ.pop("NCF_NO_NUMBA", None)
    else:
        os.environ["NCF_NO_NUMBA"] = saved
    return timings


def _timed(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start
