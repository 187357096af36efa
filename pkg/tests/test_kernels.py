"""Propagation kernels: backend agreement, decay, equivariance, gradients."""

import numpy as np
import pytest

from ncf import kernels


def random_problem(seed, n=12, d=6, per_type=8, steps=3):
    rng = np.random.RandomState(seed)
    x = rng.randn(n, d)
    A = rng.randn(6, d, d) * 0.4
    Ab = rng.randn(6, d) * 0.1
    Wz, Uz, Wr, Ur, Wc, Uc = (rng.randn(d, d) * 0.4 for _ in range(6))
    bz, br, bc = (rng.randn(d) * 0.1 for _ in range(3))
    src_parts, dst_parts, ptr = [], [], [0]
    for _ in range(6):
        m = rng.randint(0, per_type + 1)
        src_parts.append(rng.randint(0, n, size=m))
        dst_parts.append(rng.randint(0, n, size=m))
        ptr.append(ptr[-1] + m)
    src = np.concatenate(src_parts).astype(np.int64)
    dst = np.concatenate(dst_parts).astype(np.int64)
    ptr = np.asarray(ptr, dtype=np.int64)
    args = (x, src, dst, ptr, A, Ab, Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc)
    return args, steps


def run_both(args, steps, monkeypatch):
    monkeypatch.setenv("NCF_NO_NUMBA", "1")
    plain = kernels.propagate_forward(*args, steps)
    monkeypatch.delenv("NCF_NO_NUMBA")
    fast = kernels.propagate_forward(*args, steps)
    return plain, fast


def test_backend_flag():
    assert isinstance(kernels.use_numba(), bool)


def test_env_flag_switches_backend(monkeypatch):
    monkeypatch.setenv("NCF_NO_NUMBA", "1")
    assert not kernels.use_numba()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backends_agree_forward(seed, monkeypatch):
    if not kernels._HAVE_NUMBA:
        pytest.skip("numba not installed")
    args, steps = random_problem(seed)
    plain, fast = run_both(args, steps, monkeypatch)
    for a, b in zip(plain, fast):
        assert np.allclose(a, b, atol=1e-12)


def test_backends_agree_backward(monkeypatch):
    if not kernels._HAVE_NUMBA:
        pytest.skip("numba not installed")
    args, steps = random_problem(3)
    rng = np.random.RandomState(9)
    dh = rng.randn(*args[0].shape)
    monkeypatch.setenv("NCF_NO_NUMBA", "1")
    cache = kernels.propagate_forward(*args, steps)
    plain = kernels.propagate_backward(dh, cache, *args[1:])
    monkeypatch.delenv("NCF_NO_NUMBA")
    cache = kernels.propagate_forward(*args, steps)
    fast = kernels.propagate_backward(dh, cache, *args[1:])
    for a, b in zip(plain, fast):
        assert np.allclose(a, b, atol=1e-10)


def test_zero_parameters_halve_state_each_step():
    args, _ = random_problem(4)
    x = args[0]
    zeros = tuple(np.zeros_like(a) for a in args[4:])
    for steps in (1, 2, 5):
        cache = kernels.propagate_forward(x, *args[1:4], *zeros, steps)
        assert np.array_equal(cache[0][steps], x * 0.5 ** steps)


def test_no_edges_is_a_per_node_gru():
    # with no edges every node sees a zero message regardless of the rest
    args, steps = random_problem(5)
    empty = np.zeros(0, dtype=np.int64)
    ptr = np.zeros(7, dtype=np.int64)
    full = kernels.propagate_forward(args[0], empty, empty, ptr, *args[4:], steps)
    one = kernels.propagate_forward(args[0][:1], empty, empty, ptr, *args[4:], steps)
    assert np.allclose(full[0][steps][:1], one[0][steps], atol=1e-14)


def test_permutation_equivariance():
    args, steps = random_problem(6)
    x, src, dst, ptr = args[:4]
    n = x.shape[0]
    rng = np.random.RandomState(7)
    perm = rng.permutation(n)
    x2 = np.zeros_like(x)
    x2[perm] = x
    h = kernels.propagate_forward(*args, steps)[0][steps]
    h2 = kernels.propagate_forward(x2, perm[src], perm[dst], ptr,
                                   *args[4:], steps)[0][steps]
    assert np.allclose(h2[perm], h, atol=1e-12)


def test_backward_matches_finite_differences():
    args, steps = random_problem(8, n=5, d=4, per_type=4)
    x = args[0]
    rng = np.random.RandomState(11)
    G = rng.randn(*x.shape)

    def loss(xv):
        cache = kernels.propagate_forward(xv, *args[1:], steps)
        return float((cache[0][steps] * G).sum())

    cache = kernels.propagate_forward(*args, steps)
    dx = kernels.propagate_backward(G, cache, *args[1:])[0]
    eps = 1e-6
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp = x.copy()
            xp[i, j] += eps
            xm = x.copy()
            xm[i, j] -= eps
            fd = (loss(xp) - loss(xm)) / (2 * eps)
            assert abs(fd - dx[i, j]) <= 1e-6 * max(1.0, abs(fd))


def test_kernels_are_deterministic():
    args, steps = random_problem(12)
    a = kernels.propagate_forward(*args, steps)[0][steps]
    b = kernels.propagate_forward(*args, steps)[0][steps]
    assert np.array_equal(a, b)


def test_benchmark_reports_both_paths():
    timings = kernels.benchmark(n_nodes=40, edges_per_type=60, d=8, T=2,
                                repeats=1)
    expected = {"numba", "numpy"} if kernels._HAVE_NUMBA else {"numpy"}
    assert set(timings) == expected
    assert all(t > 0 for t in timings.values())
