import math

import numpy as np
import pytest

from poissonchaos.chaos import (
    ChaosKernelFamily,
    chaos_inner,
    chaos_kernel,
    chaos_norms,
    kernel_inner,
    kernel_lp,
    wiener_ito,
)
from poissonchaos.measure import AtomicSpace, Kernel, constant_kernel, integrate
from poissonchaos.poisson import draw_points, factorial_sum
from poissonchaos.rng import replicate, stream

xy = Kernel(2, lambda x, y: x[:, 0] * y[:, 0], name="xy")
ident = Kernel(1, lambda x: x[:, 0], name="x")


@pytest.mark.parametrize("t", [1.0, 2.0, 0.5])
def test_second_order_indicator(unit_atom, t):
    f = Kernel(2, lambda x, y: np.ones(len(x)))
    c = t
    for N in range(7):
        pts = np.zeros(N, dtype=np.int64)
        want = N * (N - 1) - 2 * N * c + c * c
        assert wiener_ito(pts, f, unit_atom, t=t) == pytest.approx(want, abs=1e-12)


def test_first_order_is_centered_count(three_atoms):
    ind = Kernel(1, lambda x: (np.asarray(x) == 1).astype(float))
    pts = np.array([0, 1, 1, 2, 1])
    assert wiener_ito(pts, ind, three_atoms, t=3.0) == pytest.approx(3 - 3.0 * 0.7)


def test_empty_configuration(three_atoms):
    # with no points only the full lambda^n integral survives, sign (-1)^n
    v = three_atoms.values
    f3 = Kernel(3, lambda a, b, c: v[a] * v[b] * v[c])
    full = integrate(f3, three_atoms, 3).value
    empty = np.zeros(0, dtype=np.int64)
    assert wiener_ito(empty, f3, three_atoms) == pytest.approx(-full, rel=1e-14)
    f2 = Kernel(2, lambda a, b: v[a] + v[b])
    assert wiener_ito(empty, f2, three_atoms) == pytest.approx(integrate(f2, three_atoms, 2).value)


def test_nonsymmetric_rejected(unit_interval):
    with pytest.raises(ValueError):
        wiener_ito(np.zeros((0, 1)), Kernel(2, lambda x, y: x[:, 0], symmetric=False), unit_interval)


def test_chaos_kernels(unit_square, unit_interval):
    f1 = chaos_kernel(constant_kernel(1.0, 2), 1, unit_square)
    assert f1.constant == 2.0
    assert chaos_kernel(ident, 1, unit_interval) is ident
    g1 = chaos_kernel(xy, 1, unit_interval, "quadrature:64")
    x = np.array([[0.1], [0.5], [0.9]])
    assert g1(x) == pytest.approx(x[:, 0], rel=1e-12)
    fam = ChaosKernelFamily(xy, unit_interval)
    assert fam[2] is xy and fam[1].arity == 1 and fam.m == 2


def test_chaos_kernel_atomic_exact(three_atoms):
    v, w = three_atoms.values, three_atoms.weights
    f = Kernel(3, lambda a, b, c: v[a] * v[b] + v[c] ** 2 + v[a] * v[b] * v[c])
    f1 = chaos_kernel(f, 1, three_atoms)
    f2 = chaos_kernel(f, 2, three_atoms)
    for i in range(3):
        want = 3 * sum(w[j] * w[k] * (v[i] * v[j] + v[k] ** 2 + v[i] * v[j] * v[k])
                       for j in range(3) for k in range(3))
        assert f1(np.array([i])) == pytest.approx(want, rel=1e-13)
    for i in range(3):
        for j in range(3):
            want = 3 * sum(w[k] * (v[i] * v[j] + v[k] ** 2 + v[i] * v[j] * v[k]) for k in range(3))
            assert f2(np.array([i]), np.array([j])) == pytest.approx(want, rel=1e-13)


def test_norms_and_inner(unit_interval):
    two = constant_kernel(2.0, 1)
    assert kernel_inner(two, two, unit_interval).value == 4.0
    zero = Kernel(1, lambda x: np.zeros(len(x)))
    assert kernel_inner(zero, zero, unit_interval).value == 0.0
    assert kernel_lp(two, 3, unit_interval).value == 8.0
    norms = chaos_norms(xy, unit_interval)
    # f_1(x) = x, f_2 = xy
    assert norms[1].value == pytest.approx(1 / 3, rel=1e-3)
    assert norms[2].value == pytest.approx(1 / 9, rel=1e-3)


def test_chaos_inner_matches_squared_kernel(three_atoms):
    v = three_atoms.values
    f = Kernel(2, lambda a, b: v[a] * v[b] + 1)
    g = Kernel(3, lambda a, b, c: v[a] + v[b] + v[c])
    for n in (1, 2):
        via_contraction = chaos_inner(f, g, n, three_atoms).value
        direct = kernel_inner(chaos_kernel(f, n, three_atoms), chaos_kernel(g, n, three_atoms),
                              three_atoms).value
        assert via_contraction == pytest.approx(direct, rel=1e-12)


def _mc_product(space, t, g, h, reps, seed):
    sp = space.scaled(t)

    def one(rng, i):
        pts = draw_points(sp, rng)
        return wiener_ito(pts, g, space, t=t) * wiener_ito(pts, h, space, t=t)

    vals = np.array(replicate(one, reps, seed, key=("iso",)))
    return vals.mean(), vals.std(ddof=1) / math.sqrt(reps)


@pytest.mark.parametrize("pair", [(1, 1), (1, 2), (2, 2)])
def test_isometry(unit_interval, pair):
    t = 4.0
    kernels = {1: ident, 2: xy}
    g, h = kernels[pair[0]], kernels[pair[1]]
    mean, se = _mc_product(unit_interval, t, g, h, 20_000, 3)
    if pair[0] != pair[1]:
        want = 0.0
    else:
        n = pair[0]
        want = math.factorial(n) * t ** n * kernel_inner(g, h, unit_interval).value
    assert abs(mean - want) <= 4 * se


def test_centering(unit_interval):
    t = 3.0
    sp = unit_interval.scaled(t)
    vals = np.array(replicate(lambda rng, i: wiener_ito(draw_points(sp, rng), xy, unit_interval, t=t),
                              20_000, 8, key=("center",)))
    assert abs(vals.mean()) <= 4 * vals.std(ddof=1) / math.sqrt(len(vals))


@pytest.mark.parametrize("t", [0.5, 2.0])
def test_pathwise_chaos_identity(three_atoms, t):
    v = three_atoms.values
    f = Kernel(3, lambda a, b, c: v[a] * v[b] * v[c] + v[a] + v[b] + v[c], name="f3")
    fam = ChaosKernelFamily(f, three_atoms)
    mean = t ** 3 * integrate(f, three_atoms, 3).value
    sp = three_atoms.scaled(t)
    for i in range(100):
        pts = draw_points(sp, stream(11, "cfg", i))
        direct = factorial_sum(pts, f)
        series = mean + sum(t ** (3 - n) * wiener_ito(pts, fam[n], three_atoms, t=t) for n in (1, 2, 3))
        assert series == pytest.approx(direct, abs=1e-10 * max(1.0, abs(direct)))


def test_memo_kernel_is_threadsafe(unit_square):
    from concurrent.futures import ThreadPoolExecutor

    f = Kernel(2, lambda x, y: x[:, 0] * y[:, 1] + y[:, 0] * x[:, 1])
    f1 = chaos_kernel(f, 1, unit_square, "mc:2000:0")
    pts = np.random.default_rng(0).random((50, 2))
    ref = f1(pts)
    with ThreadPoolExecutor(4) as ex:
        outs = list(ex.map(lambda i: f1(pts[::-1])[::-1], range(8)))
    for o in outs:
        assert np.array_equal(o, ref)
