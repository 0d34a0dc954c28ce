import math

import numpy as np
import pytest
import sympy as sp
from scipy import stats

from poissonchaos import ustat
from poissonchaos.measure import Kernel, constant_kernel
from poissonchaos.poisson import draw_points
from poissonchaos.rng import stream
from poissonchaos.ustat import (
    GAUSS_BUMP_D3,
    NormalizedFamily,
    UStatistic,
    covariance,
    d3_bound,
    d3_surrogate,
    loglog_slope,
    normalize,
    pivoted_cholesky,
    simulate_family,
    summarize,
)

xy = Kernel(2, lambda x, y: x[:, 0] * y[:, 0], name="xy")


def test_evaluate_examples(unit_interval):
    u = UStatistic(unit_interval, constant_kernel(1.0, 2))
    assert u.evaluate(np.zeros((7, 1)), 1.0) == 42.0
    v = UStatistic(unit_interval, xy, scale=(2.0, -1.0))
    pts = np.array([[0.1], [0.4], [0.7]])
    assert v.evaluate(pts, 4.0) == pytest.approx(0.5 * 2 * (0.04 + 0.07 + 0.28))
    assert ustat.evaluate(v, pts, 4.0) == v.evaluate(pts, 4.0)


def test_mean_variance_closed_forms(unit_interval):
    one = UStatistic(unit_interval, constant_kernel(1.0, 2))
    p = UStatistic(unit_interval, xy, method="quadrature:256")
    for t in (1.0, 3.0, 10.0):
        assert one.mean(t) == t ** 2
        assert one.variance(t) == pytest.approx(4 * t ** 3 + 2 * t ** 2, rel=1e-14)
        assert ustat.mean(p, t) == pytest.approx(t ** 2 / 4, rel=1e-4)
        # f_1(x) = x, f_2 = xy
        assert ustat.variance(p, t) == pytest.approx(t ** 3 / 3 + 2 * t ** 2 / 9, rel=1e-4)


def test_scale_callback(unit_interval):
    u = UStatistic(unit_interval, constant_kernel(1.0, 2), scale=lambda t: 1 / t)
    assert u.variance(2.0) == pytest.approx((4 * 8 + 2 * 4) / 4)


def test_cross_order_covariance(unit_interval):
    u = UStatistic(unit_interval, constant_kernel(1.0, 1))
    v = UStatistic(unit_interval, constant_kernel(1.0, 2))
    for t in (0.5, 2.0, 7.0):
        assert covariance(u, v, t) == pytest.approx(2 * t ** 2, rel=1e-14)
        assert covariance(v, u, t) == pytest.approx(2 * t ** 2, rel=1e-14)


def test_exact_moments_match_count_pmf(unit_atom):
    # F = N(N-1), N ~ Poisson(t)
    u = UStatistic(unit_atom, constant_kernel(1.0, 2))
    t = 1.5
    n = np.arange(150)
    p = stats.poisson.pmf(n, t)
    c = n * (n - 1.0) - t * t
    for ell in (2, 3, 4):
        assert u.central_moment(ell, t) == pytest.approx(float(np.sum(p * c ** ell)), rel=1e-10)
    assert u.central_moment(1, t) == 0.0


def test_chaos_decomposition_pathwise(three_atoms):
    v = three_atoms.values
    u = UStatistic(three_atoms, Kernel(2, lambda a, b: v[a] * v[b] + 1.0), scale=(0.5, 1.0))
    for i in range(50):
        pts = draw_points(three_atoms.scaled(2.0), stream(3, "pw", i))
        assert u.chaos_decomposition(pts, 2.0) == pytest.approx(u.evaluate(pts, 2.0), abs=1e-10)


def test_nonsymmetric_kernel_rejected(unit_interval):
    with pytest.raises(ValueError):
        UStatistic(unit_interval, Kernel(2, lambda x, y: x[:, 0], symmetric=False))


# -- normalization -------------------------------------------------------------------


def test_limit_covariance(unit_interval):
    one = UStatistic(unit_interval, constant_kernel(1.0, 2))
    fam = NormalizedFamily([one])
    assert fam.C == pytest.approx(np.array([[4.0]]))
    transform, C = normalize([one], 9.0)
    assert transform(np.array([81.0 + 27.0])) == pytest.approx([1.0])
    # exact normalized variance (4t^3 + 2t^2) / t^3 tends to C
    assert fam.covariance(1000.0)[0, 0] == pytest.approx(4.002)


def test_degenerate_family_accepted(unit_interval):
    one = UStatistic(unit_interval, constant_kernel(1.0, 2))
    fam = NormalizedFamily([one, one])
    assert np.linalg.matrix_rank(fam.C) == 1
    L = pivoted_cholesky(fam.C)
    assert L @ L.T == pytest.approx(fam.C)


def test_vanishing_first_chaos_warns(unit_interval):
    # f(x, y) = (x - 1/2)(y - 1/2) has f_1 = 0
    f = Kernel(2, lambda x, y: (x[:, 0] - 0.5) * (y[:, 0] - 0.5))
    with pytest.warns(UserWarning):
        NormalizedFamily([UStatistic(unit_interval, f, method="quadrature:64")])


def test_indefinite_gram_rejected(unit_interval, monkeypatch):
    monkeypatch.setattr(ustat, "first_chaos_gram", lambda us: np.array([[1.0, 2.0], [2.0, 1.0]]))
    u = UStatistic(unit_interval, constant_kernel(1.0, 1))
    with pytest.raises(ValueError):
        NormalizedFamily([u, u])


def test_pivoted_cholesky_rank_deficient():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((4, 2))
    C = B @ B.T
    L = pivoted_cholesky(C)
    assert L @ L.T == pytest.approx(C, abs=1e-12)


@pytest.mark.parametrize("t", [1.0, 10.0])
def test_variance_against_simulation(unit_interval, t):
    fam = NormalizedFamily([UStatistic(unit_interval, constant_kernel(1.0, 2)),
                            UStatistic(unit_interval, xy, method="quadrature:256")])
    raw = simulate_family(fam, t, 20_000, seed=12)
    for i, u in enumerate(fam.ustats):
        x = raw[:, i]
        c = x - x.mean()
        var = c.var(ddof=1)
        se = math.sqrt(max((c ** 4).mean() - var ** 2, 0.0) / len(x))
        assert abs(var - u.variance(t)) <= 4 * se
    z = fam.normalize(raw, t)
    emp = np.cov(z, rowvar=False)
    exact = fam.covariance(t)
    assert emp[0, 1] == pytest.approx(exact[0, 1], rel=0.05)


def test_first_chaos_covariance(unit_interval):
    fam = NormalizedFamily([UStatistic(unit_interval, constant_kernel(1.0, 2)),
                            UStatistic(unit_interval, xy, method="quadrature:256")])
    t = 5.0
    sp_ = unit_interval.scaled(t)
    w = np.array([fam.first_chaos(draw_points(sp_, stream(4, "fc", i)), t) for i in range(20_000)])
    emp = np.cov(w, rowvar=False)
    assert emp == pytest.approx(fam.C, rel=0.05)


# -- d3 bound ----------------------------------------------------------------------


def test_bound_closed_form(unit_interval):
    one = UStatistic(unit_interval, constant_kernel(1.0, 2))
    for t in (10.0, 40.0, 640.0):
        b = d3_bound([one], t)
        # f_1 = 2: gaussian term 8/(4 sqrt t); A = 8 + 2/t, B = 2/t
        assert b.gaussian_term == pytest.approx(2 / math.sqrt(t))
        assert b.A == pytest.approx(8 + 2 / t)
        assert b.B == pytest.approx(2 / t)
        assert b.total * math.sqrt(t) == pytest.approx(2 + math.sqrt(16 + 4 / t))


def test_bound_decreases(unit_interval):
    fam = NormalizedFamily([UStatistic(unit_interval, constant_kernel(1.0, 2)),
                            UStatistic(unit_interval, xy, method="quadrature:128")])
    vals = [d3_bound(fam, t).total for t in (1, 10, 100, 1000)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert loglog_slope([10, 100, 1000], vals[1:]) == pytest.approx(-0.5, abs=0.02)


def test_bound_first_order_has_no_coupling(unit_interval):
    b = d3_bound([UStatistic(unit_interval, constant_kernel(1.0, 1))], 4.0)
    assert b.B == 0.0 and b.coupling_term == 0.0
    assert b.total == pytest.approx(0.25 / 2)


def test_bound_divergent_third_moment(unit_interval, monkeypatch):
    class Inf:
        value = math.inf

    monkeypatch.setattr(ustat, "kernel_lp", lambda *a, **k: Inf())
    with pytest.raises(FloatingPointError):
        d3_bound([UStatistic(unit_interval, constant_kernel(1.0, 1))], 1.0)


# -- d3 surrogate ----------------------------------------------------------------


def _sympy_profiles():
    y = sp.symbols("y", real=True)
    out = {}
    for a in (0.5, 1.0, 2.0, 4.0):
        s = max(a * a, a ** 3)
        out[f"sin({a})"] = sp.sin(a * y) / s
        out[f"cos({a})"] = sp.cos(a * y) / s
    z = sp.symbols("z", real=True)
    g3 = sp.diff(sp.exp(-z ** 2 / 2), z, 3)
    # maximize |g'''| symbolically: critical points of g'''
    crit = sp.solve(sp.diff(g3, z), z)
    peak = max(abs(float(g3.subs(z, c))) for c in crit)
    for b in (-1.0, 0.0, 0.5, 1.0):
        out[f"bump({b})"] = sp.exp(-(y - b) ** 2 / 2) / peak
    out["sqrt1p"] = sp.sqrt(1 + y ** 2)
    out["logcosh"] = sp.log(sp.cosh(y))
    out["softplus4"] = 4 * sp.log(1 + sp.exp(y))
    out["xatan"] = y * sp.atan(y) - sp.log(1 + y ** 2) / 2
    return y, out, peak


def test_profile_derivative_bounds():
    y, exprs, peak = _sympy_profiles()
    assert GAUSS_BUMP_D3 == pytest.approx(peak, rel=1e-12)
    grid = np.linspace(-12, 12, 24_001)
    names = [n for n, _ in ustat.TEST_PROFILES]
    assert sorted(names) == sorted(exprs)
    for name, phi in ustat.TEST_PROFILES:
        e = exprs[name]
        f0 = sp.lambdify(y, e, "numpy")
        assert phi(grid[::997]) == pytest.approx(f0(grid[::997]), rel=1e-10, abs=1e-12)
        for order in (2, 3):
            d = sp.lambdify(y, sp.diff(e, y, order), "numpy")
            assert np.max(np.abs(d(grid))) <= 1.0 + 1e-9, (name, order)


def test_surrogate_small_on_gaussian_samples():
    C = np.array([[4.0, 1.0], [1.0, 2.0]])
    rng = np.random.default_rng(5)
    x = rng.multivariate_normal(np.zeros(2), C, size=100_000)
    s = d3_surrogate(x, C, seed=1, n_gauss=1 << 16)
    assert s.value <= 4 * math.hypot(s.sample_error, s.gaussian_error) + 5e-3
    assert len(s.per_function) == len(ustat.TEST_PROFILES) * 3


def test_surrogate_detects_skew():
    rng = np.random.default_rng(6)
    x = rng.exponential(size=(100_000, 1)) - 1.0
    s = d3_surrogate(x, np.eye(1), seed=1, n_gauss=1 << 16)
    assert s.value > 10 * s.sample_error


def test_surrogate_input_checks():
    with pytest.raises(ValueError):
        d3_surrogate(np.zeros((10, 1)), np.eye(1))
    with pytest.raises(ValueError):
        d3_surrogate(np.zeros((2000, 2)), np.eye(1))


def test_gaussian_expectations_known_values():
    means, errs = ustat.gaussian_expectations(np.eye(1) * 2.0, seed=0, n_points=1 << 16)
    # E cos(aZ) = exp(-a^2 var / 2)
    assert means[("cos(1.0)", 0)] == pytest.approx(math.exp(-1.0), abs=1e-5)
    assert means[("sin(2.0)", 0)] == pytest.approx(0.0, abs=1e-5)
    assert means[("sqrt1p", 0)] > 1


def test_summarize_gaussian():
    rng = np.random.default_rng(0)
    s = summarize(rng.standard_normal((200_000, 1)))
    assert abs(s["skew"][0]) < 0.02
    assert s["kurt"][0] == pytest.approx(3.0, abs=0.05)
    assert s["cumulants"].shape == (1, 4)


def test_loglog_slope():
    assert loglog_slope([1, 10, 100], [1, 0.1, 0.01]) == pytest.approx(-1.0)
