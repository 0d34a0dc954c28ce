import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from poissonchaos.flats import (
    Flat,
    FlatBatch,
    FlatProcessSpec,
    GeometricFunctional,
    Window,
    ball_volume,
    bounding_window,
    cov_exact,
    cov_limit,
    flat_space,
    hitting_mass,
    intersect,
    random_rotation,
    sample_flats,
    scaling_check,
    section_functional,
    simulate_zeta,
    zeta,
    zeta_mean,
    zeta_ustatistic,
)
from poissonchaos.poisson import draw_points
from poissonchaos.rng import stream

unit_disc = Window((0.0, 0.0), 1.0)


def lines(*pairs):
    """Lines in the plane given as (point, direction)."""
    return FlatBatch.from_flats([Flat.through(p, d) for p, d in pairs])


def test_ball_volume():
    assert [ball_volume(q) for q in (0, 1, 2)] == pytest.approx([1.0, 2.0, math.pi])
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3)


@pytest.mark.parametrize("d,k,R,want", [
    (2, 1, 1.0, 2.0), (2, 1, 1.5, 3.0), (3, 1, 1.0, math.pi), (3, 1, 2.0, 4 * math.pi),
    (3, 2, 1.0, 2.0), (3, 2, 3.0, 6.0), (2, 0, 1.0, math.pi),
])
def test_hitting_mass(d, k, R, want):
    spec = FlatProcessSpec(d, k)
    w = Window((0.0,) * d, R)
    assert hitting_mass(spec, w) == pytest.approx(want)
    assert flat_space(replace(spec, t=3.0), w).mass() == pytest.approx(3 * want)


def test_spec_validation():
    with pytest.raises(ValueError):
        FlatProcessSpec(2, 2)
    with pytest.raises(ValueError):
        FlatProcessSpec(2, 1, t=0.0)
    with pytest.raises(ValueError):
        FlatProcessSpec(2, 1, directions=[[[1.0, 1.0]]])
    with pytest.raises(ValueError):
        FlatProcessSpec(2, 1, directions=[[[1.0, 0.0]], [[0.0, 1.0]]], probs=(0.5, 0.6))
    with pytest.raises(ValueError):
        Flat(np.array([[1.0, 0.0]]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        Window((0.0,), 0.0)


def test_window_parse_and_bounds():
    w = Window.parse("ball:0.5,-1:2")
    assert w.center == (0.5, -1.0) and w.radius == 2.0 and w.d == 2
    assert w.scaled(3).radius == 6.0 and w.scaled(3).center == (1.5, -3.0)
    b = bounding_window([Window((0, 0), 1), Window((0.5, 0), 1)])
    assert b.center == pytest.approx((0.25, 0.0)) and b.radius == pytest.approx(1.25)
    with pytest.raises(ValueError):
        Window.parse("box:0,0:1")


def test_count_mean():
    spec = FlatProcessSpec(2, 1, t=5.0)
    counts = np.array([len(sample_flats(spec, unit_disc, seed=1, key=(i,))) for i in range(4000)])
    assert abs(counts.mean() - 10.0) <= 4 * math.sqrt(10.0 / len(counts))
    assert stats.chisquare(np.bincount(np.minimum(counts, 20), minlength=21),
                           len(counts) * np.append(stats.poisson.pmf(np.arange(20), 10.0),
                                                   stats.poisson.sf(19, 10.0))).pvalue > 0.001


def test_sampled_flats_hit_window_uniformly():
    spec = FlatProcessSpec(2, 1, t=1.0)
    w = Window((0.3, -0.2), 1.5)
    space = flat_space(spec, w)
    batch = space.sample(20_000, np.random.default_rng(0))
    # signed distance of the window center to each line is uniform on (-R, R)
    s = np.einsum("nqd,nqd->n", batch.normals, batch.offsets[:, None, :] - np.array(w.center))
    assert stats.kstest(s, stats.uniform(-1.5, 3.0).cdf).pvalue > 0.01
    # isotropic: direction angle modulo pi is uniform
    ang = np.mod(np.arctan2(batch.frames[:, 0, 1], batch.frames[:, 0, 0]), math.pi)
    assert stats.kstest(ang, stats.uniform(0, math.pi).cdf).pvalue > 0.01
    for f in list(batch[:5]):
        assert abs(f.direction @ f.offset).max() < 1e-10


def test_isotropic_offsets_in_3d():
    spec = FlatProcessSpec(3, 1)
    w = Window((1.0, 0.0, 0.0), 2.0)
    batch = flat_space(spec, w).sample(20_000, np.random.default_rng(1))
    dist = np.linalg.norm(np.einsum("nqd,nd->nq", batch.normals, batch.offsets - np.array(w.center)), axis=1)
    # uniform in a disc of radius 2: P(dist <= r) = (r/2)^2
    assert stats.kstest(dist, lambda r: np.clip(r / 2, 0, 1) ** 2).pvalue > 0.01
    # isotropic directions: |cos| to a fixed axis is uniform on (0, 1) in R^3
    assert stats.kstest(np.abs(batch.frames[:, 0, 2]), "uniform").pvalue > 0.01


def test_discrete_direction_distribution():
    frames = [[[1.0, 0.0]], [[0.0, 1.0]]]
    spec = FlatProcessSpec(2, 1, directions=frames, probs=(0.25, 0.75))
    batch = flat_space(spec, unit_disc).sample(20_000, np.random.default_rng(2))
    vertical = np.isclose(np.abs(batch.frames[:, 0, 1]), 1.0)
    assert vertical.mean() == pytest.approx(0.75, abs=4 * math.sqrt(0.1875 / 20_000))
    assert np.allclose(np.einsum("nkd,nqd->nkq", batch.frames, batch.normals), 0.0)


# -- intersections -----------------------------------------------------------------


def test_intersect_two_lines():
    a = lines(((1.0, 0.0), (0.0, 1.0)))
    b = lines(((0.0, 2.0), (1.0, 0.0)))
    sec = intersect([a, b])
    assert sec.dim == 0 and not sec.degenerate.any()
    assert sec.points[0] == pytest.approx([1.0, 2.0])
    assert sec.distance(np.zeros(2)) == pytest.approx([math.sqrt(5.0)])


def test_intersect_oblique_lines():
    a = lines(((0.0, 0.0), (1.0, 1.0)))
    b = lines(((0.0, 2.0), (1.0, -1.0)))
    assert intersect([a, b]).points[0] == pytest.approx([1.0, 1.0])


def test_intersect_planes_in_space():
    z0 = FlatBatch.from_flats([Flat.through((0, 0, 0), [[1, 0, 0], [0, 1, 0]])])
    x0 = FlatBatch.from_flats([Flat.through((0, 0, 0), [[0, 1, 0], [0, 0, 1]])])
    sec = intersect([z0, x0])
    assert sec.dim == 1
    # the y-axis, at distance 5 from (3, 5, 4)
    assert sec.distance(np.array([3.0, 5.0, 4.0])) == pytest.approx([5.0])
    direction = np.cross(sec.normals[0, 0], sec.normals[0, 1])
    assert abs(direction[1]) == pytest.approx(1.0)


def test_parallel_and_overdetermined():
    a = lines(((0.0, 0.0), (0.0, 1.0)))
    b = lines(((0.5, 0.0), (0.0, 1.0)))
    assert intersect([a, b]).degenerate.all()
    c = lines(((0.0, 0.0), (1.0, 0.0)))
    assert intersect([a, b, c]).dim == -1
    single = intersect([a])
    assert single.dim == 1 and single.distance(np.array([2.0, 7.0])) == pytest.approx([2.0])


# -- functionals -------------------------------------------------------------------


def test_section_functional_examples():
    hd = GeometricFunctional("hausdorff", 1)
    assert section_functional(hd, unit_disc, 0.0, 1) == pytest.approx([2.0])
    assert section_functional(hd, unit_disc, 0.6, 2) == pytest.approx([math.pi * 0.64])
    assert section_functional(hd, unit_disc, [0.3, 1.2], 0) == pytest.approx([1.0, 0.0])
    ind = GeometricFunctional("indicator", 2)
    assert section_functional(ind, unit_disc, [0.3, 1.2], 0) == pytest.approx([1.0, 0.0])
    cp = GeometricFunctional.parse("chordpower:2", 1)
    assert cp.beta == 2.0
    assert section_functional(cp, unit_disc, 0.6, 1) == pytest.approx([2.56])


def test_functional_domain_checks():
    assert GeometricFunctional("hausdorff", 2).check(2, 1) == 0
    with pytest.raises(ValueError):
        GeometricFunctional("hausdorff", 3).check(2, 1)
    with pytest.raises(ValueError):
        GeometricFunctional("chord_power", 2, 1.0).check(2, 1)
    with pytest.raises(ValueError):
        GeometricFunctional("volume", 1)
    assert GeometricFunctional("chord_power", 2, 1.5).alpha(3, 2) == 1.5
    assert GeometricFunctional("hausdorff", 1).alpha(3, 1) == 1.0
    assert GeometricFunctional("hausdorff", 1).bound(Window((0, 0, 0), 2.0), 3, 2) == pytest.approx(4 * math.pi)


def test_zeta_examples():
    cfg = lines(((0.0, 0.0), (0.0, 1.0)), ((0.0, 0.0), (1.0, 0.0)), ((0.5, 0.0), (0.0, 1.0)))
    # two crossings inside the disc, one parallel pair
    assert zeta(cfg, GeometricFunctional("indicator", 2), unit_disc) == 2.0
    assert zeta(cfg, GeometricFunctional("hausdorff", 1), unit_disc) == pytest.approx(4 + math.sqrt(3))
    assert zeta(cfg, GeometricFunctional("chord_power", 1, 0.0), unit_disc) == 3.0
    small = Window((0.0, 0.0), 0.25)
    assert zeta(cfg, GeometricFunctional("indicator", 2), small) == 1.0


def test_zeta_mean_closed_forms():
    spec = FlatProcessSpec(2, 1, t=10.0)
    w = Window((0.0, 0.0), 1.0)
    est = zeta_mean(spec, GeometricFunctional("hausdorff", 1), w, "mc:200000:1")
    assert abs(est.value - 10 * math.pi) <= 4 * est.stderr
    # pair intersections of isotropic lines: t^2 R^2
    est = zeta_mean(spec, GeometricFunctional("indicator", 2), w, "mc:200000:2")
    assert abs(est.value - 100.0) <= 4 * est.stderr


@pytest.mark.parametrize("d,k,m,name", [
    (2, 1, 1, "hausdorff"), (2, 1, 1, "chordpower:2"), (2, 1, 2, "indicator"),
    (2, 1, 2, "hausdorff"), (3, 2, 2, "hausdorff"), (3, 2, 2, "chordpower:1"),
    (3, 1, 1, "indicator"),
])
def test_zeta_mean_matches_simulation(d, k, m, name):
    psi = GeometricFunctional.parse(name, m)
    spec = FlatProcessSpec(d, k, t=3.0)
    w = Window((0.2,) + (0.0,) * (d - 1), 1.0)
    est = zeta_mean(spec, psi, w, "mc:200000:3")
    x = simulate_zeta(spec, psi, [w], 3000, seed=4)[:, 0]
    se = math.hypot(x.std(ddof=1) / math.sqrt(len(x)), est.stderr)
    assert abs(x.mean() - est.value) <= 4 * se


def test_rotation_invariance():
    spec = FlatProcessSpec(2, 1, t=4.0)
    psi = GeometricFunctional("indicator", 2)
    rot = random_rotation(2, seed=3)
    assert rot @ rot.T == pytest.approx(np.eye(2)) and np.linalg.det(rot) == pytest.approx(1.0)
    w = Window((0.3, 0.0), 0.5)
    big = Window((0.0, 0.0), 1.0)
    # rotating about the origin carries the process restricted to the big disc onto itself
    plain = simulate_zeta(spec, psi, [big, w], 3000, seed=5)
    rotated = simulate_zeta(spec, psi, [big, w], 3000, seed=6, rotation=rot)
    assert stats.ks_2samp(plain[:, 1], rotated[:, 1]).pvalue > 0.001
    # and a rotated configuration gives the same value in the rotated window
    batch = sample_flats(spec, big, seed=7)
    wr = Window(tuple(rot @ np.array(w.center)), w.radius)
    assert zeta(batch.rotated(rot), psi, wr) == zeta(batch, psi, w)


def test_covariance_against_simulation():
    spec = FlatProcessSpec(2, 1, t=3.0)
    psi = GeometricFunctional("indicator", 2)
    A, B = Window((0.0, 0.0), 1.0), Window((0.5, 0.0), 1.0)
    exact = cov_exact(psi, A, B, spec, method="mc:200000:9")
    x = simulate_zeta(spec, psi, [A, B], 6000, seed=8)
    c = (x[:, 0] - x[:, 0].mean()) * (x[:, 1] - x[:, 1].mean())
    se = math.hypot(c.std(ddof=1) / math.sqrt(len(c)), exact.stderr)
    assert abs(c.mean() - exact.value) <= 4 * se
    lim = cov_limit(psi, A, B, spec, method="mc:200000:9")
    assert lim.value > 0
    assert cov_limit(psi, A, A, spec, method="mc:100000:9").value > 0


def test_ustatistic_wiring():
    spec = FlatProcessSpec(2, 1, t=1.0)
    psi = GeometricFunctional("hausdorff", 1)
    u = zeta_ustatistic(spec, psi, unit_disc, method="mc:100000:1")
    assert u.mean(5.0) == pytest.approx(5 * math.pi, rel=0.02)
    batch = sample_flats(replace(spec, t=5.0), unit_disc, seed=2)
    assert u.evaluate(batch, 5.0) == pytest.approx(zeta(batch, psi, unit_disc))
    assert u.space.scaled(5.0).mass() == pytest.approx(10.0)
    pts = draw_points(u.space.scaled(5.0), stream(0, "w"))
    assert u.evaluate(pts, 5.0) == pytest.approx(zeta(pts, psi, unit_disc))


def test_scaling_identity_small():
    spec = FlatProcessSpec(2, 1)
    psi = GeometricFunctional("hausdorff", 1)
    rep = scaling_check(spec, psi, unit_disc, r_grid=(1.0, 2.0), reps=1500, seed=3,
                        method="mc:200000")
    assert rep.r == [1.0, 2.0] and rep.ok
    assert rep.var_scaled == pytest.approx(rep.var_hat, rel=0.15)
    with pytest.raises(ValueError):
        scaling_check(spec, psi, unit_disc, reps=10)


def test_first_order_limit_is_hitting_mass():
    # m = 1, psi = indicator: the limit covariance is the mass of the flats hitting B
    spec = FlatProcessSpec(2, 1)
    psi = GeometricFunctional("indicator", 1)
    for R in (1.0, 2.5):
        w = Window((0.0, 0.0), R)
        assert cov_limit(psi, w, w, spec, "mc:20000:1").value == pytest.approx(2 * R)
        assert cov_exact(psi, w, w, spec, 7.0, "mc:20000:1").value == pytest.approx(14 * R)
