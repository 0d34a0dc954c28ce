"""Poisson process simulation, factorial-measure sums and the Mecke formula."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measure import (
    AtomicSpace,
    BoxSpace,
    DomainError,
    IntegralEstimate,
    Kernel,
    MeasureSpace,
    node_set,
)
from .rng import replicate, stream

COMBO_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """A finite point configuration in a space's native batch form.

    On atomic spaces an atom hit twice appears twice; each entry is a
    separate index for factorial sums.
    """

    points: object
    space: MeasureSpace
    seed: int | None = None
    key: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.points)


def draw_points(space: MeasureSpace, rng: np.random.Generator):
    """Native batch of a Poisson process with intensity measure ``space`` (incl. ``t``)."""
    if isinstance(space, AtomicSpace):
        counts = space.sample_counts(rng)
        return np.repeat(np.arange(len(counts)), counts)
    if isinstance(space, BoxSpace):
        return space.sample_poisson_points(rng)
    mass = space.mass()
    if not math.isfinite(mass):
        raise DomainError("cannot simulate a Poisson process with infinite mass")
    return space.sample(int(rng.poisson(mass)), rng)


def sample_poisson(space: MeasureSpace, t: float = 1.0, restriction=None, seed: int = 0,
                   key: Sequence = ()) -> PointConfiguration:
    """Poisson process with intensity ``t * lambda`` restricted to ``restriction``.

    Deterministic in ``(seed, key)``.
    """
    sp = space.scaled(t) if t != 1.0 else space
    if restriction is not None:
        sp = sp.restrict(restriction)
    if not math.isfinite(sp.mass()):
        raise DomainError("restriction has infinite mass")
    rng = stream(seed, "poisson", *key)
    return PointConfiguration(draw_points(sp, rng), sp, seed, tuple(key))


def _combos(n: int, m: int, ordered: bool):
    gen = itertools.permutations(range(n), m) if ordered else itertools.combinations(range(n), m)
    while True:
        chunk = np.fromiter(itertools.chain.from_iterable(itertools.islice(gen, COMBO_CHUNK)),
                            dtype=np.int64)
        if chunk.size == 0:
            return
        yield chunk.reshape(-1, m)


def falling_factorial(n: int, m: int) -> int:
    return math.perm(n, m) if n >= m else 0


def factorial_sum(points, f: Kernel) -> float:
    """Sum of ``f`` over ordered ``m``-tuples of distinct indices of ``points``.

    Symmetric kernels are summed over index subsets and multiplied by ``m!``.
    """
    if isinstance(points, PointConfiguration):
        points = points.points
    m = f.arity
    n = len(points)
    if n < m:
        return 0.0
    if f.constant is not None:
        return f.constant * falling_factorial(n, m)
    if m == 1:
        return float(np.sum(f(points)))
    total = 0.0
    for idx in _combos(n, m, ordered=not f.symmetric):
        total += float(np.sum(f(*[points[idx[:, j]] for j in range(m)])))
    return total * (math.factorial(m) if f.symmetric else 1.0)


def in_region(space: MeasureSpace, region, points) -> np.ndarray:
    """Boolean membership of native points in a region.

    Atomic regions are label lists (or boolean atom masks), box regions are
    sub-box bounds or predicates; ``None`` is the whole space.
    """
    n = len(points)
    if region is None:
        return np.ones(n, bool)
    if isinstance(space, AtomicSpace):
        mask = region if isinstance(region, np.ndarray) and region.dtype == bool else space.mask(region)
        return mask[np.asarray(points, dtype=np.int64)] if n else np.zeros(0, bool)
    if callable(region):
        return np.asarray(region(points), bool)
    b = np.atleast_2d(np.asarray(region, dtype=float))
    if n == 0:
        return np.zeros(0, bool)
    return np.all((points >= b[:, 0]) & (points <= b[:, 1]), axis=1)


@dataclass(frozen=True, eq=False)
class MeckeFunctional:
    """``h(mu, x_1..x_m) = f(x_1..x_m) * phi(mu(B))``."""

    f: Kernel
    phi: Callable[[np.ndarray], np.ndarray]
    region: object = None
    name: str = ""

    @property
    def m(self) -> int:
        return self.f.arity


MECKE_PHI = {
    "one": lambda c: np.ones_like(np.asarray(c, dtype=float)),
    "count": lambda c: np.asarray(c, dtype=float),
    "count_sq": lambda c: np.asarray(c, dtype=float) ** 2,
    "exp_neg": lambda c: np.exp(-np.asarray(c, dtype=float)),
}


def mecke_functional(name: str, f: Kernel, region=None) -> MeckeFunctional:
    """Registry lookup of ``phi`` by name: one, count, count_sq, exp_neg."""
    try:
        phi = MECKE_PHI[name]
    except KeyError:
        raise ValueError(f"unknown Mecke functional {name!r}; known: {sorted(MECKE_PHI)}") from None
    return MeckeFunctional(f, phi, region, name)


def mecke_sides(space: MeasureSpace, h: MeckeFunctional, rng: np.random.Generator,
                nodes) -> tuple[float, float]:
    """One replication of both sides of the multivariate Mecke formula."""
    pts = draw_points(space, rng)
    count = int(np.sum(in_region(space, h.region, pts)))
    lhs = float(h.phi(count)) * factorial_sum(pts, h.f)
    ys, w, fvals, k = nodes
    rhs = float(np.dot(w, fvals * h.phi(count + k)))
    return lhs, rhs


def mecke_check(space: MeasureSpace, t: float, h: MeckeFunctional, reps: int, seed: int = 0,
                method="auto", workers: int = 1) -> tuple[IntegralEstimate, IntegralEstimate]:
    """Monte Carlo estimates of ``E int h(eta, x) eta^(m)(dx)`` and
    ``E int h(eta + delta_x1 + ... + delta_xm, x) lambda_t^m(dx)``.

    The inner ``lambda_t^m`` integral uses one fixed node set (exact on
    atomic spaces); the outer expectation is a plain replication average.
    """
    sp = space.scaled(t) if t != 1.0 else space
    ys, w = node_set(sp, h.m, method)
    fvals = h.f(*ys)
    k = np.sum([in_region(sp, h.region, y) for y in ys], axis=0)
    nodes = (ys, w, fvals, k)
    vals = np.array(replicate(lambda rng, i: mecke_sides(sp, h, rng, nodes), reps, seed,
                              key=("mecke",), workers=workers))
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite Mecke estimates")
    means = vals.mean(axis=0)
    ses = vals.std(axis=0, ddof=1) / math.sqrt(reps)
    return (IntegralEstimate(means[0], ses[0], "mc", reps),
            IntegralEstimate(means[1], ses[1], "mc", reps))
