"""Pathwise multiple Wiener-Ito integrals and U-statistic chaos kernels."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .measure import (
    AtomicSpace,
    IntegralEstimate,
    Kernel,
    MeasureSpace,
    batch_keys,
    contraction_integral,
    integrate,
    node_set,
    partial_integral,
)
from .partitions import Subpartition
from .poisson import PointConfiguration, _combos

MAX_ORDER = 10


def wiener_ito(config, f: Kernel, space: MeasureSpace, t: float = 1.0,
               method="auto") -> float:
    """Pathwise ``I_n(f)`` with respect to the compensated process of intensity ``t * space``.

    By symmetry of ``f`` the subsets ``J`` of equal size contribute alike,
    so the sum over ``J`` collapses to ``n + 1`` terms

        sum_j C(n, j) (-1)^(n-j) sum_{distinct i_1..i_j} h_j(x_i1, ..., x_ij)

    with ``h_j`` the ``lambda_t^(n-j)`` partial integral of ``f``.  All
    partial integrals use one node family, so identities between different
    orders hold to rounding.
    """
    if not f.symmetric:
        raise ValueError("wiener_ito needs a symmetric kernel")
    n = f.arity
    if n > MAX_ORDER:
        raise ValueError(f"order {n} exceeds the supported maximum {MAX_ORDER}")
    pts = config.points if isinstance(config, PointConfiguration) else config
    sp = space.scaled(t) if t != 1.0 else space
    N = len(pts)
    total = 0.0
    for j in range(n + 1):
        if j > N:
            break
        sign = -1.0 if (n - j) % 2 else 1.0
        nodes = None if j == n else node_set(sp, n - j, method)
        if j == 0:
            s = float(np.dot(nodes[1], f(*nodes[0])))
        else:
            s = 0.0
            for idx in _combos(N, j, ordered=False):
                fixed = [pts[idx[:, c]] for c in range(j)]
                s += float(np.sum(partial_integral(f, fixed, n - j, sp, nodes=nodes)))
            s *= math.factorial(j)
        total += sign * math.comb(n, j) * s
    return total


class _Memo:
    """Thread-safe per-point cache for an expensive kernel."""

    def __init__(self, compute):
        self.compute = compute
        self.cache: dict = {}
        self.lock = threading.Lock()

    def __call__(self, *batches):
        keys = list(zip(*[batch_keys(b) for b in batches]))
        with self.lock:
            hit = [self.cache.get(k) for k in keys]
        miss = [i for i, v in enumerate(hit) if v is None]
        if miss:
            sel = np.array(miss)
            vals = self.compute(*[b[sel] for b in batches])
            with self.lock:
                for i, v in zip(miss, vals):
                    self.cache[keys[i]] = float(v)
                    hit[i] = float(v)
        return np.array(hit, dtype=float)


def chaos_kernel(f: Kernel, n: int, space: MeasureSpace, method="auto") -> Kernel:
    """``x -> C(m, n) int f(x, y) lambda^(m-n)(dy)`` as a memoizing kernel.

    ``space`` should carry ``t = 1``; for ``n == m`` the kernel ``f`` itself
    is returned.
    """
    m = f.arity
    if not 1 <= n <= m:
        raise ValueError(f"chaos order {n} outside 1..{m}")
    if n == m:
        return f
    coef = math.comb(m, n)
    if f.constant is not None:
        return Kernel(n, constant=coef * f.constant * space.mass() ** (m - n),
                      name=f"{f.name}_{n}")
    nodes = node_set(space, m - n, method)
    if isinstance(space, AtomicSpace):
        idx = np.flatnonzero(space.active)
        size = len(space.labels)
        grid = np.unravel_index(np.arange(len(idx) ** n), (len(idx),) * n)
        args = [idx[g] for g in grid]
        table = np.zeros((size,) * n)
        table[tuple(args)] = coef * partial_integral(f, args, m - n, space, nodes=nodes)

        def lookup(*xs):
            return table[tuple(np.asarray(x, dtype=np.int64) for x in xs)]

        return Kernel(n, lookup, f.symmetric, name=f"{f.name}_{n}")

    memo = _Memo(lambda *xs: coef * partial_integral(f, list(xs), m - n, space, nodes=nodes))
    return Kernel(n, memo, f.symmetric, name=f"{f.name}_{n}")


@dataclass
class ChaosKernelFamily:
    """Kernels ``f_1..f_m`` of a U-statistic with kernel ``f``."""

    f: Kernel
    space: MeasureSpace
    method: str = "auto"
    kernels: dict[int, Kernel] = field(default_factory=dict)

    def __post_init__(self):
        for n in range(1, self.f.arity + 1):
            self.kernels.setdefault(n, chaos_kernel(self.f, n, self.space, self.method))

    @property
    def m(self) -> int:
        return self.f.arity

    def __getitem__(self, n: int) -> Kernel:
        return self.kernels[n]


def kernel_inner(f: Kernel, g: Kernel, space: MeasureSpace, method="auto") -> IntegralEstimate:
    """``<f, g>_n = int f g d lambda^n``."""
    return integrate(f.times(g), space, f.arity, method)


def kernel_lp(f: Kernel, p: float, space: MeasureSpace, method="auto") -> IntegralEstimate:
    """``int |f|^p d lambda^n``."""
    return integrate(f.abs().power(p), space, f.arity, method)


def chaos_inner(f: Kernel, g: Kernel, n: int, space: MeasureSpace,
                method="auto") -> IntegralEstimate:
    """``<f_n, g_n>_n`` for the chaos kernels of U-statistic kernels ``f`` and ``g``.

    Written as one integral over ``lambda^(m_f + m_g - n)`` with the first
    ``n`` arguments of ``f`` and ``g`` identified, which avoids squaring a
    numerically estimated partial integral.
    """
    mf, mg = f.arity, g.arity
    if not 1 <= n <= min(mf, mg):
        raise ValueError("chaos order out of range")
    sigma = Subpartition([[i, mf + i] for i in range(1, n + 1)], mf + mg)
    est = contraction_integral([f, g], sigma, space, method)
    return est.scaled(math.comb(mf, n) * math.comb(mg, n))


def chaos_norms(f: Kernel, space: MeasureSpace, method="auto") -> dict[int, IntegralEstimate]:
    """``||f_n||_n^2`` for ``n = 1..m``."""
    return {n: chaos_inner(f, f, n, space, method) for n in range(1, f.arity + 1)}


__all__ = [
    "ChaosKernelFamily",
    "MAX_ORDER",
    "chaos_inner",
    "chaos_kernel",
    "chaos_norms",
    "kernel_inner",
    "kernel_lp",
    "wiener_ito",
]
