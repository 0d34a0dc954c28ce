"""Poisson U-statistics: exact moments, normalization and CLT diagnostics.

A U-statistic of order ``m`` is ``F_t = g(t) * sum f(x_1..x_m)`` over
ordered ``m``-tuples of distinct points of a Poisson process with
intensity ``t * lambda``.  Its chaos kernels are the partial integrals
``f_n = C(m, n) int f(x_1..x_n, y) lambda^(m-n)(dy)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.special
from scipy.stats import qmc

from .chaos import ChaosKernelFamily, chaos_inner, chaos_kernel, kernel_lp, wiener_ito
from .measure import IntegralEstimate, Kernel, MeasureSpace, integrate
from .moments import chaos_moment, first_chaos_gram, sample_cumulant
from .poisson import draw_points, factorial_sum
from .rng import replicate

PSD_FLOOR = -1e-9
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class UStatistic:
    """``F_t = g(t) * int f d eta_t^(m)`` with ``g(t) = c * t**p`` or a callback."""

    space: MeasureSpace
    kernel: Kernel
    scale: tuple[float, float] | Callable[[float], float] = (1.0, 0.0)
    name: str = ""
    method: str = "auto"

    def __post_init__(self):
        if not self.kernel.symmetric:
            raise ValueError("U-statistic kernels must be symmetric")

    @property
    def m(self) -> int:
        return self.kernel.arity

    def g(self, t: float) -> float:
        if callable(self.scale):
            return float(self.scale(t))
        c, p = self.scale
        return c * t ** p

    @cached_property
    def family(self) -> ChaosKernelFamily:
        return ChaosKernelFamily(self.kernel, self.space, self.method)

    @cached_property
    def integral(self) -> IntegralEstimate:
        return integrate(self.kernel, self.space, self.m, self.method)

    @cached_property
    def norms(self) -> dict[int, float]:
        """``||f_n||_n^2`` for ``n = 1..m``."""
        return {n: chaos_inner(self.kernel, self.kernel, n, self.space, self.method).value
                for n in range(1, self.m + 1)}

    def evaluate(self, config, t: float = 1.0) -> float:
        pts = getattr(config, "points", config)
        return self.g(t) * factorial_sum(pts, self.kernel)

    def mean(self, t: float = 1.0) -> float:
        return self.g(t) * t ** self.m * self.integral.value

    def variance(self, t: float = 1.0) -> float:
        return covariance(self, self, t)

    def central_moment(self, ell: int, t: float = 1.0, cumulant: bool = False) -> float:
        """Exact ``ell``-th central moment (or cumulant) from the chaos expansion."""
        if ell == 1:
            return 0.0
        coefs = {n: self.g(t) * t ** (self.m - n) for n in range(1, self.m + 1)}
        return chaos_moment(self.family.kernels, ell, self.space, self.method, t=t,
                            coefficients=coefs, cumulant=cumulant).value

    def chaos_decomposition(self, config, t: float = 1.0) -> float:
        """``E F_t + g(t) sum_n t^(m-n) I_{n,t}(f_n)`` on a configuration."""
        pts = getattr(config, "points", config)
        acc = self.mean(t)
        for n in range(1, self.m + 1):
            acc += self.g(t) * t ** (self.m - n) * wiener_ito(pts, self.family[n], self.space,
                                                              t=t, method=self.method)
        return acc


def mean(u: UStatistic, t: float = 1.0) -> float:
    return u.mean(t)


def variance(u: UStatistic, t: float = 1.0) -> float:
    return u.variance(t)


def covariance(u: UStatistic, v: UStatistic, t: float = 1.0) -> float:
    """``g_u g_v sum_n t^(m_u + m_v - n) n! <f_n^u, f_n^v>_n``."""
    if u is v:
        inner = u.norms
    else:
        inner = {n: chaos_inner(u.kernel, v.kernel, n, u.space, u.method).value
                 for n in range(1, min(u.m, v.m) + 1)}
    acc = [t ** (u.m + v.m - n) * math.factorial(n) * val for n, val in inner.items()]
    return u.g(t) * v.g(t) * math.fsum(acc)


def evaluate(u: UStatistic, config, t: float = 1.0) -> float:
    return u.evaluate(config, t)


# -- normalization ---------------------------------------------------------------


@dataclass
class NormalizedFamily:
    """U-statistics of one Poisson process with their limiting covariance ``C``."""

    ustats: list[UStatistic]
    C: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ustats = list(self.ustats)
        if not self.ustats:
            raise ValueError("empty family")
        self.C = first_chaos_gram(self.ustats)
        eig = np.linalg.eigvalsh(self.C)
        if eig.min() < PSD_FLOOR * max(1.0, abs(eig).max()):
            raise ValueError(f"limiting covariance is not positive semidefinite (min eig {eig.min()})")
        for i, u in enumerate(self.ustats):
            if self.C[i, i] < DEGENERATE_NORM:
                warnings.warn(f"component {i} has a vanishing first chaos; "
                              "its Gaussian limit is degenerate at this scaling")

    @property
    def space(self) -> MeasureSpace:
        return self.ustats[0].space

    def __len__(self) -> int:
        return len(self.ustats)

    def location_scale(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-component ``(E F_t, g(t) t^(m - 1/2))``."""
        mu = np.array([u.mean(t) for u in self.ustats])
        sc = np.array([u.g(t) * t ** (u.m - 0.5) for u in self.ustats])
        return mu, sc

    def normalize(self, values: np.ndarray, t: float) -> np.ndarray:
        mu, sc = self.location_scale(t)
        return (np.asarray(values, dtype=float) - mu) / sc

    def evaluate(self, config, t: float) -> np.ndarray:
        return np.array([u.evaluate(config, t) for u in self.ustats])

    def first_chaos(self, config, t: float) -> np.ndarray:
        """``t^(-1/2) I_{1,t}(f_1^(i))`` for every component."""
        pts = getattr(config, "points", config)
        return np.array([wiener_ito(pts, u.family[1], u.space, t=t, method=u.method) / math.sqrt(t)
                         for u in self.ustats])

    def covariance(self, t: float) -> np.ndarray:
        k = len(self)
        _, sc = self.location_scale(t)
        cov = np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                cov[i, j] = cov[j, i] = covariance(self.ustats[i], self.ustats[j], t) / (sc[i] * sc[j])
        return cov


def normalize(family: Sequence[UStatistic] | NormalizedFamily, t: float):
    """Return ``(transform, C)`` where ``transform(F)`` gives the normalized vector."""
    fam = family if isinstance(family, NormalizedFamily) else NormalizedFamily(list(family))
    return (lambda values: fam.normalize(values, t)), fam.C


# -- d3 bound ----------------------------------------------------------------------


@dataclass(frozen=True)
class D3Bound:
    t: float
    total: float
    gaussian_term: float
    coupling_term: float
    A: float
    B: float
    third_moments: tuple[float, ...]


def d3_bound(family: Sequence[UStatistic] | NormalizedFamily, t: float) -> D3Bound:
    """Explicit bound on the d3 distance between the normalized vector and its Gaussian limit.

    ``(l^2/4) t^(-1/2) sum_i int |f_1^(i)|^3 dlambda + sqrt(A_t) sqrt(B_t)`` with
    ``A_t = l sum_i (E hatF_i^2 + E barF_i^2)`` and
    ``B_t = sum_i sum_{n>=2} t^(1-n) n! ||f_n^(i)||^2``.
    """
    fam = family if isinstance(family, NormalizedFamily) else NormalizedFamily(list(family))
    ell = len(fam)
    thirds = []
    a_sum = b_sum = 0.0
    for i, u in enumerate(fam.ustats):
        f1 = chaos_kernel(u.kernel, 1, u.space, u.method) if u.m > 1 else u.kernel
        third = kernel_lp(f1, 3, u.space, u.method).value
        if not math.isfinite(third):
            raise FloatingPointError(f"third absolute moment of f_1 diverges for component {i}")
        thirds.append(third)
        hat_sq = sum(t ** (1 - n) * math.factorial(n) * u.norms[n] for n in range(1, u.m + 1))
        a_sum += hat_sq + fam.C[i, i]
        b_sum += sum(t ** (1 - n) * math.factorial(n) * u.norms[n] for n in range(2, u.m + 1))
    A = ell * a_sum
    first = ell ** 2 / 4 * t ** -0.5 * sum(thirds)
    second = math.sqrt(A) * math.sqrt(b_sum)
    return D3Bound(t, first + second, first, second, A, b_sum, tuple(thirds))


# -- d3 surrogate ------------------------------------------------------------------


def _profiles():
    # Each entry: (name, phi).  |phi''| <= 1 and |phi'''| <= 1 on the real line.
    out = []
    for a in (0.5, 1.0, 2.0, 4.0):
        s = max(a * a, a ** 3)
        out.append((f"sin({a})", lambda y, a=a, s=s: np.sin(a * y) / s))
        out.append((f"cos({a})", lambda y, a=a, s=s: np.cos(a * y) / s))
    bump = 1.0 / GAUSS_BUMP_D3
    for b in (-1.0, 0.0, 0.5, 1.0):
        out.append((f"bump({b})", lambda y, b=b: bump * np.exp(-0.5 * (y - b) ** 2)))
    out.append(("sqrt1p", lambda y: np.sqrt(1.0 + y * y)))
    out.append(("logcosh", lambda y: np.logaddexp(y, -y) - math.log(2.0)))
    out.append(("softplus4", lambda y: 4.0 * np.logaddexp(0.0, y)))
    out.append(("xatan", lambda y: y * np.arctan(y) - 0.5 * np.log1p(y * y)))
    return out


# sup_y |d^3/dy^3 exp(-y^2/2)| = |3y - y^3| exp(-y^2/2) at y^2 = 3 - sqrt(6)
GAUSS_BUMP_D3 = float(abs(3 * math.sqrt(3 - math.sqrt(6)) - (3 - math.sqrt(6)) ** 1.5)
                      * math.exp(-(3 - math.sqrt(6)) / 2))

TEST_PROFILES = _profiles()


def probe_directions(ell: int) -> np.ndarray:
    """Unit directions: coordinate axes plus the normalized diagonal when ``ell > 1``."""
    dirs = list(np.eye(ell))
    if ell > 1:
        dirs.append(np.ones(ell) / math.sqrt(ell))
    return np.array(dirs)


def pivoted_cholesky(C: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == C`` for positive semidefinite ``C``."""
    C = np.asarray(C, dtype=float)
    k = len(C)
    if k == 1:
        return np.sqrt(np.maximum(C, 0.0))
    fac, piv, rank, info = scipy.linalg.lapack.dpstrf(C, lower=1, tol=-1.0)
    if info < 0:
        raise ValueError("pivoted Cholesky failed")
    L = np.tril(fac)
    L[:, rank:] = 0.0
    P = np.zeros((k, k))
    P[piv - 1, np.arange(k)] = 1.0
    return P @ L


@dataclass(frozen=True)
class D3Surrogate:
    value: float
    per_function: dict
    gaussian_error: float
    sample_error: float


def gaussian_expectations(C: np.ndarray, seed: int = 0, n_points: int = 1 << 20,
                          n_scrambles: int = 4) -> tuple[dict, dict]:
    """``E h(N)`` for all test functions, N ~ Normal(0, C), by scrambled Sobol points."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    ell = len(C)
    L = pivoted_cholesky(C)
    dirs = probe_directions(ell)
    per = n_points // n_scrambles
    m = int(round(math.log2(per)))
    parts = []
    for s in range(n_scrambles):
        sob = qmc.Sobol(d=ell, scramble=True, seed=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(s,))))
        u = sob.random_base2(m)
        z = scipy.special.ndtri(np.clip(u, 1e-16, 1 - 1e-16))
        proj = (z @ L.T) @ dirs.T
        parts.append({(name, d): float(np.mean(phi(proj[:, d])))
                      for name, phi in TEST_PROFILES for d in range(len(dirs))})
    keys = parts[0].keys()
    means = {k: float(np.mean([p[k] for p in parts])) for k in keys}
    errs = {k: float(np.std([p[k] for p in parts], ddof=1) / math.sqrt(n_scrambles)) for k in keys}
    return means, errs


def d3_surrogate(samples: np.ndarray, C: np.ndarray, seed: int = 0,
                 n_gauss: int = 1 << 20) -> D3Surrogate:
    """Lower bound for d3 over a fixed finite set of smooth test functions.

    Each test function is ``phi(u . x)`` with ``u`` a unit direction and
    ``phi`` a profile whose second and third derivatives are bounded by one,
    hence all second and third partials are bounded by one as well.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 1000:
        raise ValueError(f"need at least 1000 samples, got {len(x)}")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape != (x.shape[1], x.shape[1]):
        raise ValueError("covariance shape does not match the samples")
    gmeans, gerrs = gaussian_expectations(C, seed, n_gauss)
    dirs = probe_directions(x.shape[1])
    proj = x @ dirs.T
    per = {}
    serr = 0.0
    gerr = 0.0
    best = -1.0
    for name, phi in TEST_PROFILES:
        for d in range(len(dirs)):
            vals = phi(proj[:, d])
            diff = abs(float(np.mean(vals)) - gmeans[(name, d)])
            per[(name, d)] = diff
            if diff > best:
                best = diff
                serr = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
                gerr = gerrs[(name, d)]
    return D3Surrogate(best, per, gerr, serr)


# -- CLT experiment ----------------------------------------------------------------


@dataclass
class CLTSummary:
    t: float
    mean: np.ndarray
    var: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray
    cov: np.ndarray
    cumulants: np.ndarray
    d3_surrogate: float
    d3_bound: float
    samples: np.ndarray | None = None


def simulate_family(fam: NormalizedFamily, t: float, reps: int, seed: int,
                    workers: int = 1) -> np.ndarray:
    """``reps x l`` matrix of raw U-statistic values on independent processes."""
    sp = fam.space.scaled(t)

    def one(rng, i):
        pts = draw_points(sp, rng)
        return fam.evaluate(pts, t)

    return np.array(replicate(one, reps, seed, key=("ustat", repr(float(t))), workers=workers))


def summarize(z: np.ndarray) -> dict:
    z = np.atleast_2d(z.T).T
    mu = z.mean(axis=0)
    c = z - mu
    var = (c ** 2).mean(axis=0)
    skew = (c ** 3).mean(axis=0) / var ** 1.5
    kurt = (c ** 4).mean(axis=0) / var ** 2
    cov = np.cov(z, rowvar=False, ddof=1).reshape(z.shape[1], z.shape[1])
    cums = np.array([[sample_cumulant(z, [i] * r) for r in range(1, 5)] for i in range(z.shape[1])])
    return dict(mean=mu, var=z.var(axis=0, ddof=1), skew=skew, kurt=kurt, cov=cov, cumulants=cums)


def clt_experiment(family: Sequence[UStatistic] | NormalizedFamily, t_grid: Sequence[float],
                   reps: int, seed: int, workers: int = 1, keep_samples: bool = False,
                   surrogate: bool = True) -> list[CLTSummary]:
    """Simulate the normalized vector on a grid of intensities and summarize it."""
    fam = family if isinstance(family, NormalizedFamily) else NormalizedFamily(list(family))
    out = []
    for t in t_grid:
        z = fam.normalize(simulate_family(fam, t, reps, seed, workers), t)
        s = summarize(z)
        sur = d3_surrogate(z, fam.C, seed).value if surrogate else float("nan")
        out.append(CLTSummary(t=float(t), d3_surrogate=sur, d3_bound=d3_bound(fam, t).total,
                              samples=z if keep_samples else None, **s))
    return out


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
