"""Mixed moments and joint cumulants of multiple Wiener-Ito integrals.

Moments are sums over non-flat partitions with blocks of size at least
two; cumulants keep only the partitions whose blocks link all rows.  Each
partition contributes one contraction integral, computed once against
``lambda`` and multiplied by ``t**|sigma|`` for intensity ``t``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable, Mapping, Sequence

import numpy as np

from .measure import (
    IntegralEstimate,
    Kernel,
    MeasureSpace,
    Method,
    contraction_integral,
)
from .partitions import (
    RowLayout,
    Subpartition,
    class_options,
    enumerate_partitions,
    perfect_matchings,
    set_partitions,
)


@dataclass(frozen=True)
class Contribution:
    sigma: Subpartition
    estimate: IntegralEstimate


@lru_cache(maxsize=4096)
def _contraction(kernels: tuple, sigma: Subpartition, space: MeasureSpace,
                 method: Method) -> IntegralEstimate:
    return contraction_integral(list(kernels), sigma, space, method)


def clear_cache() -> None:
    _contraction.cache_clear()


def _sum(estimates: Sequence[IntegralEstimate], weights: Sequence[float] | None = None,
         tag: str = "sum") -> IntegralEstimate:
    if not estimates:
        return IntegralEstimate(0.0, 0.0, tag)
    w = np.ones(len(estimates)) if weights is None else np.asarray(weights, float)
    vals = np.array([e.value for e in estimates]) * w
    errs = np.array([e.stderr for e in estimates]) * np.abs(w)
    methods = {e.method for e in estimates}
    return IntegralEstimate(float(np.sum(vals)), float(np.sqrt(np.sum(errs ** 2))),
                            methods.pop() if len(methods) == 1 else "mixed",
                            int(sum(e.n_samples for e in estimates)))


def partition_contributions(kernels: Sequence[Kernel], space: MeasureSpace, cls: str = "ge2",
                            method="auto", t: float = 1.0,
                            limit: int | None = None) -> list[Contribution]:
    """Per-partition terms of the diagram formula, in canonical order."""
    layout = RowLayout([k.arity for k in kernels])
    m = Method.parse(method)
    out = []
    for sigma in enumerate_partitions(layout, limit=limit, **class_options(cls)):
        est = _contraction(tuple(kernels), sigma, space, m)
        out.append(Contribution(sigma, est.scaled(t ** sigma.size)))
    return out


def mixed_moment(kernels: Sequence[Kernel], space: MeasureSpace, method="auto", t: float = 1.0,
                 limit: int | None = None) -> IntegralEstimate:
    """``E prod_i I_{n_i}(f_i)`` for the Poisson process with intensity ``t * space``."""
    terms = partition_contributions(kernels, space, "ge2", method, t, limit)
    return _sum([c.estimate for c in terms])


def joint_cumulant(kernels: Sequence[Kernel], space: MeasureSpace, method="auto", t: float = 1.0,
                   limit: int | None = None) -> IntegralEstimate:
    """Joint cumulant of ``I_{n_1}(f_1), ..., I_{n_l}(f_l)``."""
    if len(kernels) == 1:
        return IntegralEstimate(0.0, 0.0, "exact")
    terms = partition_contributions(kernels, space, "connected", method, t, limit)
    return _sum([c.estimate for c in terms])


# -- moments <-> cumulants -------------------------------------------------------


def moment_cumulant_invert(values: Mapping[frozenset, float], to: str = "cumulants"
                           ) -> dict[frozenset, float]:
    """Convert joint moments over all non-empty subsets to joint cumulants, or back.

    ``values`` maps every non-empty subset ``S`` of some index set to
    ``E prod_{j in S} X_j`` (``to="cumulants"``) or to the joint cumulant
    of ``(X_j)_{j in S}`` (``to="moments"``).
    """
    if to not in ("cumulants", "moments"):
        raise ValueError("to must be 'cumulants' or 'moments'")
    values = {frozenset(k): float(v) for k, v in values.items()}
    ground = frozenset().union(*values) if values else frozenset()
    subsets = [frozenset(c) for r in range(1, len(ground) + 1)
               for c in itertools.combinations(sorted(ground, key=repr), r)]
    missing = [s for s in subsets if s not in values]
    if missing:
        raise ValueError(f"missing joint values for subsets {sorted(map(sorted, missing))[:5]}")
    out = {}
    for s in subsets:
        acc = []
        for blocks in set_partitions(sorted(s, key=repr)):
            prod = math.prod(values[frozenset(b)] for b in blocks)
            if to == "cumulants":
                k = len(blocks)
                prod *= (-1) ** (k - 1) * math.factorial(k - 1)
            acc.append(prod)
        out[s] = math.fsum(acc)
    return out


def cumulants_from_raw(raw: Sequence[float]) -> list[float]:
    """Cumulants ``k_1..k_n`` of one variable from raw moments ``E X^1..E X^n``."""
    n = len(raw)
    vals = {frozenset(c): raw[len(c) - 1]
            for r in range(1, n + 1) for c in itertools.combinations(range(n), r)}
    cum = moment_cumulant_invert(vals)
    return [cum[frozenset(range(r))] for r in range(1, n + 1)]


def raw_from_cumulants(kappa: Sequence[float]) -> list[float]:
    n = len(kappa)
    vals = {frozenset(c): kappa[len(c) - 1]
            for r in range(1, n + 1) for c in itertools.combinations(range(n), r)}
    mom = moment_cumulant_invert(vals, to="moments")
    return [mom[frozenset(range(r))] for r in range(1, n + 1)]


def sample_joint_moments(samples: np.ndarray, index: Sequence[int]) -> dict[frozenset, float]:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    pos = range(len(index))
    out = {}
    for r in range(1, len(index) + 1):
        for c in itertools.combinations(pos, r):
            out[frozenset(c)] = float(np.mean(np.prod(x[:, [index[j] for j in c]], axis=1)))
    return out


def sample_cumulant(samples: np.ndarray, index: Sequence[int]) -> float:
    """Plug-in joint cumulant of columns ``index`` (repeats allowed) of ``samples``."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    mom = sample_joint_moments(x, index)
    return moment_cumulant_invert(mom)[frozenset(range(len(index)))]


# -- finite chaos expansions -----------------------------------------------------


def _multisets(active: Sequence[int], ell: int):
    for combo in itertools.combinations_with_replacement(sorted(active), ell):
        counts = Counter(combo)
        mult = math.factorial(ell)
        for c in counts.values():
            mult //= math.factorial(c)
        yield combo, mult


def chaos_moment(family: Mapping[int, Kernel], ell: int, space: MeasureSpace, method="auto",
                 t: float = 1.0, coefficients: Mapping[int, float] | None = None,
                 cumulant: bool = False, limit: int | None = None) -> IntegralEstimate:
    """``ell``-th moment (or cumulant) of ``F = sum_n c_n I_n(f_n)``.

    ``family`` maps each active order ``n`` to ``f_n``; ``coefficients``
    default to one and ``t`` is the intensity of the process.
    """
    coefficients = coefficients or {}
    cls = "connected" if cumulant else "ge2"
    if cumulant and ell == 1:
        return IntegralEstimate(0.0, 0.0, "exact")
    ests, weights = [], []
    for combo, mult in _multisets(list(family), ell):
        kernels = [family[n] for n in combo]
        coef = mult * math.prod(coefficients.get(n, 1.0) for n in combo)
        if coef == 0:
            continue
        for c in partition_contributions(kernels, space, cls, method, t, limit):
            ests.append(c.estimate)
            weights.append(coef)
    return _sum(ests, weights)


def chaos_cumulant(family: Mapping[int, Kernel], ell: int, space: MeasureSpace, method="auto",
                   t: float = 1.0, coefficients: Mapping[int, float] | None = None,
                   limit: int | None = None) -> IntegralEstimate:
    return chaos_moment(family, ell, space, method, t, coefficients, cumulant=True, limit=limit)


def pairing_sum(inner: np.ndarray, items: Sequence[Hashable] | None = None) -> float:
    """Sum over perfect matchings of ``items`` of products of ``inner[i, j]``."""
    items = list(range(len(inner))) if items is None else list(items)
    return math.fsum(math.prod(inner[i][j] for i, j in m) for m in perfect_matchings(items))


def first_chaos_gram(ustats: Sequence, space: MeasureSpace | None = None,
                     method="auto") -> np.ndarray:
    """Matrix ``<f_1^(i), f_1^(j)>_1`` for U-statistics exposing ``.kernel`` and ``.space``."""
    from .chaos import chaos_inner

    k = len(ustats)
    gram = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            sp = space or ustats[i].space
            v = chaos_inner(ustats[i].kernel, ustats[j].kernel, 1, sp, method).value
            gram[i, j] = gram[j, i] = v
    return gram


def asymptotic_mixed_moment(ustats, space: MeasureSpace | None = None, method="auto") -> float:
    """Limit of ``E prod_i (F_t^(i) - E F_t^(i)) / (g_i(t) t^(m_i - 1/2))``.

    ``ustats`` is a list of U-statistics or directly the matrix of first
    chaos inner products.  The limit sums products of inner products over
    perfect matchings, so it vanishes for an odd number of components.
    """
    if isinstance(ustats, np.ndarray):
        gram = ustats
    else:
        gram = first_chaos_gram(ustats, space, method)
    if gram.shape[0] % 2:
        return 0.0
    return pairing_sum(gram)


# -- integrability diagnostic ----------------------------------------------------


@dataclass(frozen=True)
class IntegrabilityReport:
    sigma: Subpartition
    estimates: tuple[float, ...]
    suspicious: bool


def verify_integrability(kernels: Sequence[Kernel], space: MeasureSpace,
                         samples: Sequence[int] = (1_000, 10_000, 100_000), seed: int = 0,
                         growth: float = 2.0, limit: int | None = None) -> list[IntegrabilityReport]:
    """Estimate ``int (|f_1| (x) ... (x) |f_l|)_sigma`` for every non-flat partition.

    The integrability condition cannot be decided from callbacks; this only
    flags partitions whose Monte Carlo estimates look unreliable: a
    non-finite value, growth by more than ``growth`` from the smallest to
    the largest sample, a standard error that shrinks much slower than
    ``n^(-1/2)``, or a relative error above 10% at the largest sample.
    Heavy but integrable tails may be flagged too.
    """
    layout = RowLayout([k.arity for k in kernels])
    absk = [k.abs() for k in kernels]
    samples = sorted(samples)
    out = []
    for sigma in enumerate_partitions(layout, limit=limit):
        ests = [contraction_integral(absk, sigma, space, Method("mc", samples=n, seed=seed))
                for n in samples]
        vals = [e.value for e in ests]
        bad = not all(math.isfinite(v) for v in vals)
        if not bad and vals[0] > 0:
            bad = vals[-1] > growth * vals[0]
        if not bad and vals[-1] > 0:
            rel = [e.stderr / e.value if e.value > 0 else 0.0 for e in ests]
            bad = rel[-1] > 0.1
            if len(samples) > 1 and ests[-1].stderr > 0:
                expected = math.sqrt(samples[-1] / samples[0])
                bad = bad or ests[0].stderr / ests[-1].stderr < 0.25 * expected
        if bad:
            warnings.warn(f"possible divergence of |f|-contraction for {sigma.render()}: {vals}")
        out.append(IntegrabilityReport(sigma, tuple(vals), bad))
    return out
