"""Measure spaces, kernels and numerical integration against product measures.

Three backends are provided here and in :mod:`poissonchaos.flats`:

* :class:`AtomicSpace` -- finitely many weighted atoms; integrals are exact
  sums over atom tuples.
* :class:`BoxSpace` -- Lebesgue measure (optionally with a density) on an
  axis-parallel box; integrals by tensor midpoint rule or Monte Carlo.
* ``FlatSpace`` -- flats hitting a ball window; Monte Carlo only.

Points are passed around in each backend's native batch form: integer
atom indices for atomic spaces, ``(N, D)`` float arrays for boxes.  A
kernel callback receives one batch per argument and returns ``N`` values.

Every space carries an intensity multiplier ``t``; all masses and node
weights already include it, so integrating against ``space.scaled(t)``
integrates against ``t * lambda``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from .partitions import RowLayout, Subpartition, substitution_map
from .rng import stream

MC_BLOCK = 1 << 15
NODE_CHUNK = 1 << 18
DEFAULT_NODES = 64
DEFAULT_SAMPLES = 100_000


class IntegrationError(RuntimeError):
    pass


class UnsupportedMethodError(IntegrationError):
    pass


class DomainError(ValueError):
    """A restriction or space with infinite mass where a finite one is needed."""


# -- integration methods -----------------------------------------------------


@dataclass(frozen=True)
class Method:
    """How to integrate: ``exact``, ``quadrature`` (nodes per axis) or ``mc``."""

    kind: str = "auto"
    nodes: int = DEFAULT_NODES
    samples: int = DEFAULT_SAMPLES
    seed: int = 0

    @classmethod
    def parse(cls, spec: "str | Method | None") -> "Method":
        if spec is None:
            return cls()
        if isinstance(spec, Method):
            return spec
        head, *rest = str(spec).split(":")
        if head in ("auto", "exact"):
            return cls(head)
        if head == "quadrature":
            return cls("quadrature", nodes=int(rest[0]) if rest else DEFAULT_NODES)
        if head == "mc":
            samples = int(float(rest[0])) if rest else DEFAULT_SAMPLES
            seed = int(rest[1]) if len(rest) > 1 else 0
            return cls("mc", samples=samples, seed=seed)
        raise ValueError(f"unknown integration method {spec!r}")

    def resolve(self, space: "MeasureSpace", q: int) -> "Method":
        """Replace ``auto`` by the concrete method used for ``q``-fold integrals."""
        if self.kind != "auto":
            return self
        if isinstance(space, AtomicSpace):
            return replace(self, kind="exact")
        dim = space.quad_dim
        if dim is not None and dim * q <= 3:
            return replace(self, kind="quadrature")
        return replace(self, kind="mc")

    def __str__(self) -> str:
        if self.kind == "quadrature":
            return f"quadrature:{self.nodes}"
        if self.kind == "mc":
            return f"mc:{self.samples}:{self.seed}"
        return self.kind


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    stderr: float = 0.0
    method: str = "exact"
    n_samples: int = 0

    def __float__(self) -> float:
        return float(self.value)

    def scaled(self, c: float) -> "IntegralEstimate":
        return replace(self, value=self.value * c, stderr=self.stderr * abs(c))

    def __add__(self, other: "IntegralEstimate") -> "IntegralEstimate":
        method = self.method if self.method == other.method else "mixed"
        return IntegralEstimate(
            self.value + other.value,
            math.hypot(self.stderr, other.stderr),
            method,
            self.n_samples + other.n_samples,
        )


# -- kernels -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Kernel:
    """A real function of ``arity`` points.

    ``constant`` marks kernels known to be constant; integrals of those are
    closed form.  ``symmetric`` is a promise by the caller and is used to
    reduce sums over ordered tuples to sums over subsets.
    """

    arity: int
    func: Callable[..., np.ndarray] | None = None
    symmetric: bool = True
    constant: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("kernel arity must be at least 1")
        if self.func is None and self.constant is None:
            raise ValueError("kernel needs a callback or a constant")

    def __call__(self, *batches) -> np.ndarray:
        if len(batches) != self.arity:
            raise ValueError(f"kernel {self.name!r} takes {self.arity} arguments, got {len(batches)}")
        n = len(batches[0])
        if self.constant is not None:
            return np.full(n, float(self.constant))
        out = np.asarray(self.func(*batches), dtype=float)
        if out.shape != (n,):
            out = np.broadcast_to(out, (n,)).astype(float)
        return out

    def map(self, op: Callable[[np.ndarray], np.ndarray], name: str) -> "Kernel":
        if self.constant is not None:
            return Kernel(self.arity, constant=float(op(np.array([self.constant]))[0]),
                          symmetric=self.symmetric, name=name)
        return Kernel(self.arity, lambda *xs: op(self(*xs)), self.symmetric, name=name)

    def abs(self) -> "Kernel":
        return self.map(np.abs, f"|{self.name}|")

    def power(self, p: float) -> "Kernel":
        return self.map(lambda v: v ** p, f"{self.name}^{p}")

    def scale(self, c: float) -> "Kernel":
        return self.map(lambda v: c * v, f"{c}*{self.name}")

    def times(self, other: "Kernel") -> "Kernel":
        if other.arity != self.arity:
            raise ValueError("pointwise product needs equal arity")
        if self.constant is not None and other.constant is not None:
            return Kernel(self.arity, constant=self.constant * other.constant)
        return Kernel(self.arity, lambda *xs: self(*xs) * other(*xs),
                      self.symmetric and other.symmetric, name=f"{self.name}*{other.name}")


def constant_kernel(c: float, arity: int) -> Kernel:
    return Kernel(arity, constant=float(c), name=f"const({c})")


# -- spaces ----------------------------------------------------------------------


class MeasureSpace:
    """Interface shared by all backends.

    Subclasses provide ``base_mass``, ``sample`` and, when quadrature or
    exact summation is possible, ``cells``.
    """

    t: float = 1.0
    quad_dim: int | None = None

    def base_mass(self) -> float:
        raise NotImplementedError

    def mass(self) -> float:
        return self.t * self.base_mass()

    def scaled(self, t: float) -> "MeasureSpace":
        if t <= 0:
            raise ValueError("intensity must be positive")
        return replace(self, t=self.t * t)

    def sample(self, n: int, rng: np.random.Generator):
        """``n`` i.i.d. points from the normalized measure, native batch."""
        raise NotImplementedError

    def cells(self, nodes: int):
        """Quadrature cells ``(points, weights)`` at ``t = 1``."""
        raise UnsupportedMethodError(f"{type(self).__name__} has no quadrature rule")

    def empty(self):
        return self.sample(0, np.random.default_rng(0))

    def concat(self, batches: Sequence):
        return np.concatenate(batches)

    def restrict(self, region) -> "MeasureSpace":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class AtomicSpace(MeasureSpace):
    """Weighted atoms; points are integer indices into ``labels``.

    ``values`` are numeric coordinates offered to kernels (defaults to
    ``1, 2, ...``).  ``active`` marks atoms inside the current restriction;
    indices keep referring to the full atom list after restricting.
    """

    labels: tuple
    weights: np.ndarray
    values: np.ndarray | None = None
    active: np.ndarray | None = None
    t: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.labels) or len(w) == 0:
            raise ValueError("need one weight per atom")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("atom weights must be finite and strictly positive")
        object.__setattr__(self, "weights", w)
        vals = (np.arange(1, len(w) + 1, dtype=float) if self.values is None
                else np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        act = np.ones(len(w), bool) if self.active is None else np.asarray(self.active, bool)
        object.__setattr__(self, "active", act)

    @classmethod
    def from_atoms(cls, atoms: Sequence[Sequence], t: float = 1.0) -> "AtomicSpace":
        """``atoms`` is ``[[label, weight], ...]`` or ``[[label, weight, value], ...]``."""
        labels = tuple(a[0] for a in atoms)
        weights = [float(a[1]) for a in atoms]
        values = None
        if all(len(a) > 2 for a in atoms):
            values = [float(a[2]) for a in atoms]
        return cls(labels, np.array(weights), values, t=t)

    def index(self, label) -> int:
        return self.labels.index(label)

    def mask(self, labels) -> np.ndarray:
        m = np.zeros(len(self.labels), bool)
        for lab in labels:
            m[self.index(lab)] = True
        return m

    def base_mass(self) -> float:
        return float(self.weights[self.active].sum())

    def restrict(self, region) -> "AtomicSpace":
        m = region if isinstance(region, np.ndarray) and region.dtype == bool else self.mask(region)
        return replace(self, active=self.active & m)

    def sample(self, n, rng):
        idx = np.flatnonzero(self.active)
        p = self.weights[idx] / self.weights[idx].sum()
        return idx[rng.choice(len(idx), size=n, p=p)] if n else np.empty(0, dtype=np.int64)

    def sample_counts(self, rng) -> np.ndarray:
        """Poisson counts per atom at intensity ``t``."""
        lam = np.where(self.active, self.t * self.weights, 0.0)
        return rng.poisson(lam)

    def cells(self, nodes=None):
        idx = np.flatnonzero(self.active)
        return idx, self.weights[idx]


@dataclass(frozen=True, eq=False)
class BoxSpace(MeasureSpace):
    """Lebesgue measure on a box, optionally with a bounded density.

    ``density`` maps an ``(N, D)`` array to ``N`` non-negative values and
    must not exceed ``density_max``.
    """

    bounds: np.ndarray
    density: Callable[[np.ndarray], np.ndarray] | None = None
    density_max: float | None = None
    t: float = 1.0
    _mass_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.shape[1] != 2:
            raise ValueError("bounds must be a list of [lo, hi] pairs")
        if not np.all(np.isfinite(b)):
            raise DomainError("box bounds must be finite")
        if np.any(b[:, 1] <= b[:, 0]):
            raise ValueError("box must have positive volume")
        object.__setattr__(self, "bounds", b)
        if self.density is not None and self.density_max is None:
            raise ValueError("a density needs density_max for sampling")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def quad_dim(self) -> int:
        return self.dim

    @property
    def volume(self) -> float:
        return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))

    def base_mass(self) -> float:
        if self.density is None:
            return self.volume
        if "m" not in self._mass_cache:
            nodes = 256 if self.dim <= 2 else 32
            pts, w = self.cells(nodes)
            self._mass_cache["m"] = float(np.sum(w))
        return self._mass_cache["m"]

    def restrict(self, region) -> "BoxSpace":
        """Restrict to a sub-box ``[[lo, hi], ...]`` or to a predicate.

        A predicate restriction keeps the bounding box and multiplies the
        density by the predicate's indicator.
        """
        if callable(region):
            base = self.density

            def dens(x):
                d = np.ones(len(x)) if base is None else base(x)
                return d * np.asarray(region(x), dtype=float)

            return replace(self, density=dens, density_max=self.density_max or 1.0,
                           _mass_cache={})
        sub = np.atleast_2d(np.asarray(region, dtype=float))
        if not np.all(np.isfinite(sub)):
            raise DomainError("restriction must have finite mass")
        lo = np.maximum(sub[:, 0], self.bounds[:, 0])
        hi = np.minimum(sub[:, 1], self.bounds[:, 1])
        return replace(self, bounds=np.stack([lo, hi], axis=1), _mass_cache={})

    def _uniform(self, n, rng):
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + (hi - lo) * rng.random((n, self.dim))

    def sample(self, n, rng):
        if self.density is None:
            return self._uniform(n, rng)
        out = []
        need = n
        while need > 0:
            cand = self._uniform(max(2 * need, 64), rng)
            keep = rng.random(len(cand)) * self.density_max < self.density(cand)
            out.append(cand[keep][:need])
            need -= len(out[-1])
        return np.concatenate(out) if out else np.empty((0, self.dim))

    def sample_poisson_points(self, rng):
        """Poisson process at intensity ``t`` by thinning a homogeneous one."""
        if self.density is None:
            n = rng.poisson(self.t * self.volume)
            return self._uniform(n, rng)
        n = rng.poisson(self.t * self.density_max * self.volume)
        cand = self._uniform(n, rng)
        keep = rng.random(n) * self.density_max < self.density(cand)
        return cand[keep]

    def cells(self, nodes=DEFAULT_NODES):
        axes = [lo + (np.arange(nodes) + 0.5) * (hi - lo) / nodes for lo, hi in self.bounds]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        w = np.full(len(grid), self.volume / len(grid))
        if self.density is not None:
            w = w * self.density(grid)
        return grid, w

    def empty(self):
        return np.empty((0, self.dim))


# -- batches ---------------------------------------------------------------------


def batch_repeat(batch, k: int):
    """Each row repeated ``k`` times in place (``aabb``)."""
    if isinstance(batch, np.ndarray):
        return np.repeat(batch, k, axis=0)
    return batch.repeat(k)


def batch_tile(batch, k: int):
    """Whole batch repeated ``k`` times (``abab``)."""
    if isinstance(batch, np.ndarray):
        return np.tile(batch, (k,) + (1,) * (batch.ndim - 1))
    return batch.tile(k)


def batch_keys(batch) -> list[bytes]:
    """Hashable per-row keys, used by memoizing kernels."""
    if isinstance(batch, np.ndarray):
        if batch.ndim == 1:
            return [bytes(memoryview(np.ascontiguousarray(batch[i:i + 1]))) for i in range(len(batch))]
        arr = np.ascontiguousarray(batch)
        return [arr[i].tobytes() for i in range(len(arr))]
    return batch.keys()


# -- node sets -------------------------------------------------------------------


def iter_nodes(space: MeasureSpace, q: int, nodes: int = DEFAULT_NODES,
               chunk: int = NODE_CHUNK) -> Iterator[tuple[list, np.ndarray]]:
    """Tensor-product nodes of ``space**q`` in chunks, weights include ``t**q``."""
    pts, w = space.cells(nodes)
    g = len(w)
    total = g ** q
    scale = space.t ** q
    for lo in range(0, total, chunk):
        flat = np.arange(lo, min(lo + chunk, total))
        idx = np.unravel_index(flat, (g,) * q)
        weights = scale * np.prod([w[i] for i in idx], axis=0)
        yield [pts[i] for i in idx], weights


def node_set(space: MeasureSpace, q: int, method: "str | Method" = "auto") -> tuple[list, np.ndarray]:
    """Materialized nodes and weights for ``q``-fold integrals.

    Monte Carlo node sets are a fixed seeded sample with equal weights, so
    reusing one node set gives consistent estimates across related
    integrals.
    """
    m = Method.parse(method).resolve(space, q)
    if m.kind == "exact" and not isinstance(space, AtomicSpace):
        raise UnsupportedMethodError("exact integration needs an atomic space")
    if m.kind in ("exact", "quadrature"):
        parts = list(iter_nodes(space, q, m.nodes, chunk=1 << 62))
        return parts[0]
    rng = stream(m.seed, "nodes", q)
    batches = [space.sample(m.samples, rng) for _ in range(q)]
    w = np.full(m.samples, space.mass() ** q / m.samples)
    return batches, w


# -- integration -----------------------------------------------------------------


def integrate(kernel: Kernel, space: MeasureSpace, q: int | None = None,
              method: "str | Method" = "auto") -> IntegralEstimate:
    """Estimate ``int f d(lambda_t)^q``."""
    q = kernel.arity if q is None else q
    if q != kernel.arity:
        raise ValueError(f"kernel arity {kernel.arity} != power {q}")
    m = Method.parse(method).resolve(space, q)
    if m.kind == "exact" and not isinstance(space, AtomicSpace):
        raise UnsupportedMethodError("exact integration needs an atomic space")
    if m.kind == "quadrature" and space.quad_dim is None and not isinstance(space, AtomicSpace):
        raise UnsupportedMethodError(f"no quadrature on {type(space).__name__}")
    if kernel.constant is not None:
        return IntegralEstimate(kernel.constant * space.mass() ** q, 0.0, str(m), 0)
    if m.kind in ("exact", "quadrature"):
        acc = []
        for batches, w in iter_nodes(space, q, m.nodes):
            acc.append(np.dot(w, kernel(*batches)))
        tag = "exact" if isinstance(space, AtomicSpace) else str(m)
        return IntegralEstimate(float(np.sum(acc)), 0.0, tag, 0)
    return _integrate_mc(kernel, space, q, m)


def _integrate_mc(kernel, space, q, m: Method) -> IntegralEstimate:
    mass_q = space.mass() ** q
    s1 = s2 = 0.0
    n_total = m.samples
    for b, lo in enumerate(range(0, n_total, MC_BLOCK)):
        size = min(MC_BLOCK, n_total - lo)
        rng = stream(m.seed, "mc", q, b)
        vals = kernel(*[space.sample(size, rng) for _ in range(q)])
        if not np.all(np.isfinite(vals)):
            raise IntegrationError(f"non-finite integrand values in {kernel.name!r}")
        s1 += float(np.sum(vals))
        s2 += float(np.sum(vals * vals))
    mean = s1 / n_total
    var = max(s2 / n_total - mean * mean, 0.0) * n_total / max(n_total - 1, 1)
    return IntegralEstimate(mass_q * mean, mass_q * math.sqrt(var / n_total), str(m), n_total)


def partial_integral(kernel: Kernel, fixed: Sequence, q: int, space: MeasureSpace,
                     nodes: tuple[list, np.ndarray] | None = None,
                     method: "str | Method" = "auto") -> np.ndarray:
    """``x -> int f(x, y) d(lambda_t)^q(y)`` at each of the ``N`` fixed points.

    ``fixed`` holds ``arity - q`` batches of equal length.  Pass ``nodes``
    (from :func:`node_set`) to share one node set across calls.
    """
    if len(fixed) + q != kernel.arity:
        raise ValueError("fixed arguments plus q must equal the kernel arity")
    n = len(fixed[0]) if fixed else 1
    if q == 0:
        return kernel(*fixed)
    if kernel.constant is not None:
        return np.full(n, kernel.constant * space.mass() ** q)
    ys, w = node_set(space, q, method) if nodes is None else nodes
    g = len(w)
    if not fixed:
        return np.array([np.dot(w, kernel(*ys))])
    out = np.empty(n)
    step = max(1, NODE_CHUNK // max(g, 1))
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        k = hi - lo
        xs = [batch_repeat(b[lo:hi], g) for b in fixed]
        yy = [batch_tile(y, k) for y in ys]
        vals = kernel(*xs, *yy).reshape(k, g)
        out[lo:hi] = vals @ w
    return out


def total_mass(space: MeasureSpace, restriction=None) -> float:
    """``lambda_t(restriction)``; the whole space when ``restriction`` is None."""
    sp = space if restriction is None else space.restrict(restriction)
    m = sp.mass()
    if not math.isfinite(m):
        raise DomainError("restriction has infinite mass")
    return m


# -- contractions ----------------------------------------------------------------


def contraction_kernel(kernels: Sequence[Kernel], sigma: Subpartition) -> Kernel:
    """``(f_1 (x) ... (x) f_l)_sigma`` as a kernel of ``sigma.arity`` arguments."""
    layout = RowLayout([k.arity for k in kernels])
    if sigma.n != layout.n:
        raise ValueError(f"sigma acts on [{sigma.n}] but kernel arities sum to {layout.n}")
    targets = substitution_map(sigma, layout.n)
    rows = [[targets[j - 1] - 1 for j in row] for row in layout.rows]
    q = sigma.arity
    consts = [k.constant for k in kernels]
    if all(c is not None for c in consts):
        return Kernel(q, constant=float(np.prod(consts)), symmetric=False, name="contraction")

    def func(*ys):
        out = np.ones(len(ys[0]))
        for k, r in zip(kernels, rows):
            out = out * k(*[ys[i] for i in r])
        return out

    return Kernel(q, func, symmetric=False, name="contraction")


def contraction_integral(kernels: Sequence[Kernel], sigma: Subpartition, space: MeasureSpace,
                         method: "str | Method" = "auto") -> IntegralEstimate:
    """``int (f_1 (x) ... (x) f_l)_sigma d(lambda_t)^{|sigma| + n - ||sigma||}``."""
    g = contraction_kernel(kernels, sigma)
    return integrate(g, space, g.arity, method)


def check_symmetry(kernel: Kernel, space: MeasureSpace, n_points: int = 64,
                   seed: int = 0, rtol: float = 1e-12) -> bool:
    """Spot check invariance under random argument permutations."""
    rng = stream(seed, "symmetry")
    xs = [space.sample(n_points, rng) for _ in range(kernel.arity)]
    base = kernel(*xs)
    for _ in range(5):
        perm = rng.permutation(kernel.arity)
        other = kernel(*[xs[i] for i in perm])
        if not np.allclose(base, other, rtol=rtol, atol=rtol * (1 + np.max(np.abs(base), initial=0))):
            return False
    return True
