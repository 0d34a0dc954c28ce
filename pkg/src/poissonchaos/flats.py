"""Stationary Poisson k-flat processes and their intersection processes.

Flats are affine ``k``-dimensional subspaces of ``R^d``.  Only flats
hitting a ball window carry mass for the functionals considered here, so
the intensity measure is always handled restricted to the flats hitting
one bounding ball; its total mass is ``kappa_(d-k) R^(d-k)`` whatever the
direction distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .measure import IntegralEstimate, Kernel, MeasureSpace, Method, integrate
from .chaos import chaos_inner
from .poisson import draw_points, factorial_sum
from .rng import replicate, stream

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-9


def ball_volume(q: int) -> float:
    """Volume ``kappa_q`` of the unit ball in ``R^q``."""
    return math.pi ** (q / 2) / math.gamma(q / 2 + 1)


# -- types -----------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("window radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @classmethod
    def parse(cls, text: str) -> "Window":
        """``ball:x1,x2,...:R``."""
        kind, c, r = text.split(":")
        if kind != "ball":
            raise ValueError("only ball windows are supported")
        return cls(tuple(float(v) for v in c.split(",")), float(r))

    def scaled(self, r: float) -> "Window":
        return Window(tuple(r * c for c in self.center), r * self.radius)


def bounding_window(windows: Sequence[Window]) -> Window:
    """A ball containing all ``windows`` (centered at the mean of their centers)."""
    cs = np.array([w.center for w in windows])
    c = cs.mean(axis=0)
    r = max(np.linalg.norm(np.array(w.center) - c) + w.radius for w in windows)
    return Window(tuple(c), float(r))


@dataclass(frozen=True)
class FlatProcessSpec:
    """Ambient dimension ``d``, flat dimension ``k``, intensity ``t`` and directions.

    ``directions`` is ``"isotropic"`` or a list of ``k x d`` orthonormal
    frames with ``probs`` summing to one.
    """

    d: int
    k: int
    t: float = 1.0
    directions: object = "isotropic"
    probs: tuple | None = None

    def __post_init__(self):
        if not (self.d >= 1 and 0 <= self.k < self.d):
            raise ValueError("need d >= 1 and 0 <= k < d")
        if not self.t > 0:
            raise ValueError("intensity must be positive")
        if not self.isotropic:
            frames = np.asarray(self.directions, dtype=float).reshape(-1, self.k, self.d)
            for f in frames:
                if not np.allclose(f @ f.T, np.eye(self.k), atol=1e-10):
                    raise ValueError("direction frames must be orthonormal")
            p = np.full(len(frames), 1 / len(frames)) if self.probs is None else np.asarray(self.probs, float)
            if len(p) != len(frames) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError("direction probabilities must be nonnegative and sum to 1")
            object.__setattr__(self, "directions", frames)
            object.__setattr__(self, "probs", tuple(p))

    @property
    def isotropic(self) -> bool:
        return isinstance(self.directions, str) and self.directions == "isotropic"


@dataclass(frozen=True)
class Flat:
    """``offset + span(direction)`` with ``offset`` orthogonal to the direction."""

    direction: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.direction, dtype=float).reshape(-1, len(self.offset))
        o = np.asarray(self.offset, dtype=float)
        if not np.allclose(f @ f.T, np.eye(len(f)), atol=1e-10):
            raise ValueError("flat direction must be orthonormal")
        if len(f) and np.max(np.abs(f @ o)) > 1e-10 * max(1.0, np.linalg.norm(o)):
            raise ValueError("flat offset must be orthogonal to its direction")
        object.__setattr__(self, "direction", f)
        object.__setattr__(self, "offset", o)

    @classmethod
    def through(cls, point, direction) -> "Flat":
        """The flat through ``point`` spanned by the rows of ``direction``."""
        p = np.asarray(point, dtype=float)
        f = np.asarray(direction, dtype=float).reshape(-1, len(p))
        q, _ = np.linalg.qr(f.T)
        f = q.T
        return cls(f, p - f.T @ (f @ p))


def _complement(frames: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the orthogonal complements, ``(N, d-k, d)``."""
    n, k, d = frames.shape
    if k == 0:
        return np.broadcast_to(np.eye(d), (n, d, d)).copy()
    _, _, vt = np.linalg.svd(frames, full_matrices=True)
    return vt[:, k:, :]


@dataclass(frozen=True, eq=False)
class FlatBatch:
    """Native batch of flats: frames ``(N,k,d)``, normals ``(N,d-k,d)``, offsets ``(N,d)``."""

    frames: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_flats(cls, flats: Sequence[Flat], d: int | None = None, k: int | None = None) -> "FlatBatch":
        if not flats:
            if d is None or k is None:
                raise ValueError("empty batch needs d and k")
            return cls(np.zeros((0, k, d)), np.zeros((0, d - k, d)), np.zeros((0, d)))
        frames = np.stack([f.direction for f in flats])
        offsets = np.stack([f.offset for f in flats])
        return cls(frames, _complement(frames), offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    def __getitem__(self, idx) -> "FlatBatch":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return FlatBatch(self.frames[idx], self.normals[idx], self.offsets[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield Flat(self.frames[i], self.offsets[i])

    def repeat(self, k: int) -> "FlatBatch":
        return FlatBatch(*(np.repeat(a, k, axis=0) for a in (self.frames, self.normals, self.offsets)))

    def tile(self, k: int) -> "FlatBatch":
        return FlatBatch(*(np.tile(a, (k,) + (1,) * (a.ndim - 1))
                           for a in (self.frames, self.normals, self.offsets)))

    def keys(self) -> list[bytes]:
        f = np.ascontiguousarray(self.frames.reshape(len(self), -1))
        o = np.ascontiguousarray(self.offsets)
        return [f[i].tobytes() + o[i].tobytes() for i in range(len(self))]

    def rotated(self, rot: np.ndarray) -> "FlatBatch":
        """Image under the linear isometry ``x -> rot @ x``."""
        rot = np.asarray(rot, dtype=float)
        return FlatBatch(self.frames @ rot.T, self.normals @ rot.T, self.offsets @ rot.T)

    @staticmethod
    def concat(batches: Sequence["FlatBatch"]) -> "FlatBatch":
        return FlatBatch(*(np.concatenate([getattr(b, a) for b in batches])
                           for a in ("frames", "normals", "offsets")))


@dataclass(frozen=True, eq=False)
class FlatSpace(MeasureSpace):
    """Intensity measure of a stationary flat process restricted to flats hitting ``window``."""

    spec: FlatProcessSpec
    window: Window
    t: float = 1.0
    quad_dim = None

    def __post_init__(self):
        if self.window.d != self.spec.d:
            raise ValueError("window dimension does not match the process")

    def base_mass(self) -> float:
        return hitting_mass(self.spec, self.window)

    def sample(self, n: int, rng: np.random.Generator) -> FlatBatch:
        d, k = self.spec.d, self.spec.k
        if self.spec.isotropic:
            g = rng.standard_normal((n, d, d))
            q, _ = np.linalg.qr(g)
            basis = np.swapaxes(q, 1, 2)
            frames, normals = basis[:, :k, :], basis[:, k:, :]
        else:
            frames_all = self.spec.directions
            pick = rng.choice(len(frames_all), size=n, p=self.spec.probs)
            frames = frames_all[pick]
            normals = _complement(frames) if n else np.zeros((0, d - k, d))
        q = d - k
        u = rng.standard_normal((n, q))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = self.window.radius * rng.random(n) ** (1.0 / q)
        local = u * rad[:, None]
        c = np.asarray(self.window.center)
        center_perp = np.einsum("nqd,d->nq", normals, c)
        offsets = np.einsum("nq,nqd->nd", center_perp + local, normals)
        return FlatBatch(np.ascontiguousarray(frames), np.ascontiguousarray(normals), offsets)

    def empty(self) -> FlatBatch:
        d, k = self.spec.d, self.spec.k
        return FlatBatch(np.zeros((0, k, d)), np.zeros((0, d - k, d)), np.zeros((0, d)))

    def concat(self, batches):
        return FlatBatch.concat(batches)

    def with_intensity(self, t: float) -> "FlatSpace":
        return replace(self, t=float(t))


def hitting_mass(spec: FlatProcessSpec, window: Window) -> float:
    """``lambda`` of the flats hitting a ball, ``kappa_(d-k) R^(d-k)``."""
    q = spec.d - spec.k
    return ball_volume(q) * window.radius ** q


def flat_space(spec: FlatProcessSpec, window: Window) -> FlatSpace:
    """Space carrying intensity ``spec.t``."""
    return FlatSpace(spec, window, t=spec.t)


def sample_flats(spec: FlatProcessSpec, window: Window, seed: int = 0, key=()) -> FlatBatch:
    """Flats of the process with intensity ``spec.t`` hitting ``window``."""
    return draw_points(flat_space(spec, window), stream(seed, "flats", *key))


# -- intersections -----------------------------------------------------------------


@dataclass
class Intersection:
    """Batched affine subspaces ``point + null space``.

    ``dim`` is ``-1`` where the intersection is empty (overdetermined system)
    and ``degenerate`` marks tuples whose normals are not in general position.
    """

    points: np.ndarray
    normals: np.ndarray
    dim: int
    degenerate: np.ndarray

    def distance(self, x) -> np.ndarray:
        """Euclidean distance of ``x`` to each subspace."""
        diff = np.asarray(x, dtype=float)[None, :] - self.points
        return np.linalg.norm(np.einsum("nrd,nd->nr", self.normals, diff), axis=1)


def intersect(batches: Sequence[FlatBatch], tol: float = DEGENERACY_TOL) -> Intersection:
    """Intersect the ``i``-th flats of each batch.

    Solves the stacked normal equations by SVD.  The solution set is the
    min-norm point plus the null space of the stacked normals.  Tuples
    whose stacked normals have a singular value below ``tol`` times the
    largest are flagged degenerate.
    """
    m = len(batches)
    if m < 1:
        raise ValueError("need at least one flat")
    n = len(batches[0])
    d = batches[0].offsets.shape[1]
    A = np.concatenate([b.normals for b in batches], axis=1)
    rhs = np.concatenate([np.einsum("nqd,nd->nq", b.normals, b.offsets) for b in batches], axis=1)
    r = A.shape[1]
    if m == 1:
        return Intersection(batches[0].offsets, batches[0].normals, d - r, np.zeros(n, bool))
    if r > d:
        return Intersection(np.zeros((n, d)), np.zeros((n, d, d)), -1, np.zeros(n, bool))
    if n == 0:
        return Intersection(np.zeros((0, d)), np.zeros((0, r, d)), d - r, np.zeros(0, bool))
    u, s, vt = np.linalg.svd(A, full_matrices=False)
    degenerate = s[:, -1] < tol * np.maximum(s[:, 0], 1e-300)
    coef = np.einsum("nrk,nr->nk", u, rhs) / np.where(degenerate[:, None], 1.0, s)
    pts = np.einsum("nk,nkd->nd", coef, vt)
    if degenerate.any():
        log.warning("%d degenerate intersections treated as empty", int(degenerate.sum()))
    return Intersection(pts, vt, d - r, degenerate)


# -- functionals -------------------------------------------------------------------


VARIANTS = ("indicator", "hausdorff", "chord_power")


@dataclass(frozen=True)
class GeometricFunctional:
    """``psi`` applied to ``B cap E_1 cap ... cap E_m`` for a ball ``B``."""

    variant: str
    m: int
    beta: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown functional {self.variant!r}; known: {VARIANTS}")
        if self.m < 1:
            raise ValueError("order m must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @classmethod
    def parse(cls, text: str, m: int) -> "GeometricFunctional":
        """``indicator``, ``hausdorff`` or ``chordpower:beta``."""
        head, *rest = text.split(":")
        if head in ("chordpower", "chord_power"):
            return cls("chord_power", m, float(rest[0]) if rest else 1.0)
        return cls(head, m)

    def section_dim(self, d: int, k: int) -> int:
        return d - self.m * (d - k)

    def check(self, d: int, k: int) -> int:
        q = self.section_dim(d, k)
        if self.variant == "hausdorff" and q < 0:
            raise ValueError("hausdorff variant needs m(d-k) <= d")
        if self.variant == "chord_power" and q != 1:
            raise ValueError("chord_power variant needs one-dimensional sections")
        return q

    def alpha(self, d: int, k: int) -> float:
        """Homogeneity degree."""
        q = self.check(d, k)
        return {"indicator": 0.0, "hausdorff": float(q), "chord_power": self.beta}[self.variant]

    def bound(self, window: Window, d: int, k: int) -> float:
        """``c_B`` with ``|psi(B cap E_1 cap ... cap E_m)| <= c_B``."""
        q = self.check(d, k)
        R = window.radius
        if self.variant == "indicator":
            return 1.0
        if self.variant == "hausdorff":
            return ball_volume(q) * R ** q
        return (2 * R) ** self.beta

    def kernel(self, window: Window, d: int, k: int, tol: float = DEGENERACY_TOL) -> Kernel:
        self.check(d, k)
        c = np.asarray(window.center)

        def func(*batches):
            sec = intersect(batches, tol)
            if sec.dim < 0:
                return np.zeros(len(batches[0]))
            s = sec.distance(c)
            vals = section_functional(self, window, s, sec.dim)
            vals[sec.degenerate] = 0.0
            return vals

        return Kernel(self.m, func, symmetric=True, name=f"{self.variant}[{self.m}]")


def section_functional(psi: GeometricFunctional, window: Window, s, q: int) -> np.ndarray:
    """``psi`` of the section of the ball ``window`` by a ``q``-flat at center distance ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    R = window.radius
    inside = s < R
    h2 = np.where(inside, R * R - s * s, 0.0)
    if psi.variant == "indicator":
        return inside.astype(float)
    if psi.variant == "hausdorff":
        return np.where(inside, ball_volume(q) * h2 ** (q / 2), 0.0)
    if q != 1:
        raise ValueError("chord_power variant needs one-dimensional sections")
    return np.where(inside, (2 * np.sqrt(h2)) ** psi.beta, 0.0)


def zeta(config: FlatBatch, psi: GeometricFunctional, window: Window) -> float:
    """``(1/m!)`` times the sum of ``psi`` over ordered ``m``-tuples of distinct flats."""
    d = config.offsets.shape[1]
    k = config.frames.shape[1]
    f = psi.kernel(window, d, k)
    return factorial_sum(config, f) / math.factorial(psi.m)


# -- moments -----------------------------------------------------------------------


def zeta_mean(spec: FlatProcessSpec, psi: GeometricFunctional, window: Window,
              method="mc:1000000") -> IntegralEstimate:
    """``(t^m/m!) int psi dlambda^m`` by Monte Carlo over the flats hitting ``window``."""
    space = flat_space(spec, window)
    f = psi.kernel(window, spec.d, spec.k)
    return integrate(f, space, psi.m, method).scaled(1 / math.factorial(psi.m))


def _inner(psi, A, B, spec, n, method):
    W = bounding_window([A, B])
    space = FlatSpace(spec, W, t=1.0)
    fa = psi.kernel(A, spec.d, spec.k)
    fb = fa if A == B else psi.kernel(B, spec.d, spec.k)
    return chaos_inner(fa, fb, n, space, method)


def cov_limit(psi: GeometricFunctional, A: Window, B: Window, spec: FlatProcessSpec,
              method="mc:1000000") -> IntegralEstimate:
    """Limit of ``t^-(2m-1) Cov[zeta_t(A), zeta_t(B)]``."""
    m = psi.m
    return _inner(psi, A, B, spec, 1, method).scaled(1 / math.factorial(m) ** 2)


def cov_exact(psi: GeometricFunctional, A: Window, B: Window, spec: FlatProcessSpec,
              t: float | None = None, method="mc:1000000") -> IntegralEstimate:
    """``Cov[zeta_t(A), zeta_t(B)] = (m!)^-2 sum_n t^(2m-n) n! <f_n^A, f_n^B>_n``."""
    t = spec.t if t is None else t
    m = psi.m
    acc = IntegralEstimate(0.0, 0.0, str(method))
    for n in range(1, m + 1):
        est = _inner(psi, A, B, spec, n, method)
        acc = acc + est.scaled(t ** (2 * m - n) * math.factorial(n) / math.factorial(m) ** 2)
    return acc


def zeta_ustatistic(spec: FlatProcessSpec, psi: GeometricFunctional, window: Window,
                    bounding: Window | None = None, method="mc:1000000"):
    """``zeta_t(window)`` as a U-statistic with ``g = 1/m!`` on the flats hitting ``bounding``."""
    from .ustat import UStatistic

    space = FlatSpace(spec, bounding or window, t=1.0)
    return UStatistic(space, psi.kernel(window, spec.d, spec.k),
                      scale=(1 / math.factorial(psi.m), 0.0), method=method)


# -- simulation --------------------------------------------------------------------


def simulate_zeta(spec: FlatProcessSpec, psi: GeometricFunctional, windows: Sequence[Window],
                  reps: int, seed: int, key=(), workers: int = 1,
                  rotation: np.ndarray | None = None) -> np.ndarray:
    """``reps x len(windows)`` samples of ``zeta_t`` on one process per replication."""
    windows = list(windows)
    W = bounding_window(windows) if len(windows) > 1 else windows[0]
    space = flat_space(spec, W)
    kernels = [psi.kernel(w, spec.d, spec.k) for w in windows]
    mf = math.factorial(psi.m)

    def one(rng, i):
        pts = draw_points(space, rng)
        if rotation is not None:
            pts = pts.rotated(rotation)
        return [factorial_sum(pts, f) / mf for f in kernels]

    return np.array(replicate(one, reps, seed, key=("zeta",) + tuple(key), workers=workers))


@dataclass
class ScalingReport:
    r: list
    ks_stat: list
    p_values: list
    var_scaled: list
    var_hat: list
    passes: int = field(init=False)

    def __post_init__(self):
        self.passes = int(sum(p > 0.01 for p in self.p_values))

    @property
    def ok(self) -> bool:
        return self.passes >= min(4, len(self.r))


def scaling_check(spec: FlatProcessSpec, psi: GeometricFunctional, window: Window,
                  r_grid: Sequence[float] = (1.0, 1.5, 2.0, 3.0, 4.0), reps: int = 10_000,
                  seed: int = 0, workers: int = 1, method="mc:1000000") -> ScalingReport:
    """Compare ``r^(-(m-1/2)(d-k)-alpha) (zeta_1(rB) - E)`` with ``hat zeta_t(B)``, ``t = r^(d-k)``."""
    if reps < 100:
        raise ValueError("scaling check needs at least 100 samples per side")
    d, k, m = spec.d, spec.k, psi.m
    alpha = psi.alpha(d, k)
    base = replace(spec, t=1.0)
    ks, ps, vs, vh = [], [], [], []
    for j, r in enumerate(r_grid):
        wr = window.scaled(r)
        t = r ** (d - k)
        mean_r = zeta_mean(base, psi, wr, method).value
        mean_t = zeta_mean(replace(spec, t=t), psi, window, method).value
        a = simulate_zeta(base, psi, [wr], reps, seed, key=("scaled", j), workers=workers)[:, 0]
        b = simulate_zeta(replace(spec, t=t), psi, [window], reps, seed, key=("hat", j),
                          workers=workers)[:, 0]
        a = r ** (-(m - 0.5) * (d - k) - alpha) * (a - mean_r)
        b = t ** (-(m - 0.5)) * (b - mean_t)
        res = stats.ks_2samp(a, b)
        ks.append(float(res.statistic))
        ps.append(float(res.pvalue))
        vs.append(float(a.var(ddof=1)))
        vh.append(float(b.var(ddof=1)))
    return ScalingReport(list(r_grid), ks, ps, vs, vh)


def random_rotation(d: int, seed: int = 0) -> np.ndarray:
    """A fixed rotation of ``R^d`` (determinant one)."""
    q, r = np.linalg.qr(stream(seed, "rotation").standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
