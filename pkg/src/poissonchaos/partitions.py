"""Set partitions of ``[n]`` with row structure.

Elements are the integers ``1..n``.  A :class:`RowLayout` with sizes
``(n_1, ..., n_l)`` cuts ``[n]`` into consecutive rows, and the partition
classes used by the diagram formulas are:

* ``nonflat``  -- every block meets every row at most once,
* ``ge2``      -- non-flat and every block has at least two elements,
* ``eq2``      -- non-flat and every block has exactly two elements,
* ``connected`` -- ``ge2`` partitions whose induced row partition is a
  single block.

Enumeration uses restricted growth strings; a block is refused an element
as soon as it already holds one from the same row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

DEFAULT_LIMIT = 12

CLASSES = ("nonflat", "ge2", "eq2", "connected")


class PartitionLimitError(ValueError):
    """Requested enumeration exceeds the configured size limit."""


class ConstraintError(ValueError):
    """A partition does not satisfy a required structural constraint."""


def _check_limit(n, limit):
    limit = DEFAULT_LIMIT if limit is None else limit
    if n > limit:
        raise PartitionLimitError(
            f"n={n} exceeds the enumeration limit {limit}; pass limit= to override"
        )


@dataclass(frozen=True)
class RowLayout:
    """Consecutive rows ``J_1, ..., J_l`` of ``[n]`` with ``|J_i| = sizes[i]``."""

    sizes: tuple[int, ...]

    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"row sizes must be positive integers, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def parse(cls, text: str) -> "RowLayout":
        return cls([int(s) for s in text.replace(" ", "").split(",") if s])

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def n_rows(self) -> int:
        return len(self.sizes)

    @property
    def rows(self) -> tuple[tuple[int, ...], ...]:
        out = []
        start = 0
        for s in self.sizes:
            out.append(tuple(range(start + 1, start + s + 1)))
            start += s
        return tuple(out)

    def row_index(self) -> tuple[int, ...]:
        """0-based row of each element; entry ``j-1`` belongs to element ``j``."""
        return tuple(i for i, s in enumerate(self.sizes) for _ in range(s))


@dataclass(frozen=True)
class Subpartition:
    """Disjoint non-empty blocks inside ``[n]`` in canonical form.

    Canonical form sorts each block and orders blocks by least element.
    """

    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __init__(self, blocks: Sequence[Sequence[int]], n: int):
        canon = tuple(sorted((tuple(sorted(int(x) for x in b)) for b in blocks),
                             key=lambda b: b[0] if b else 0))
        seen = set()
        for b in canon:
            if not b:
                raise ValueError("blocks must be non-empty")
            for x in b:
                if not 1 <= x <= n:
                    raise ValueError(f"element {x} outside [1, {n}]")
                if x in seen:
                    raise ValueError(f"element {x} appears in two blocks")
                seen.add(x)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "blocks", canon)

    @property
    def size(self) -> int:
        """Number of blocks ``|sigma|``."""
        return len(self.blocks)

    @property
    def support(self) -> int:
        """Number of covered elements ``||sigma||``."""
        return sum(len(b) for b in self.blocks)

    @property
    def is_partition(self) -> bool:
        return self.support == self.n

    @property
    def arity(self) -> int:
        """Number of free arguments after identification, ``|sigma| + n - ||sigma||``."""
        return self.size + self.n - self.support

    def render(self) -> str:
        if not self.blocks:
            return "{}"
        return "".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks)

    @classmethod
    def parse(cls, text: str, n: int) -> "Subpartition":
        text = text.strip()
        if text == "{}":
            return cls([], n)
        if not (text.startswith("{") and text.endswith("}")):
            raise ValueError(f"cannot parse subpartition {text!r}")
        parts = text[1:-1].split("}{")
        return cls([[int(x) for x in p.split(",")] for p in parts], n)

    def __str__(self) -> str:
        return self.render()


def _from_labels(labels: Sequence[int], n: int) -> Subpartition:
    # labels[j] = 0 means element j+1 is not covered
    groups: dict[int, list[int]] = {}
    for j, lab in enumerate(labels):
        if lab:
            groups.setdefault(lab, []).append(j + 1)
    return Subpartition(list(groups.values()), n)


def enumerate_subpartitions(n: int, limit: int | None = None) -> Iterator[Subpartition]:
    """Yield every subpartition of ``[n]`` once, including the empty one.

    The order is lexicographic in the growth string where label 0 marks an
    uncovered element and covered elements carry 1-based block labels.
    """
    if n < 1:
        raise ValueError("n must be positive")
    _check_limit(n, limit)
    labels = [0] * n

    def grow(j, k):
        if j == n:
            yield _from_labels(labels, n)
            return
        for lab in range(k + 2):
            labels[j] = lab
            yield from grow(j + 1, max(k, lab))
        labels[j] = 0

    yield from grow(0, 0)


def enumerate_partitions(
    layout: RowLayout | Sequence[int],
    min_block: int = 1,
    exact_two: bool = False,
    connected: bool = False,
    limit: int | None = None,
) -> Iterator[Subpartition]:
    """Yield the non-flat partitions of ``[n]`` for a row layout.

    ``min_block=2`` restricts to blocks of size at least two, ``exact_two``
    to perfect matchings, ``connected`` to partitions linking all rows.
    """
    layout = layout if isinstance(layout, RowLayout) else RowLayout(layout)
    if min_block not in (1, 2):
        raise ValueError("min_block must be 1 or 2")
    n = layout.n
    _check_limit(n, limit)
    if exact_two:
        min_block = 2
        if n % 2:
            return
    cap = 2 if exact_two else layout.n_rows
    row_of = layout.row_index()
    blocks: list[list[int]] = []
    masks: list[int] = []

    def grow(j, open_singletons):
        if j == n:
            if min_block == 2 and open_singletons:
                return
            sigma = Subpartition(blocks, n)
            if connected and induced_partition(sigma, layout).size != 1:
                return
            yield sigma
            return
        if min_block == 2 and open_singletons > n - j:
            return
        bit = 1 << row_of[j]
        for b in range(len(blocks)):
            if masks[b] & bit or len(blocks[b]) >= cap:
                continue
            blocks[b].append(j + 1)
            masks[b] |= bit
            delta = -1 if len(blocks[b]) == 2 else 0
            yield from grow(j + 1, open_singletons + delta)
            masks[b] &= ~bit
            blocks[b].pop()
        blocks.append([j + 1])
        masks.append(bit)
        yield from grow(j + 1, open_singletons + 1)
        blocks.pop()
        masks.pop()

    yield from grow(0, 0)


def class_options(name: str) -> dict:
    """Keyword arguments of :func:`enumerate_partitions` for a class name."""
    try:
        return {
            "nonflat": dict(min_block=1),
            "ge2": dict(min_block=2),
            "eq2": dict(min_block=2, exact_two=True),
            "connected": dict(min_block=2, connected=True),
        }[name]
    except KeyError:
        raise ValueError(f"unknown partition class {name!r}; expected one of {CLASSES}") from None


def induced_partition(sigma: Subpartition, layout: RowLayout | Sequence[int]) -> Subpartition:
    """Finest partition of the rows joining rows that share a block of ``sigma``."""
    layout = layout if isinstance(layout, RowLayout) else RowLayout(layout)
    if sigma.n != layout.n:
        raise ConstraintError(f"sigma lives on [{sigma.n}], layout on [{layout.n}]")
    row_of = layout.row_index()
    parent = list(range(layout.n_rows))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for block in sigma.blocks:
        rows = [row_of[x - 1] for x in block]
        if len(set(rows)) != len(rows):
            raise ConstraintError(f"block {block} meets a row twice")
        for r in rows[1:]:
            parent[find(r)] = find(rows[0])
    comps: dict[int, list[int]] = {}
    for i in range(layout.n_rows):
        comps.setdefault(find(i), []).append(i + 1)
    return Subpartition(list(comps.values()), layout.n_rows)


def substitution_map(sigma: Subpartition, n: int | None = None) -> tuple[int, ...]:
    """Target argument (1-based) for each of the ``n`` positions of ``f``.

    Positions in a common block share a target; targets are numbered by
    first occurrence scanning ``1..n``.  ``f_sigma(y)`` is then
    ``f(y[m[0]-1], ..., y[m[n-1]-1])``.
    """
    n = sigma.n if n is None else n
    if n < sigma.n and any(x > n for b in sigma.blocks for x in b):
        raise ValueError("sigma has elements outside [n]")
    block_of = {x: i for i, b in enumerate(sigma.blocks) for x in b}
    target: dict[object, int] = {}
    out = []
    for j in range(1, n + 1):
        key = ("b", block_of[j]) if j in block_of else ("s", j)
        if key not in target:
            target[key] = len(target) + 1
        out.append(target[key])
    return tuple(out)


# -- counting ---------------------------------------------------------------


def _total_count(sizes: tuple[int, ...], min_block: int, exact_two: bool) -> int:
    # Row-by-row DP.  State: a = blocks of size one, b = blocks of size >= 2.
    states = {(0, 0): 1}
    for r in sizes:
        nxt: dict[tuple[int, int], int] = {}
        for (a, b), ways in states.items():
            for k1 in range(min(a, r) + 1):
                k2_max = 0 if exact_two else min(b, r - k1)
                for k2 in range(k2_max + 1):
                    fresh = r - k1 - k2
                    mult = (
                        math.comb(r, k1) * math.comb(r - k1, k2)
                        * math.perm(a, k1) * math.perm(b, k2)
                    )
                    key = (a - k1 + fresh, b + k1)
                    nxt[key] = nxt.get(key, 0) + ways * mult
        states = nxt
    if min_block == 1 and not exact_two:
        return sum(states.values())
    return sum(w for (a, _), w in states.items() if a == 0)


@lru_cache(maxsize=None)
def _count(sizes: tuple[int, ...], min_block: int, exact_two: bool, connected: bool) -> int:
    if not connected:
        return _total_count(sizes, min_block, exact_two)
    # Split off the component holding the first row:
    # total(S) = sum_{T containing row 0} conn(T) * total(S \ T)
    total = _count(tuple(sorted(sizes)), min_block, exact_two, False)
    rest = sizes[1:]
    acc = 0
    for mask in range(2 ** len(rest) - 1):
        inside = (sizes[0],) + tuple(s for i, s in enumerate(rest) if mask >> i & 1)
        outside = tuple(s for i, s in enumerate(rest) if not mask >> i & 1)
        acc += (_count(tuple(sorted(inside)), min_block, exact_two, True)
                * _count(tuple(sorted(outside)), min_block, exact_two, False))
    return total - acc


def count_partitions(
    layout: RowLayout | Sequence[int],
    cls: str | None = None,
    *,
    min_block: int = 1,
    exact_two: bool = False,
    connected: bool = False,
    limit: int | None = None,
) -> int:
    """Number of partitions :func:`enumerate_partitions` would yield.

    Computed by a dynamic program over rows, never by enumeration.
    """
    layout = layout if isinstance(layout, RowLayout) else RowLayout(layout)
    if cls is not None:
        opts = class_options(cls)
        min_block = opts.get("min_block", 1)
        exact_two = opts.get("exact_two", False)
        connected = opts.get("connected", False)
    _check_limit(layout.n, limit)
    if exact_two:
        min_block = 2
        if layout.n % 2:
            return 0
    return _count(tuple(sorted(layout.sizes)), min_block, exact_two, connected)


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    """All partitions of ``items`` into non-empty blocks (growth-string order)."""
    items = list(items)
    if not items:
        yield []
        return
    layout = RowLayout([1] * len(items))
    for sigma in enumerate_partitions(layout, limit=max(len(items), DEFAULT_LIMIT)):
        yield [[items[x - 1] for x in b] for b in sigma.blocks]


def double_factorial(k: int) -> int:
    """``k!! = k (k-2) (k-4) ...``; ``(-1)!! = 0!! = 1``."""
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def bell(n: int) -> int:
    """Bell number via the Bell triangle."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


def perfect_matchings(items: Sequence) -> Iterator[list[tuple]]:
    """Pairings of an even-length sequence; nothing for odd length."""
    items = list(items)
    if len(items) % 2:
        return
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for m in perfect_matchings(rest):
            yield [(first, items[i])] + m


__all__ = [
    "CLASSES",
    "DEFAULT_LIMIT",
    "ConstraintError",
    "PartitionLimitError",
    "RowLayout",
    "Subpartition",
    "bell",
    "class_options",
    "count_partitions",
    "double_factorial",
    "enumerate_partitions",
    "enumerate_subpartitions",
    "induced_partition",
    "perfect_matchings",
    "set_partitions",
    "substitution_map",
]
