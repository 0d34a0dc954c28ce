"""Named spaces, kernels and families for configuration files and the CLI.

Kernel names are colon separated:

``const:c:m``
    the constant ``c`` in ``m`` arguments.
``ind:m[:region]``
    indicator that all ``m`` arguments lie in ``region``.  On atomic spaces
    the region is a ``|`` separated label list, on boxes ``lo..hi`` on the
    first coordinate; the whole space when omitted.
``prod:m`` / ``sum:m``
    product / sum of the first coordinates (atom values on atomic spaces).
``paper:ex11`` / ``paper:ex12``
    the kernel lists ``[f, f]`` and ``[f, f, g]`` with ``f(x, y) = x y``
    and ``g(x) = x``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .measure import AtomicSpace, BoxSpace, Kernel, MeasureSpace, constant_kernel


class ConfigError(ValueError):
    """Malformed configuration or unknown registry name."""


def load_json(spec) -> object:
    """Inline JSON text, a path to a JSON file, or an already parsed object."""
    if not isinstance(spec, str):
        return spec
    text = spec.strip()
    if text.startswith(("{", "[")):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    p = Path(spec)
    if not p.exists():
        raise ConfigError(f"no such config file: {spec}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {spec}: {exc}") from None


def make_space(spec) -> MeasureSpace:
    """``{"backend": "finite-atomic", "atoms": [[label, w(, value)], ...]}`` or
    ``{"backend": "box", "bounds": [[lo, hi], ...]}``."""
    cfg = load_json(spec)
    if not isinstance(cfg, dict) or "backend" not in cfg:
        raise ConfigError("space config needs a 'backend' field")
    backend = cfg["backend"]
    t = float(cfg.get("t", 1.0))
    try:
        if backend in ("finite-atomic", "atomic"):
            return AtomicSpace.from_atoms(cfg["atoms"], t=t)
        if backend == "box":
            return BoxSpace(np.asarray(cfg["bounds"], dtype=float), t=t)
    except KeyError as exc:
        raise ConfigError(f"space config is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad space config: {exc}") from None
    raise ConfigError(f"unknown backend {backend!r}; known: finite-atomic, box")


def _coord(space: MeasureSpace):
    if isinstance(space, AtomicSpace):
        vals = space.values
        return lambda x: vals[np.asarray(x, dtype=np.int64)]
    return lambda x: np.asarray(x, dtype=float)[:, 0]


def _region(space: MeasureSpace, text: str | None):
    if text is None:
        return lambda x: np.ones(len(x), bool)
    if isinstance(space, AtomicSpace):
        labels = [lab if lab in space.labels else _maybe_number(lab) for lab in text.split("|")]
        try:
            mask = space.mask(labels)
        except ValueError:
            raise ConfigError(f"unknown atom label in {text!r}") from None
        return lambda x: mask[np.asarray(x, dtype=np.int64)]
    try:
        lo, hi = (float(v) for v in text.split(".."))
    except ValueError:
        raise ConfigError(f"box regions are written lo..hi, got {text!r}") from None
    return lambda x: (np.asarray(x)[:, 0] >= lo) & (np.asarray(x)[:, 0] <= hi)


def _maybe_number(s: str):
    try:
        return int(s)
    except ValueError:
        try:
            return float(s)
        except ValueError:
            return s


def _int(text: str, what: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None
    if v < 1:
        raise ConfigError(f"{what} must be positive")
    return v


def make_kernels(name: str, space: MeasureSpace) -> list[Kernel]:
    """Kernels named ``name``; the ``paper:`` lists expand to several kernels."""
    head, *rest = name.split(":")
    coord = _coord(space)
    if head == "const":
        if len(rest) != 2:
            raise ConfigError("const kernels are written const:c:m")
        return [constant_kernel(float(rest[0]), _int(rest[1], "arity"))]
    if head == "ind":
        if not rest:
            raise ConfigError("ind kernels are written ind:m[:region]")
        m = _int(rest[0], "arity")
        inside = _region(space, rest[1] if len(rest) > 1 else None)
        return [Kernel(m, lambda *xs: np.prod([inside(x) for x in xs], axis=0).astype(float),
                       name=name)]
    if head in ("prod", "sum"):
        if len(rest) != 1:
            raise ConfigError(f"{head} kernels are written {head}:m")
        m = _int(rest[0], "arity")
        op = np.prod if head == "prod" else np.sum
        return [Kernel(m, lambda *xs: op([coord(x) for x in xs], axis=0), name=name)]
    if head == "paper":
        f = Kernel(2, lambda x, y: coord(x) * coord(y), name="xy")
        g = Kernel(1, lambda x: coord(x), name="x")
        if rest == ["ex11"]:
            return [f, f]
        if rest == ["ex12"]:
            return [f, f, g]
    raise ConfigError(f"unknown kernel {name!r}")


def make_kernel_list(names: str, space: MeasureSpace) -> list[Kernel]:
    out = []
    for n in names.split(","):
        if n.strip():
            out.extend(make_kernels(n.strip(), space))
    if not out:
        raise ConfigError("no kernels given")
    return out


def make_family(spec):
    """U-statistics from ``{"space": ..., "components": [{m, kernel, scale: {c, p}}]}``.

    A bare list of components is accepted when every component carries its
    own ``space``; all components must describe the same space.
    """
    from .ustat import UStatistic

    cfg = load_json(spec)
    comps = cfg if isinstance(cfg, list) else cfg.get("components") if isinstance(cfg, dict) else None
    if not comps:
        raise ConfigError("family config needs a non-empty component list")
    shared = cfg.get("space") if isinstance(cfg, dict) else None
    space_cfg = shared if shared is not None else comps[0].get("space")
    if space_cfg is None:
        raise ConfigError("family config needs a space")
    for c in comps:
        if "space" in c and load_json(c["space"]) != load_json(space_cfg):
            raise ConfigError("all components must live on the same space")
    space = make_space(space_cfg)
    out = []
    for i, c in enumerate(comps):
        if "kernel" not in c:
            raise ConfigError(f"component {i} has no kernel")
        ks = make_kernels(c["kernel"], space)
        if len(ks) != 1:
            raise ConfigError(f"component {i}: {c['kernel']!r} is not a single kernel")
        k = ks[0]
        if "m" in c and int(c["m"]) != k.arity:
            raise ConfigError(f"component {i}: m={c['m']} but kernel arity is {k.arity}")
        sc = c.get("scale", {})
        scale = (float(sc.get("c", 1.0)), float(sc.get("p", 0.0)))
        if scale[0] == 0 or not math.isfinite(scale[0]):
            raise ConfigError(f"component {i}: scale coefficient must be finite and nonzero")
        out.append(UStatistic(space, k, scale, name=c.get("name", f"F{i + 1}")))
    return out
