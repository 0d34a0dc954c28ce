"""Command line experiment runner.

Every subcommand writes one table (CSV or JSON) to ``--out`` or stdout.
With ``--out`` a JSON sidecar ``<out>.meta.json`` records versions, the
seed, arguments and runtime.  Tables depend only on the arguments and the
seed, never on ``--workers``.

Exit codes: 0 success, 2 bad arguments or configuration, 3 numerical
failure (a diagnostics file is written next to the output).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .measure import IntegrationError, Method
from .partitions import CLASSES, ConstraintError, PartitionLimitError, RowLayout, count_partitions, enumerate_partitions, class_options
from .registry import ConfigError, make_family, make_kernel_list, make_kernels, make_space

PROVENANCE = {
    "partitions": "partitions.count_partitions/enumerate_partitions",
    "moment": "moments.mixed_moment",
    "cumulant": "moments.joint_cumulant",
    "simulate": "poisson.factorial_sum|chaos.wiener_ito",
    "clt": "ustat.clt_experiment",
    "bound": "ustat.d3_bound",
    "flats": "flats.zeta_mean|cov_exact|cov_limit|simulate_zeta|scaling_check",
}

EXIT_SCHEMA = 2
EXIT_NUMERIC = 3


class SchemaError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render(rows: list[dict], form: str) -> str:
    if form == "json":
        clean = [{k: (float(v) if isinstance(v, np.floating) else
                      int(v) if isinstance(v, np.integer) else v) for k, v in r.items()} for r in rows]
        return json.dumps(clean, indent=1, allow_nan=True) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([fmt(v) for v in r.values()])
    return buf.getvalue()


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise SchemaError(f"expected comma separated numbers, got {text!r}") from None


def _need_seed(args):
    if args.seed is None:
        raise SchemaError(f"--seed is required for '{args.command}'")
    return args.seed


# -- subcommands -------------------------------------------------------------------


def cmd_partitions(args):
    try:
        layout = RowLayout.parse(args.layout)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    if args.list:
        return [{"partition": s.render()} for s in
                enumerate_partitions(layout, limit=args.limit, **class_options(args.cls))]
    n = count_partitions(layout, args.cls, limit=args.limit)
    return [{"count": n, "layout": args.layout, "class": args.cls}]


def _moment(args, cumulant: bool):
    from .moments import joint_cumulant, mixed_moment, partition_contributions

    if args.space is None:
        raise SchemaError("--space is required")
    space = make_space(args.space)
    kernels = make_kernel_list(args.kernels, space)
    method = Method.parse(args.method)
    fn = joint_cumulant if cumulant else mixed_moment
    est = fn(kernels, space, method, t=args.t)
    if not math.isfinite(est.value):
        raise FloatingPointError("non-finite moment estimate")
    if args.diagnostics:
        rows = [{"partition": c.sigma.render(), "value": c.estimate.value, "stderr": c.estimate.stderr}
                for c in partition_contributions(kernels, space, "connected" if cumulant else "ge2",
                                                 method, args.t)]
        Path(args.diagnostics).write_text(render(rows, "csv"))
    return [{"quantity": "cumulant" if cumulant else "moment", "kernels": args.kernels,
             "t": args.t, "value": est.value, "stderr": est.stderr, "method": est.method}]


def cmd_moment(args):
    return _moment(args, False)


def cmd_cumulant(args):
    return _moment(args, True)


def cmd_simulate(args):
    from .chaos import wiener_ito
    from .poisson import draw_points, factorial_sum
    from .rng import replicate

    seed = _need_seed(args)
    space = make_space(args.space)
    ito = args.stat.startswith("ito:")
    ks = make_kernels(args.stat[4:] if ito else args.stat, space)
    if len(ks) != 1:
        raise SchemaError(f"statistic {args.stat!r} must name a single kernel")
    f = ks[0]
    sp = space.scaled(args.t)

    def one(rng, i):
        pts = draw_points(sp, rng)
        return wiener_ito(pts, f, space, t=args.t, method=args.method) if ito else factorial_sum(pts, f)

    vals = replicate(one, args.reps, seed, key=("simulate",), workers=args.workers)
    return [{"rep": i, "value": v} for i, v in enumerate(vals)]


def _family(args):
    from .ustat import NormalizedFamily

    if args.family is None:
        raise SchemaError("--family is required")
    return NormalizedFamily(make_family(args.family))


def cmd_clt(args):
    from .ustat import clt_experiment

    seed = _need_seed(args)
    fam = _family(args)
    rows = []
    for s in clt_experiment(fam, _floats(args.t), args.reps, seed, workers=args.workers):
        for i, u in enumerate(fam.ustats):
            rows.append({"t": s.t, "component": u.name or i, "mean": s.mean[i], "var": s.var[i],
                         "skew": s.skew[i], "kurt": s.kurt[i], "d3_surrogate": s.d3_surrogate,
                         "d3_bound": s.d3_bound})
    return rows


def cmd_bound(args):
    from .ustat import d3_bound

    fam = _family(args)
    rows = []
    for t in _floats(args.t):
        b = d3_bound(fam, t)
        rows.append({"t": t, "bound": b.total, "gaussian_term": b.gaussian_term,
                     "coupling_term": b.coupling_term, "A": b.A, "B": b.B,
                     "bound_sqrt_t": b.total * math.sqrt(t)})
    return rows


def cmd_flats(args):
    from . import flats
    from .ustat import d3_surrogate, summarize

    seed = _need_seed(args)
    try:
        window = flats.Window.parse(args.window)
        psi = flats.GeometricFunctional.parse(args.psi, args.m)
        spec = flats.FlatProcessSpec(args.d, args.k, args.t)
        psi.check(args.d, args.k)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    if window.d != args.d:
        raise SchemaError("window center dimension must equal --d")
    method = f"mc:{args.samples}:{seed}"
    exp = args.experiment
    if exp == "mean":
        est = flats.zeta_mean(spec, psi, window, method)
        z = flats.simulate_zeta(spec, psi, [window], args.reps, seed, workers=args.workers)[:, 0]
        return [{"t": args.t, "psi": args.psi, "m": args.m, "exact_mean": est.value,
                 "exact_stderr": est.stderr, "empirical_mean": z.mean(),
                 "empirical_stderr": z.std(ddof=1) / math.sqrt(len(z))}]
    if exp == "cov":
        ex = flats.cov_exact(psi, window, window, spec, args.t, method)
        lim = flats.cov_limit(psi, window, window, spec, f"mc:{args.samples}:{seed + 1}")
        scale = args.t ** (2 * args.m - 1)
        return [{"t": args.t, "cov_exact": ex.value, "cov_exact_stderr": ex.stderr,
                 "cov_limit": lim.value, "cov_limit_stderr": lim.stderr,
                 "ratio": ex.value / (scale * lim.value)}]
    if exp == "clt":
        mean = flats.zeta_mean(spec, psi, window, method).value
        lim = flats.cov_limit(psi, window, window, spec, f"mc:{args.samples}:{seed + 1}").value
        z = flats.simulate_zeta(spec, psi, [window], args.reps, seed, workers=args.workers)
        zh = args.t ** -(args.m - 0.5) * (z - mean)
        s = summarize(zh)
        sur = d3_surrogate(zh, np.array([[lim]]), seed).value if args.reps >= 1000 else float("nan")
        return [{"t": args.t, "mean": s["mean"][0], "var": s["var"][0], "cov_limit": lim,
                 "skew": s["skew"][0], "kurt": s["kurt"][0], "d3_surrogate": sur}]
    rep = flats.scaling_check(spec, psi, window, reps=args.reps, seed=seed, workers=args.workers,
                              method=method)
    return [{"r": r, "ks": k, "p_value": p, "var_scaled": a, "var_hat": b}
            for r, k, p, a, b in zip(rep.r, rep.ks_stat, rep.p_values, rep.var_scaled, rep.var_hat)]


COMMANDS = {
    "partitions": cmd_partitions,
    "moment": cmd_moment,
    "cumulant": cmd_cumulant,
    "simulate": cmd_simulate,
    "clt": cmd_clt,
    "bound": cmd_bound,
    "flats": cmd_flats,
}


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def globals_(defaults: bool):
        # subcommands repeat the global flags without defaults so that a flag
        # given before the subcommand is not reset
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(None), help="master seed")
        g.add_argument("--workers", type=int, default=d(1))
        g.add_argument("--out", default=d(None), help="output path (default stdout)")
        g.add_argument("--format", choices=("csv", "json"), default=d("csv"))
        return g

    common = globals_(False)
    p = argparse.ArgumentParser(prog="poissonchaos", parents=[globals_(True)],
                                description="Moments, cumulants and CLT experiments for Poisson functionals.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("partitions", parents=[common], help="count or list diagram partitions")
    s.add_argument("--layout", required=True)
    s.add_argument("--class", dest="cls", choices=CLASSES, default="ge2")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--count", action="store_true")
    g.add_argument("--list", action="store_true")
    s.add_argument("--limit", type=int, default=None)

    for name in ("moment", "cumulant"):
        s = sub.add_parser(name, parents=[common], help=f"mixed {name} of multiple integrals")
        s.add_argument("--kernels", required=True)
        s.add_argument("--space", default=None)
        s.add_argument("--t", type=float, default=1.0)
        s.add_argument("--method", default="auto")
        s.add_argument("--diagnostics", default=None)

    s = sub.add_parser("simulate", parents=[common], help="replicate a U-statistic or multiple integral")
    s.add_argument("--space", required=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--stat", required=True)
    s.add_argument("--method", default="auto")

    for name in ("clt", "bound"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--family", required=True)
        s.add_argument("--t", default="10,40,160,640")
        if name == "clt":
            s.add_argument("--reps", type=int, default=100_000)

    s = sub.add_parser("flats", parents=[common], help="Poisson flat intersection experiments")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--t", type=float, default=10.0)
    s.add_argument("--window", default="ball:0,0:1")
    s.add_argument("--psi", default="indicator")
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--samples", type=int, default=1_000_000, help="Monte Carlo size for integrals")
    s.add_argument("--experiment", choices=("mean", "cov", "clt", "scaling"), default="mean")
    return p


def _meta(args, argv, runtime: float, status: str) -> dict:
    return {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "command": args.command,
        "module_operation": PROVENANCE[args.command],
        "argv": list(argv),
        "seed": args.seed,
        "workers": args.workers,
        "runtime_s": runtime,
        "status": status,
    }


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_SCHEMA
    t0 = time.perf_counter()
    try:
        rows = COMMANDS[args.command](args)
    except (SchemaError, ConfigError, ConstraintError, PartitionLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FloatingPointError, IntegrationError, np.linalg.LinAlgError, OverflowError,
            ZeroDivisionError) as exc:
        diag = Path(args.out + ".diagnostics.txt") if args.out else Path("poissonchaos-diagnostics.txt")
        diag.write_text(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        print(f"numerical failure: {exc} (details in {diag})", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.command == "partitions" and args.format == "csv":
        text = "".join(fmt(next(iter(r.values()))) + "\n" for r in rows)
    else:
        text = render(rows, args.format)
    if args.out:
        Path(args.out).write_text(text)
        meta = _meta(args, argv, time.perf_counter() - t0, "ok")
        Path(args.out + ".meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
