"""Command-line front end: generate, apply, experiment, verify, plot, replay."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from . import directions as dirs
from . import dyadic, maximal_ops, norm_lab, sectors, spectral_core
from .spectral_core import GridFunction


class UsageError(Exception):
    """Bad input that argparse itself cannot detect; exits with status 2."""


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def parse_n_list(text: str) -> list[int]:
    """``4,8,...,256`` expands a geometric (or arithmetic) progression."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    out: list[int] = []
    i = 0
    while i < len(parts):
        if parts[i] == "...":
            if len(out) < 2 or i + 1 >= len(parts):
                raise argparse.ArgumentTypeError("'...' needs two leading terms and an end")
            a, b, end = out[-2], out[-1], int(parts[i + 1])
            if b % a == 0 and b // a > 1:
                x = b * (b // a)
                while x <= end:
                    out.append(x)
                    x *= b // a
            elif b > a:
                out.extend(range(b + (b - a), end + 1, b - a))
            else:
                raise argparse.ArgumentTypeError("progression must increase")
            if out[-1] != end:
                raise argparse.ArgumentTypeError(f"{end} is not on the progression")
            i += 2
            continue
        try:
            out.append(int(parts[i]))
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {parts[i]!r}")
        i += 1
    if not out or any(n < 1 for n in out):
        raise argparse.ArgumentTypeError("need positive integers")
    return out


def parse_vector(text: str) -> tuple[float, float]:
    try:
        x, y = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}")
    return x, y


def parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# ---------------------------------------------------------------------------
# metadata and artifact writing
# ---------------------------------------------------------------------------

_SKIP_CONFIG = {"func", "workers", "deterministic", "out", "cmd", "experiment", "sectors_cmd"}


def config_of(args: argparse.Namespace) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in _SKIP_CONFIG:
            continue
        cfg[k] = v
    return cfg


def header_lines(args: argparse.Namespace) -> list[str]:
    lines = [f"dirmax {__version__}",
             "config: " + json.dumps(config_of(args), sort_keys=True),
             f"seed: {getattr(args, 'seed', 0)}"]
    if not args.deterministic:
        lines.append("timestamp: " + time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    return lines


def read_header(path) -> dict:
    """Parse the ``#`` metadata block of an artifact."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            if key == "config":
                meta["config"] = json.loads(value)
            elif value:
                meta[key] = value
    return meta


def write_table(path, header: Sequence[str], columns: Sequence[str], rows: Sequence[Sequence]):
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    _emit(path, buf.getvalue())


def _emit(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def load_grid(path, side: Optional[float] = None) -> GridFunction:
    """Read a grid file; ``side`` overrides the stored side length."""
    if str(path).endswith(".csv"):
        return spectral_core.read_csv_grid(path, side)
    f = spectral_core.read_dmax(path)
    return f if side is None else GridFunction(f.values, side)


def _direction_set(args) -> dirs.DirectionSet:
    if getattr(args, "directions", None):
        with open(args.directions) as fh:
            return dirs.DirectionSet.from_json(fh.read())
    return dirs.make_directions(args.kind, args.n, args.seed)


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    return maximal_ops.default_workers()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_directions(args) -> int:
    s = dirs.make_directions(args.kind, args.n, args.seed)
    _emit(args.out, s.to_json() + "\n")
    return 0


def cmd_apply(args) -> int:
    cat = spectral_core.symbol_catalog()
    if args.symbol not in cat:
        raise UsageError(f"unknown symbol {args.symbol!r}; choose from {sorted(cat)}")
    f = load_grid(args.inp, args.side)
    out = spectral_core.apply_directional_multiplier(f, cat[args.symbol], args.v)
    spectral_core.write_dmax(args.out, out)
    return 0


def _maximal_operator(args, workers: int) -> Callable:
    cat = spectral_core.symbol_catalog()
    if args.op == "directional":
        if args.symbol not in cat:
            raise UsageError(f"unknown symbol {args.symbol!r}")
        return lambda f, s: maximal_ops.directional_sup(f, s, cat[args.symbol], workers)
    if args.op == "kakeya0":
        return lambda f, s: maximal_ops.kakeya_single_scale(f, s, workers)
    if args.op == "kakeya":
        return lambda f, s: maximal_ops.kakeya_max(f, s, workers=workers)
    if args.op == "smooth0":
        window = spectral_core.make_window()
        return lambda f, s: maximal_ops.smooth_single_scale(f, s, window, workers)
    if args.op == "hardy-littlewood":
        return lambda f, s: _as_output(maximal_ops.hardy_littlewood(f))
    if args.op == "strong":
        return lambda f, s: _as_output(maximal_ops.strong_maximal(f))
    raise UsageError(f"unknown operator {args.op!r}")


def _as_output(g: GridFunction) -> maximal_ops.MaximalOutput:
    vals = np.abs(g.values)
    return maximal_ops.MaximalOutput(vals, np.zeros(vals.shape, dtype=np.uint32), g.side)


def cmd_maximal(args) -> int:
    f = load_grid(args.inp, args.side)
    s = _direction_set(args)
    out = _maximal_operator(args, _workers(args))(f, s)
    maximal_ops.write_maximal(args.out, out)
    return 0


def cmd_growth(args) -> int:
    if args.op not in norm_lab.operator_catalog():
        raise UsageError(f"unknown operator {args.op!r}")
    curve = norm_lab.growth_curve(args.op, args.n, args.level, args.side, args.seed,
                                  args.rounds, args.kind)
    write_table(args.out, header_lines(args), norm_lab.GROWTH_COLUMNS, curve.rows())
    return 0


def cmd_lower_bound(args) -> int:
    rows = norm_lab.lower_bound_experiment(args.n, args.r0, args.c0, args.per_octave,
                                           args.angles, args.method)
    write_table(args.out, header_lines(args), norm_lab.LOWER_BOUND_COLUMNS,
                [r.as_csv() for r in rows])
    return 0


CWW_COLUMNS = ["lambda", "epsilon", "lhs_measure", "rhs_measure", "bound_value"]


def cmd_cww(args) -> int:
    corpus = dyadic.martingale_corpus(args.count, args.level, args.seed)
    prof = dyadic.cww_profile(corpus, args.lambdas, args.epsilons)
    bound = prof.bound()
    rows = []
    for fi in range(prof.lhs_measures.shape[0]):
        for li, lam in enumerate(prof.lambda_grid):
            for ei, eps in enumerate(prof.epsilon_grid):
                rows.append([repr(float(lam)), repr(float(eps)),
                             repr(float(prof.lhs_measures[fi, li, ei])),
                             repr(float(prof.rhs_measures[fi, li, ei])),
                             repr(float(bound[fi, li, ei]))])
    header = header_lines(args) + [f"fitted_c1: {prof.fitted_c1!r}", f"fitted_c2: {prof.fitted_c2!r}",
                                   f"violations: {prof.violations}"]
    write_table(args.out, header, CWW_COLUMNS, rows)
    return 0


def cmd_sectors_dump(args) -> int:
    grids = sectors.make_circle_grids(validate=False)
    secs = sectors.make_sectors(args.n, grids)
    if args.directions or args.N:
        s = (dirs.DirectionSet.from_json(open(args.directions).read()) if args.directions
             else dirs.make_directions(args.kind, args.N, args.seed))
        payload = []
        for kappa, members in sorted(sectors.kappa_classes(secs, s).items()):
            for gid, part in sorted(sectors.split_by_grid(members).items()):
                cs = sectors.cluster_decompose(part, kappa)
                payload.append({"kappa": kappa, "grid_id": gid, **json.loads(cs.to_json())})
        text = json.dumps({"sectors": [w.to_dict() for w in secs], "clusters": payload},
                          indent=1, sort_keys=True)
    else:
        text = sectors.sectors_to_json(secs)
    _emit(args.out, text + "\n")
    return 0


def cmd_plot(args) -> int:
    svg = render_svg(args.inp, args.model)
    _emit(args.out, svg)
    return 0


def cmd_verify(args) -> int:
    results = run_verify(args.level, args.seed)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{r.name:<{width}}  {status}  {r.detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_replay(args) -> int:
    """Re-run the command recorded in an artifact header and compare outputs."""
    meta = read_header(args.inp)
    cfg = meta.get("config")
    if cfg is None:
        raise UsageError("artifact carries no config header")
    argv = argv_from_config(cfg)
    deterministic = "timestamp" not in meta
    out = args.out or (str(args.inp) + ".replay")
    code = run(argv + (["--deterministic"] if deterministic else []) + ["--out", out])
    if code:
        return code
    same = _strip_timestamp(open(args.inp).read()) == _strip_timestamp(open(out).read())
    print("identical" if same else "different")
    return 0 if same else 1


def _strip_timestamp(text: str) -> str:
    return "".join(l for l in text.splitlines(True) if not l.startswith("# timestamp:"))


def argv_from_config(cfg: dict) -> list[str]:
    """Rebuild an argument vector from a recorded config."""
    command = cfg["command"]
    argv = list(command)
    for key, value in sorted(cfg.items()):
        if key == "command" or value is None:
            continue
        flag = "--" + key.replace("_", "-")
        if key == "inp":
            flag = "--in"
        if isinstance(value, bool):
            if value:
                argv.append(flag)
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        argv += [flag, str(value)]
    return argv


# ---------------------------------------------------------------------------
# SVG rendering
# ---------------------------------------------------------------------------

_SCHEMAS = {
    tuple(norm_lab.GROWTH_COLUMNS): "estimate",
    tuple(norm_lab.LOWER_BOUND_COLUMNS): "ratio",
}


def read_table(path) -> tuple[list[str], list[dict]]:
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    reader = csv.DictReader(lines)
    rows = list(reader)
    return list(reader.fieldnames or []), rows


def render_svg(path, model: str = "sqrtlog", width: int = 480, height: int = 320) -> str:
    """Scatter of the estimate column against ``N`` (log axis) with a fitted curve."""
    if model not in ("log", "sqrtlog"):
        raise UsageError(f"unknown model {model!r}")
    columns, rows = read_table(path)
    ycol = _SCHEMAS.get(tuple(columns))
    if ycol is None:
        raise UsageError(f"{path}: not a growth or lower-bound table")
    ns = np.array([float(r["N"]) for r in rows])
    ys = np.array([float(r[ycol]) for r in rows])
    margin = 48
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<g class="axes" stroke="black" stroke-width="1">'
           f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin // 2}" y2="{height - margin}"/>'
           f'<line x1="{margin}" y1="{height - margin}" x2="{margin}" y2="{margin // 2}"/></g>',
           f'<text x="{width // 2}" y="{height - 12}" font-size="12" text-anchor="middle">N (log scale)</text>',
           f'<text x="14" y="{height // 2}" font-size="12" text-anchor="middle" '
           f'transform="rotate(-90 14 {height // 2})">{ycol}</text>']
    if len(rows):
        lx = np.log(ns)
        x0, x1 = float(lx.min()), float(lx.max())
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        fit = norm_lab.fit_model(ns, ys, model)
        grid = np.linspace(x0, x1, 64)
        curve = fit.c * norm_lab.MODELS[model](np.exp(grid))
        ytop = float(max(ys.max(), np.nanmax(curve) if np.isfinite(fit.c) else 0.0, 1e-300)) * 1.1

        def px(v):
            return margin + (v - x0) / (x1 - x0) * (width - 1.5 * margin)

        def py(v):
            return (height - margin) - v / ytop * (height - 1.5 * margin)

        if np.isfinite(fit.c):
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(grid, curve))
            out.append(f'<polyline class="fit" fill="none" stroke="steelblue" points="{pts}"/>')
            label = "c log N" if model == "log" else "c sqrt(log N)"
            out.append(f'<text x="{width - margin}" y="{margin // 2 + 12}" font-size="11" '
                       f'text-anchor="end">{label}, c = {fit.c:.4g}</text>')
        for a, b in zip(lx, ys):
            out.append(f'<circle class="point" cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="firebrick"/>')
        for a, n in zip(lx, ns):
            out.append(f'<text x="{px(a):.2f}" y="{height - margin + 14}" font-size="10" '
                       f'text-anchor="middle">{int(n)}</text>')
    out.append("</svg>\n")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        return CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
    return CheckResult(name, bool(ok), detail)


def run_verify(level: int = 6, seed: int = 0) -> list[CheckResult]:
    """Every module invariant at a small size; each check reports one line."""
    rng = np.random.default_rng(seed)
    n = 2**level
    side = 4.0
    f = GridFunction(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)), side)
    real_f = GridFunction(rng.standard_normal((n, n)), side)
    cat = spectral_core.symbol_catalog()
    lp = spectral_core.make_lp_family()
    window = spectral_core.make_window()
    checks: list[tuple[str, Callable]] = []

    def add(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @add("spectral.parseval")
    def _():
        err = abs(spectral_core.forward_spectrum(f).norm() - f.norm()) / f.norm()
        return err < 1e-10, f"rel err {err:.1e}"

    @add("spectral.round_trip")
    def _():
        back = spectral_core.inverse_spectrum(spectral_core.forward_spectrum(f))
        err = float(np.max(np.abs(back.values - f.values)))
        return err < 1e-10, f"max err {err:.1e}"

    @add("spectral.diagonal_norm")
    def _():
        # peak at t = 0 with a clear gap; saturating symbols converge too slowly
        m = spectral_core.Symbol1D(lambda t: 1.0 / (1.0 + (side * t) ** 2) + 0j, False, "lorentz")
        est = norm_lab.power_iteration_norm(m, (0.6, 0.8), level, side, tol=1e-9)
        exact = norm_lab.exact_diagonal_norm(m, (0.6, 0.8), level, side).value
        err = abs(est.value - exact) / exact
        return err < 1e-6, f"power {est.value:.8f} vs lattice sup {exact:.8f}"

    @add("spectral.lp_partition")
    def _():
        r = np.geomspace(1e-3, 1e3, 4001)
        k = np.arange(-14, 15)
        total = lp.phi(r[:, None] * 2.0 ** (-k[None, :])).sum(axis=1)
        err = float(np.max(np.abs(total - 1)))
        return err < 1e-12, f"max |sum phi - 1| = {err:.1e}"

    @add("spectral.beta_floor")
    def _():
        return lp.beta_floor >= 1e-3, f"min |beta| on support = {lp.beta_floor:.4f}"

    @add("spectral.window_support")
    def _():
        window.validate()
        return True, f"support {window.support}"

    @add("spectral.hm_sgn")
    def _():
        rep = spectral_core.verify_hm_symbol(cat["sgn"])
        return rep.ok and abs(rep.constants[0] - 1) < 1e-12, f"C = {rep.constants}"

    @add("spectral.dmax_round_trip")
    def _():
        import tempfile
        with tempfile.TemporaryDirectory() as d:
            p = os.path.join(d, "f.dmax")
            spectral_core.write_dmax(p, f)
            g = spectral_core.read_dmax(p)
        return bool(np.array_equal(g.values, f.values)), "bit-exact"

    @add("directions.unit_distinct")
    def _():
        for kind in ("equispaced", "random", "lacunary"):
            s = dirs.make_directions(kind, 37, seed)
            dirs.DirectionSet.from_json(s.to_json())
        return True, "equispaced, random, lacunary"

    @add("directions.covering")
    def _():
        s = dirs.make_directions("equispaced", 64)
        worst = max(dirs.nearest_direction(v, s)[1]
                    for v in np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 997)),
                                              np.sin(np.linspace(0, 2 * np.pi, 997))]))
        bound = dirs.equispaced_covering_radius(64)
        return worst <= bound + 1e-12, f"worst {worst:.5f} <= {bound:.5f}"

    @add("maximal.sup_dominates")
    def _():
        s = dirs.make_directions("equispaced", 8)
        out = maximal_ops.directional_sup(f, s, cat["sgn"])
        worst = 0.0
        for v in s.vectors:
            tv = np.abs(spectral_core.apply_directional_multiplier(f, cat["sgn"], v).values)
            worst = max(worst, float(np.max(tv - out.values)))
        return worst <= 1e-12, f"max excess {worst:.1e}"

    @add("maximal.segment_spectral_vs_direct")
    def _():
        v = (0.6, 0.8)
        spec = maximal_ops.segment_multiplier(level, side, v, 1.0)
        a = np.fft.ifft2(np.fft.fft2(real_f.values) * spec).real
        b = maximal_ops.line_integrals_direct(real_f, v, 1.0).real
        err = float(np.max(np.abs(a - b)))
        return err < 1e-10, f"max err {err:.1e}"

    @add("maximal.kakeya_constant")
    def _():
        one = GridFunction(np.ones((n, n)), side)
        out = maximal_ops.kakeya_single_scale(one, dirs.make_directions("random", 5, seed))
        err = float(np.max(np.abs(out.values - 2.0)))
        return err < 1e-10, f"max |M 1 - 2| = {err:.1e}"

    @add("maximal.monotone_in_directions")
    def _():
        small = dirs.make_directions("equispaced", 8)
        big = dirs.make_directions("equispaced", 16)
        a = maximal_ops.kakeya_single_scale(real_f, small).values
        b = maximal_ops.kakeya_single_scale(real_f, big).values
        return bool(np.all(b >= a)), "nested sets"

    @add("maximal.strong_dominates_hl")
    def _():
        hl = maximal_ops.hardy_littlewood(f).values.real
        st = maximal_ops.strong_maximal(f).values.real
        ok = np.all(st >= hl - 1e-12) and np.all(hl >= np.abs(f.values) - 1e-12)
        return bool(ok), "|f| <= M f <= M* f"

    @add("maximal.hilbert_exact_vs_quadrature")
    def _():
        g = maximal_ops.InverseRadial(1.0, 8.0)
        s = dirs.make_directions("equispaced", 4)
        pts = [(2.5, 0.7), (0.3, 4.0)]
        a = maximal_ops.hilbert_max(g, s, pts, method="exact").values
        b = maximal_ops.hilbert_max(g, s, pts, maximal_ops.Quadrature(1e-3, 1e-4),
                                    method="quadrature").values
        err = float(np.max(np.abs(a - b) / np.abs(a)))
        # the integrand jumps at the annulus edges: first-order quadrature
        return err < 1e-3, f"rel err {err:.1e}"

    @add("dyadic.reconstruction")
    def _():
        d = dyadic.decompose(f)
        err = float(np.max(np.abs(d.reconstruct().values - f.values)))
        return err < 1e-10, f"max err {err:.1e}"

    @add("dyadic.orthogonality")
    def _():
        d = dyadic.decompose(f)
        worst = max(abs(d.differences[j].inner(d.differences[k]))
                    for j in range(level) for k in range(j + 1, level))
        return worst <= 1e-10 * f.norm() ** 2, f"max |<D_j, D_k>| = {worst:.1e}"

    @add("dyadic.nesting")
    def _():
        worst = 0.0
        for j in range(level + 1):
            for k in range(level + 1):
                a = dyadic.conditional_expectation(dyadic.conditional_expectation(f, k), j)
                b = dyadic.conditional_expectation(f, min(j, k))
                worst = max(worst, float(np.max(np.abs(a.values - b.values))))
        return worst < 1e-10, f"max err {worst:.1e}"

    @add("dyadic.square_function_norm")
    def _():
        sq = dyadic.square_function(f).norm()
        e0 = dyadic.conditional_expectation(f, 0).norm()
        err = abs(sq - math.sqrt(f.norm() ** 2 - e0**2))
        return err < 1e-10 * f.norm(), f"err {err:.1e}"

    @add("dyadic.cww_no_violation")
    def _():
        corpus = dyadic.martingale_corpus(20, level, seed)
        prof = dyadic.cww_profile(corpus, np.linspace(0.25, 3, 12), np.linspace(0.1, 0.9, 9))
        return prof.violations == 0 and prof.holds(), f"fitted c1 = {prof.fitted_c1}"

    @add("sectors.grid_property")
    def _():
        grids = sectors.make_circle_grids(validate=False)
        ok = all(sectors.check_grid_property(g, 14, 10) for g in grids)
        return ok, "levels to 2^-14, pairwise to 2^-10"

    @add("sectors.covering")
    def _():
        c = sectors.covering_constant(sectors.make_circle_grids(validate=False), 12)
        return c <= 8, f"C_g = {c:.4f}"

    @add("sectors.partition_orthogonality")
    def _():
        nmax = int(math.log2(n / (2 * side)))
        worst = 0.0
        for k in range(1, nmax + 1):
            parts = [sectors.sector_projection(f, w) for w in sectors.make_sectors(k)]
            total = sum((p.values for p in parts), np.zeros_like(f.values))
            ring = sectors.annulus_projection(f, k).values
            worst = max(worst, float(np.max(np.abs(total - ring))))
            for a in range(len(parts)):
                for b in range(a + 1, len(parts)):
                    worst = max(worst, abs(parts[a].inner(parts[b])) / f.norm() ** 2)
        return worst < 1e-10, f"max defect {worst:.1e}"

    @add("sectors.selection")
    def _():
        s = dirs.make_directions("equispaced", 64)
        units = sectors.direction_units(s)
        nmax = int(math.log2(n / (2 * side)))
        worst = 0.0
        for w in sectors.make_sectors(nmax):
            for v, u in zip(s.vectors, units):
                if not w.in_b(u, antipodal=True):
                    worst = max(worst, sectors.selection_defect(level, side, w, window, v))
        return worst == 0.0, f"max window value off B = {worst:.1e}"

    @add("sectors.clusters")
    def _():
        for kind in ("equispaced", "random"):
            s = dirs.make_directions(kind, 64, seed)
            secs = [w for k in range(1, 10) for w in sectors.make_sectors(k)]
            for kappa, members in sectors.kappa_classes(secs, s).items():
                for part in sectors.split_by_grid(members).values():
                    if not sectors.cluster_decompose(part, kappa).check():
                        return False, f"{kind}: kappa {kappa}"
        return True, "equispaced and random, N=64"

    @add("norm_lab.split_exact")
    def _():
        sp = norm_lab.lemma3_split(f, 0.7, 4, 4.0)
        ok = np.array_equal(sp.f1.values + sp.f2.values + sp.f3.values, f.values)
        supp = [(np.abs(p.values) > 0) for p in (sp.f1, sp.f2, sp.f3)]
        ok &= not np.any(supp[0] & supp[1]) and not np.any(supp[1] & supp[2]) \
            and not np.any(supp[0] & supp[2])
        return bool(ok), f"q = {sp.q}"

    @add("norm_lab.layer_cake")
    def _():
        a = np.linspace(0, float(np.abs(f.values).max()) * 1.01, 20001)
        cake = norm_lab.layer_cake(f, a)
        err = abs(cake.integral() - f.norm() ** 2) / f.norm() ** 2
        return err < 1e-2, f"rel err {err:.1e}"

    @add("norm_lab.witness_replay")
    def _():
        s = dirs.make_directions("equispaced", 4)
        est = norm_lab.maximal_norm_search("kakeya0", s, level, side, seed, rounds=1)
        again = norm_lab.replay(est, s)
        err = abs(again - est.value) / est.value
        return err < 1e-6, f"{est.value:.6f} replayed to {err:.1e}"

    @add("norm_lab.pointwise_lower_bound")
    def _():
        row = norm_lab.lower_bound_row(64, 1.0, 4.0)
        return row.pointwise_violations <= 0.01 * row.pointwise_samples, \
            f"{row.pointwise_violations}/{row.pointwise_samples} violations"

    return [_check(name, fn) for name, fn in checks]


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, seed: bool = True, out: bool = True):
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if out:
        p.add_argument("--out", default="-")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: $DMAX_WORKERS or all cores)")
    p.add_argument("--deterministic", action="store_true",
                   help="omit the timestamp so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirmax", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dirmax {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-directions", help="write a direction set as JSON")
    p.add_argument("--kind", choices=["equispaced", "random", "lacunary"], default="equispaced")
    p.add_argument("--n", type=int, required=True)
    _common(p)
    p.set_defaults(func=cmd_gen_directions, command=["gen-directions"])

    p = sub.add_parser("apply", help="apply one directional multiplier")
    p.add_argument("--symbol", required=True)
    p.add_argument("--v", type=parse_vector, required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--side", type=float, default=None)
    _common(p, seed=False)
    p.set_defaults(func=cmd_apply, command=["apply"])

    p = sub.add_parser("maximal", help="evaluate a maximal operator on a grid file")
    p.add_argument("--op", required=True,
                   choices=["directional", "kakeya0", "kakeya", "smooth0", "hardy-littlewood", "strong"])
    p.add_argument("--symbol", default="sgn")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--side", type=float, default=None)
    p.add_argument("--directions", default=None, help="direction-set JSON")
    p.add_argument("--kind", choices=["equispaced", "random", "lacunary"], default="equispaced")
    p.add_argument("--n", type=int, default=8)
    _common(p)
    p.set_defaults(func=cmd_maximal, command=["maximal"])

    p = sub.add_parser("experiment", help="run a numerical experiment")
    esub = p.add_subparsers(dest="experiment", required=True)

    g = esub.add_parser("growth", help="norm estimates against N")
    g.add_argument("--op", default="kakeya0")
    g.add_argument("--n", type=parse_n_list, default=parse_n_list("4,8,...,256"))
    g.add_argument("--level", type=int, default=10)
    g.add_argument("--side", type=float, default=4.0)
    g.add_argument("--rounds", type=int, default=5)
    g.add_argument("--kind", choices=["equispaced", "random"], default="equispaced")
    _common(g)
    g.set_defaults(func=cmd_growth, command=["experiment", "growth"])

    g = esub.add_parser("lower-bound", help="extremal radial function against H*")
    g.add_argument("--n", type=parse_n_list, default=parse_n_list("64,128,...,4096"))
    g.add_argument("--r0", type=float, default=1.0)
    g.add_argument("--c0", type=float, default=4.0)
    g.add_argument("--per-octave", type=int, default=64)
    g.add_argument("--angles", type=int, default=512)
    g.add_argument("--method", choices=["exact", "quadrature"], default="exact")
    _common(g)
    g.set_defaults(func=cmd_lower_bound, command=["experiment", "lower-bound"])

    g = esub.add_parser("cww", help="good-lambda profile over a martingale corpus")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--level", type=int, default=8)
    g.add_argument("--lambdas", type=parse_floats, default=list(np.linspace(0.25, 4, 16)))
    g.add_argument("--epsilons", type=parse_floats, default=list(np.linspace(0.1, 0.9, 9)))
    _common(g)
    g.set_defaults(func=cmd_cww, command=["experiment", "cww"])

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_verify, deterministic=True, command=["verify"])

    p = sub.add_parser("sectors", help="sector systems")
    ssub = p.add_subparsers(dest="sectors_cmd", required=True)
    d = ssub.add_parser("dump", help="write the sectors of one annulus as JSON")
    d.add_argument("--n", type=int, required=True, help="annulus index")
    d.add_argument("--N", type=int, default=None, help="also cluster against N directions")
    d.add_argument("--kind", choices=["equispaced", "random", "lacunary"], default="equispaced")
    d.add_argument("--directions", default=None)
    _common(d)
    d.set_defaults(func=cmd_sectors_dump, command=["sectors", "dump"])

    p = sub.add_parser("plot", help="render a growth or lower-bound CSV as SVG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--model", choices=["log", "sqrtlog"], default="sqrtlog")
    _common(p, seed=False)
    p.set_defaults(func=cmd_plot, command=["plot"])

    p = sub.add_parser("replay", help="re-run an artifact from its header and compare")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_replay, deterministic=True, command=["replay"])
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.workers is not None:
        os.environ["DMAX_WORKERS"] = str(max(1, args.workers))
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError, ValueError) as exc:
        print(f"dirmax: error: {exc}", file=sys.stderr)
        return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
