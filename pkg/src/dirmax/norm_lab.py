"""Operator-norm estimation and growth experiments.

Linear multipliers have exact norms (the lattice sup of the symbol), which
power iteration must reproduce.  Maximal operators are sublinear, so their
"norms" here are lower bounds: the best ratio ``|op f| / |f|`` found over a
structured family of test functions, each backed by a replayable witness.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .directions import DirectionSet, make_directions
from .maximal_ops import (
    InverseRadial,
    MaximalOutput,
    directional_sup,
    hilbert_max,
    kakeya_max,
    kakeya_single_scale,
    smooth_single_scale,
)
from .spectral_core import (
    GridFunction,
    Symbol1D,
    directional_symbol_grid,
    lattice_frequencies,
    make_window,
    symbol_catalog,
)

KINDS = ("exact_diagonal", "lower_bound_witness", "power_iteration")


@dataclass
class NormEstimate:
    operator_id: str
    N: int
    level: int
    kind: str
    value: float
    witness: Optional[GridFunction] = None
    converged: bool = True
    residual: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimate kind {self.kind!r}")
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError("norm estimates are finite and nonnegative")


# ---------------------------------------------------------------------------
# layer cake and the three-way split
# ---------------------------------------------------------------------------


@dataclass
class LayerCake:
    thresholds: np.ndarray
    measures: np.ndarray

    def integral(self, lo: float = 0.0, hi: float = math.inf) -> float:
        """Trapezoid value of ``2 int_lo^hi alpha nu(alpha) d alpha`` on the thresholds."""
        a = self.thresholds
        sel = (a >= lo) & (a <= hi)
        return float(np.trapezoid(2 * a[sel] * self.measures[sel], a[sel]))


def layer_cake(f: GridFunction, thresholds) -> LayerCake:
    a = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(a) < 0):
        raise ValueError("thresholds must be ascending")
    mags = np.sort(np.abs(f.values).ravel())
    above = mags.size - np.searchsorted(mags, a, side="right")
    return LayerCake(a, above * f.cell_area)


@dataclass
class SplitTriple:
    f1: GridFunction
    f2: GridFunction
    f3: GridFunction
    lam: float
    N: int
    q: float

    @property
    def upper(self) -> float:
        return self.N * self.lam

    @property
    def lower(self) -> float:
        return self.N ** (-self.q) * self.lam


def lemma3_split(f: GridFunction, lam: float, N: int, p: float) -> SplitTriple:
    """Split by ``|f| > N lam``, ``N**-q lam < |f| <= N lam`` and the rest, ``q = p/(p-2)``."""
    if p <= 2:
        raise ValueError("the split needs p > 2")
    if lam <= 0 or N < 1:
        raise ValueError("need lam > 0 and N >= 1")
    q = p / (p - 2)
    mag = np.abs(f.values)
    top = mag > N * lam
    low = mag <= N ** (-q) * lam
    mid = ~top & ~low
    z = np.zeros_like(f.values)
    return SplitTriple(f.with_values(np.where(top, f.values, z)),
                       f.with_values(np.where(mid, f.values, z)),
                       f.with_values(np.where(low, f.values, z)), lam, N, q)


# ---------------------------------------------------------------------------
# the extremal radial function and the Hilbert lower bound
# ---------------------------------------------------------------------------


def extremal_function(N: int, r0: float = 1.0, c0: float = 100.0) -> tuple[InverseRadial, float]:
    """``1/|p|`` on ``r0 <= |p| <= N/c0`` and its exact L2 norm."""
    outer = N / c0
    if not (r0 > 0 and outer > r0):
        raise ValueError(f"empty annulus [{r0}, {outer}]")
    f = InverseRadial(r0, outer)
    return f, math.sqrt(2 * math.pi * math.log(outer / r0))


@dataclass
class LowerBoundRow:
    N: int
    r0: float
    c0: float
    f_norm: float
    Tf_norm: float
    pointwise_violations: int
    pointwise_samples: int

    @property
    def ratio(self) -> float:
        return self.Tf_norm / self.f_norm

    def as_csv(self) -> list:
        return [self.N, repr(self.r0), repr(self.c0), repr(self.f_norm), repr(self.Tf_norm),
                repr(self.ratio), self.pointwise_violations]


LOWER_BOUND_COLUMNS = ["N", "r0", "c0", "f_norm", "Tf_norm", "ratio", "pointwise_violations"]


def polar_radii(lo: float, hi: float, per_octave: int = 64) -> tuple[np.ndarray, float]:
    """Midpoints of a log-spaced partition of ``[lo, hi]`` and the log step."""
    octaves = math.log2(hi / lo)
    cells = max(1, math.ceil(octaves * per_octave))
    du = math.log(hi / lo) / cells
    return lo * np.exp(du * (np.arange(cells) + 0.5)), du


def lower_bound_row(N: int, r0: float = 1.0, c0: float = 4.0, per_octave: int = 64,
                    angles: int = 512, method: str = "exact") -> LowerBoundRow:
    """One row of the extremal experiment for ``N`` equispaced directions.

    ``|H* f|_2`` is integrated over ``r0/4 <= |p| <= 4 N/c0`` (midpoint rule
    in ``log |p|``, ``angles`` equispaced angles).  The direction set is
    invariant under rotation by ``1/N`` turn and ``f`` is radial, so only
    sample angles distinct modulo ``1/N`` turn are evaluated.
    """
    f, f_norm = extremal_function(N, r0, c0)
    s = make_directions("equispaced", N)
    radii, du = polar_radii(r0 / 4, 4 * f.r_out, per_octave)
    classes = angles // math.gcd(N, angles)
    theta = 2 * math.pi * np.arange(classes) / angles
    pts = np.stack([np.outer(radii, np.cos(theta)).ravel(),
                    np.outer(radii, np.sin(theta)).ravel()], axis=1)
    vals = hilbert_max(f, s, pts, method=method).values.reshape(len(radii), classes)
    # every class stands for angles/classes sample angles with the same values
    mean_sq = np.mean(vals**2, axis=1)
    norm_sq = float(np.sum(mean_sq * 2 * math.pi * radii**2) * du)
    valid = (radii >= c0 * r0) & (radii <= f.r_out)
    bound = np.log(radii / r0) / (4 * radii)
    violations = int(np.count_nonzero(vals[valid] < bound[valid, None]))
    return LowerBoundRow(N, r0, c0, f_norm, math.sqrt(norm_sq), violations,
                         int(np.count_nonzero(valid)) * classes)


def lower_bound_experiment(n_list: Sequence[int], r0: float = 1.0, c0: float = 4.0,
                           per_octave: int = 64, angles: int = 512,
                           method: str = "exact") -> list[LowerBoundRow]:
    return [lower_bound_row(int(N), r0, c0, per_octave, angles, method) for N in n_list]


# ---------------------------------------------------------------------------
# linear operators: power iteration against the diagonal law
# ---------------------------------------------------------------------------


def exact_diagonal_norm(m: Symbol1D, v, level: int, side: float = 1.0) -> NormEstimate:
    mult = directional_symbol_grid(level, side, m, v)
    return NormEstimate(m.description, 1, level, "exact_diagonal", float(np.max(np.abs(mult))))


def power_iteration_norm(m: Symbol1D, v, level: int, side: float = 1.0, tol: float = 1e-6,
                         max_iter: int = 500, seed: int = 0) -> NormEstimate:
    """Largest singular value of ``T_v`` by power iteration on ``T* T``.

    ``T`` and its adjoint (the conjugate symbol) are applied through FFTs; the
    estimate is the square root of the Rayleigh quotient.
    """
    mult = directional_symbol_grid(level, side, m, v)
    rng = np.random.default_rng(seed)
    n = 2**level
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    x /= np.linalg.norm(x)
    sigma = 0.0
    residual = math.inf
    converged = False
    for _ in range(max_iter):
        tx = sfft.ifft2(mult * sfft.fft2(x))
        y = sfft.ifft2(np.conj(mult) * sfft.fft2(tx))
        rayleigh = float(np.vdot(x, y).real)
        new = math.sqrt(max(rayleigh, 0.0))
        ny = np.linalg.norm(y)
        residual = float(np.linalg.norm(y - rayleigh * x) / max(ny, 1e-300))
        if ny == 0.0:
            sigma, converged = 0.0, True
            break
        x = y / ny
        if abs(new - sigma) <= tol * 1e-3 * max(new, 1e-300) or residual <= tol:
            sigma, converged = new, True
            break
        sigma = new
    return NormEstimate(m.description, 1, level, "power_iteration", sigma,
                        converged=converged, residual=residual)


# ---------------------------------------------------------------------------
# maximal operators: family search
# ---------------------------------------------------------------------------


def operator_catalog() -> dict[str, Callable[[GridFunction, DirectionSet], MaximalOutput]]:
    """Maximal operators addressable by id."""
    cat = symbol_catalog()
    window = make_window()
    return {
        "kakeya0": lambda f, s: kakeya_single_scale(f, s),
        "kakeya": lambda f, s: kakeya_max(f, s),
        "hilbert": lambda f, s: directional_sup(f, s, cat["hilbert"]),
        "smooth0": lambda f, s: smooth_single_scale(f, s, window),
    }


def operator_ratio(op: Callable, f: GridFunction, s: DirectionSet) -> float:
    nf = f.norm()
    if nf == 0.0:
        return 0.0
    return op(f, s).norm() / nf


def _centered(level: int, side: float) -> tuple[np.ndarray, np.ndarray]:
    """Periodic coordinates centred at the origin, in ``[-side/2, side/2)``."""
    x = (np.arange(2**level) * side / 2**level + side / 2) % side - side / 2
    return np.meshgrid(x, x, indexing="ij")


def radial_candidate(level: int, side: float, inner: float, outer: float = 1.0,
                     alpha: float = 1.0, capped: bool = False) -> GridFunction:
    """``|p|**-alpha`` on ``inner <= |p| <= outer``.

    With ``capped`` the disc ``|p| < inner`` carries the constant
    ``inner**-alpha`` instead of zero.
    """
    X, Y = _centered(level, side)
    r = np.hypot(X, Y)
    rr = np.maximum(r, inner)
    keep = (r <= outer) & ((r >= inner) | capped)
    return GridFunction(np.where(keep, rr ** (-alpha), 0.0), side)


def annulus_candidate(level: int, side: float, k: int, rng: np.random.Generator) -> GridFunction:
    """Random-phase function with spectrum on ``2**(k-1) < |xi| <= 2**k``."""
    xi, eta = lattice_frequencies(level)
    r = np.hypot(xi, eta) / side
    ring = (r > 2.0 ** (k - 1)) & (r <= 2.0**k)
    coef = ring * np.exp(2j * np.pi * rng.random(ring.shape))
    return GridFunction(sfft.ifft2(coef).real, side)


def bush_candidate(level: int, side: float, s: DirectionSet, length: float = 1.0,
                   width: Optional[float] = None) -> GridFunction:
    """Indicator of the union of ``length x width`` tubes through the origin along ``s``."""
    X, Y = _centered(level, side)
    width = 2 * side / 2**level if width is None else width
    out = np.zeros(X.shape, dtype=bool)
    for vx, vy in s.vectors:
        along = X * vx + Y * vy
        across = -X * vy + Y * vx
        out |= (np.abs(along) <= length) & (np.abs(across) <= width / 2)
    return GridFunction(out.astype(float), side)


def candidate_family(level: int, side: float, s: DirectionSet, seed: int = 0) -> list[tuple[str, GridFunction]]:
    """The structured test family used by the norm search."""
    rng = np.random.default_rng(seed)
    h = side / 2**level
    fam = [("constant", GridFunction(np.ones((2**level, 2**level)), side))]
    inner = 0.5
    while inner >= h * (1 - 1e-12):
        fam.append((f"radial[{inner:g},1]", radial_candidate(level, side, inner)))
        inner /= 4
    fam.append(("radial[h,side/2]", radial_candidate(level, side, h, side / 2)))
    for alpha in (1.0, 1.1):
        fam.append((f"capped[{alpha:g}]", radial_candidate(level, side, h, side / 2, alpha, True)))
    fam.append(("gaussian", GridFunction(rng.standard_normal((2**level, 2**level)), side)))
    top = int(math.floor(math.log2(2**level / (2 * side))))
    for k in range(0, top + 1, 2):
        fam.append((f"annulus[{k}]", annulus_candidate(level, side, k, rng)))
    fam.append(("bush", bush_candidate(level, side, s)))
    return fam


def maximal_norm_search(op_id: str, s: DirectionSet, level: int = 8, side: float = 4.0,
                        seed: int = 0, rounds: int = 5,
                        extra: Sequence[tuple[str, GridFunction]] = (),
                        op: Optional[Callable] = None) -> NormEstimate:
    """Best ratio over the family, then greedy re-weighting of the top three.

    The three best candidates are normalized and combined as ``sum w_i g_i``
    starting from ``w = (1, 0, 0)``; each round tries ``w_i +- step`` for
    every coordinate, keeps improvements, and halves the step.
    """
    op = op or operator_catalog()[op_id]
    fam = candidate_family(level, side, s, seed) + list(extra)
    scored = sorted(((operator_ratio(op, g, s), i, name, g) for i, (name, g) in enumerate(fam)),
                    key=lambda t: (-t[0], t[1]))
    best_val, _, best_name, best_f = scored[0]
    top = [t[3] for t in scored[:3]]
    norms = [max(g.norm(), 1e-300) for g in top]
    basis = [g.values / nv for g, nv in zip(top, norms)]
    w = np.zeros(len(basis))
    w[0] = 1.0
    step = 0.5

    def combo(weights):
        return GridFunction(sum(c * b for c, b in zip(weights, basis)), side)

    current = best_val
    for _ in range(rounds):
        for i in range(len(w)):
            for trial in (w[i] + step, w[i] - step):
                cand = w.copy()
                cand[i] = trial
                if not np.any(cand):
                    continue
                val = operator_ratio(op, combo(cand), s)
                if val > current + 1e-12:
                    current, w = val, cand
        step /= 2
    if current > best_val:
        best_val, best_f, best_name = current, combo(w), f"greedy({best_name})"
    return NormEstimate(op_id, len(s), level, "lower_bound_witness", best_val, best_f,
                        label=best_name)


def replay(est: NormEstimate, s: DirectionSet, op: Optional[Callable] = None) -> float:
    op = op or operator_catalog()[est.operator_id]
    return operator_ratio(op, est.witness, s)


# ---------------------------------------------------------------------------
# growth curves
# ---------------------------------------------------------------------------


@dataclass
class Fit:
    model: str
    c: float
    residual: float
    degenerate: bool = False


MODELS = {
    "log": lambda n: np.log(n),
    "sqrtlog": lambda n: np.sqrt(np.log(n)),
    "pow0.1": lambda n: np.power(n, 0.1),
}


def fit_model(ns, values, model: str) -> Fit:
    """Least squares ``values ~ c g(N)`` with relative residual ``|y - c g| / |y|``."""
    g = MODELS[model](np.asarray(ns, dtype=float))
    y = np.asarray(values, dtype=float)
    denom = float(np.dot(g, g))
    c = float(np.dot(g, y) / denom) if denom > 0 else math.nan
    if len(y) < 2:
        return Fit(model, c, math.nan, True)
    ny = float(np.linalg.norm(y))
    res = float(np.linalg.norm(y - c * g) / ny) if ny > 0 else math.nan
    return Fit(model, c, res)


GROWTH_COLUMNS = ["operator", "N", "L", "seed", "estimate", "logN", "sqrtlogN",
                  "fit_c_log", "fit_c_sqrt", "resid_log", "resid_sqrt"]


@dataclass
class GrowthCurve:
    operator: str
    level: int
    seed: int
    estimates: list
    fits: dict = field(default_factory=dict)

    @property
    def ns(self) -> list[int]:
        return [e.N for e in self.estimates]

    @property
    def values(self) -> list[float]:
        return [e.value for e in self.estimates]

    def rows(self) -> list[list]:
        fl, fs = self.fits["log"], self.fits["sqrtlog"]
        out = []
        for e in self.estimates:
            out.append([self.operator, e.N, self.level, self.seed, repr(float(e.value)),
                        repr(float(math.log(e.N))), repr(float(math.sqrt(math.log(e.N)))),
                        repr(fl.c), repr(fs.c), repr(fl.residual), repr(fs.residual)])
        return out

    def write_csv(self, path, header: Sequence[str] = ()):
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GROWTH_COLUMNS)
            w.writerows(self.rows())


def growth_curve(op_id: str, n_list: Sequence[int], level: int = 10, side: float = 4.0,
                 seed: int = 0, rounds: int = 5, kind: str = "equispaced",
                 progress: Optional[Callable[[NormEstimate], None]] = None) -> GrowthCurve:
    """Norm search per ``N``; the previous witness is replayed for monotonicity.

    For nested direction sets the sup over the larger set dominates the sup
    over the smaller one pointwise, so replaying the previous witness keeps
    the estimates nondecreasing.
    """
    op = operator_catalog()[op_id]
    estimates = []
    prev = None
    for N in n_list:
        s = make_directions(kind, int(N), seed)
        extra = [("previous", prev.witness)] if prev is not None else []
        est = maximal_norm_search(op_id, s, level, side, seed, rounds, extra, op)
        estimates.append(est)
        if progress:
            progress(est)
        prev = est
    curve = GrowthCurve(op_id, level, seed, estimates)
    curve.fits = {m: fit_model(curve.ns, curve.values, m) for m in MODELS}
    return curve


def comparison_constant(fs: Sequence[GridFunction], s: DirectionSet) -> tuple[float, float]:
    """Largest ratios ``|M0 f| / |K f|`` and ``|K f| / |M0 f|`` over ``fs``.

    ``M0`` is the smooth one-sided window operator and ``K`` the unit-scale
    line integral; the pair records how far apart the two single-scale
    operators are on the given inputs.
    """
    window = make_window()
    a = b = 0.0
    for f in fs:
        m0 = smooth_single_scale(f, s, window).norm()
        k0 = kakeya_single_scale(f, s).norm()
        if k0 > 0:
            a = max(a, m0 / k0)
        if m0 > 0:
            b = max(b, k0 / m0)
    return a, b
