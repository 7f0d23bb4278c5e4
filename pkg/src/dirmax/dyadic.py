"""Dyadic martingale structure on the periodic square.

Level ``j`` averages over the ``4**j`` dyadic squares of side
``side * 2**-j``; on a ``2**L`` lattice the levels run ``0 .. L`` and the
differences ``Delta_k = E_{k+1} - E_k`` run ``k = 0 .. L-1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .directions import DirectionSet
from .maximal_ops import block_means, hardy_littlewood, m2
from .spectral_core import (
    GridFunction,
    LPFamily,
    Symbol1D,
    active_scales,
    apply_directional_multiplier,
    directional_symbol_grid,
    physical_radius,
    scale_projection,
)
import scipy.fft as sfft


def _check_level(f: GridFunction, j: int):
    if not 0 <= j <= f.level:
        raise ValueError(f"level {j} outside 0..{f.level}")


def conditional_expectation(f: GridFunction, j: int) -> GridFunction:
    _check_level(f, j)
    b = f.n >> j
    return f.with_values(block_means(f.values, b, b))


def martingale_difference(f: GridFunction, k: int) -> GridFunction:
    if not 0 <= k < f.level:
        raise ValueError(f"difference index {k} outside 0..{f.level - 1}")
    return conditional_expectation(f, k + 1) - conditional_expectation(f, k)


def _all_expectations(f: GridFunction) -> list[np.ndarray]:
    return [conditional_expectation(f, j).values for j in range(f.level + 1)]


def square_function(f: GridFunction) -> GridFunction:
    ex = _all_expectations(f)
    acc = np.zeros(f.values.shape)
    for k in range(f.level):
        acc += np.abs(ex[k + 1] - ex[k]) ** 2
    return GridFunction(np.sqrt(acc), f.side)


def martingale_maximal(f: GridFunction) -> GridFunction:
    out = np.zeros(f.values.shape)
    for e in _all_expectations(f):
        np.maximum(out, np.abs(e), out=out)
    return GridFunction(out, f.side)


@dataclass(frozen=True, eq=False)
class MartingaleDecomposition:
    base: GridFunction
    differences: tuple
    level: int

    def reconstruct(self) -> GridFunction:
        out = self.base.values.copy()
        for d in self.differences:
            out = out + d.values
        return self.base.with_values(out)


def decompose(f: GridFunction) -> MartingaleDecomposition:
    ex = _all_expectations(f)
    diffs = tuple(f.with_values(ex[k + 1] - ex[k]) for k in range(f.level))
    return MartingaleDecomposition(f.with_values(ex[0]), diffs, f.level)


# ---------------------------------------------------------------------------
# Chang-Wilson-Wolff profiling
# ---------------------------------------------------------------------------

C2_FIXED = 100.0


@dataclass
class CwwProfile:
    lambda_grid: np.ndarray
    epsilon_grid: np.ndarray
    lhs_measures: np.ndarray          # shape (functions, lambdas, epsilons)
    rhs_measures: np.ndarray
    fitted_c1: float
    fitted_c2: float = C2_FIXED
    violations: int = 0
    area: float = 1.0

    def bound(self, c1: Optional[float] = None) -> np.ndarray:
        c1 = self.fitted_c1 if c1 is None else c1
        eps = self.epsilon_grid[None, None, :]
        return self.fitted_c2 * np.exp(-c1 / eps**2) * self.rhs_measures

    def holds(self) -> bool:
        return self.violations == 0 and bool(np.all(self.lhs_measures <= self.bound() * (1 + 1e-12)))

    def write_csv(self, path, header: Sequence[str] = ()):
        bound = self.bound()
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "epsilon", "lhs_measure", "rhs_measure", "bound_value"])
            for fi in range(self.lhs_measures.shape[0]):
                for li, lam in enumerate(self.lambda_grid):
                    for ei, eps in enumerate(self.epsilon_grid):
                        w.writerow([repr(float(lam)), repr(float(eps)),
                                    repr(float(self.lhs_measures[fi, li, ei])),
                                    repr(float(self.rhs_measures[fi, li, ei])),
                                    repr(float(bound[fi, li, ei]))])


def _cww_measures(f: GridFunction, lambdas, epsilons):
    ex = _all_expectations(f)
    dev = np.abs(f.values - ex[0])
    sq = square_function(f).values.real
    mx = martingale_maximal(f).values.real
    cell = f.cell_area
    lhs = np.zeros((len(lambdas), len(epsilons)))
    rhs = np.zeros_like(lhs)
    for i, lam in enumerate(lambdas):
        big = dev > 2 * lam
        for k, eps in enumerate(epsilons):
            lhs[i, k] = np.count_nonzero(big & (sq < eps * lam)) * cell
            rhs[i, k] = np.count_nonzero(mx > eps * lam) * cell
    return lhs, rhs


def fit_c1(lhs: np.ndarray, rhs: np.ndarray, epsilons: np.ndarray, c2: float = C2_FIXED,
           step: float = 0.01, c1_max: float = 100.0) -> tuple[float, int]:
    """Largest ``c1`` on the grid ``step * j`` consistent with every profiled point."""
    eps = np.broadcast_to(np.asarray(epsilons)[None, :], lhs.shape[-2:])
    eps = np.broadcast_to(eps, lhs.shape)
    violation = (rhs == 0) & (lhs > 0)
    live = (lhs > 0) & (rhs > 0)
    if np.any(live):
        caps = eps[live] ** 2 * np.log(c2 * rhs[live] / lhs[live])
        cap = float(caps.min())
    else:
        cap = c1_max
    cap = min(cap, c1_max)
    c1 = math.floor(cap / step + 1e-9) * step if cap >= 0 else -math.inf
    # confirm on the grid value itself, stepping down on rounding edge cases
    while c1 >= 0 and np.any(lhs[live] > c2 * np.exp(-c1 / eps[live] ** 2) * rhs[live]):
        c1 -= step
    return (round(c1, 10) if c1 >= 0 else -math.inf), int(np.count_nonzero(violation))


def cww_profile(fs: Iterable[GridFunction], lambda_grid, epsilon_grid) -> CwwProfile:
    """Profile both sides of the good-lambda inequality over a corpus."""
    fs = list(fs)
    lambdas = np.asarray(lambda_grid, dtype=float)
    epsilons = np.asarray(epsilon_grid, dtype=float)
    if fs == [] or lambdas.size == 0 or epsilons.size == 0:
        raise ValueError("profile grids and corpus must be nonempty")
    if np.any((epsilons <= 0) | (epsilons >= 1)):
        raise ValueError("epsilon grid must lie in (0, 1)")
    parts = [_cww_measures(f, lambdas, epsilons) for f in fs]
    lhs = np.stack([p[0] for p in parts])
    rhs = np.stack([p[1] for p in parts])
    c1, bad = fit_c1(lhs, rhs, epsilons)
    return CwwProfile(lambdas, epsilons, lhs, rhs, c1, C2_FIXED, bad, fs[0].side**2)


def random_martingale(level: int, rng: np.random.Generator, side: float = 1.0,
                      weighted: bool = False) -> GridFunction:
    """Dyadic martingale with balanced random +-1 increments.

    Each square at level ``k`` gives two of its four children ``+1`` and two
    ``-1`` in random order, so every increment has zero mean on its parent.
    With ``weighted`` the increment on each square is scaled by a weight drawn
    uniformly from ``(0, 1]`` when its parent is reached; the weight is
    predictable, so the square function varies from point to point.
    """
    pattern = np.array([1.0, 1.0, -1.0, -1.0])
    s = np.zeros((1, 1))
    for k in range(level):
        parents = 4**k
        signs = rng.permuted(np.tile(pattern, (parents, 1)), axis=1)
        if weighted:
            signs *= 1.0 - rng.random((parents, 1))
        w = 2**k
        step = signs.reshape(w, w, 2, 2).transpose(0, 2, 1, 3).reshape(2 * w, 2 * w)
        s = np.kron(s, np.ones((2, 2))) + step
    return GridFunction(s, side)


def martingale_corpus(count: int, level: int, seed: int = 0, side: float = 1.0) -> list[GridFunction]:
    """Seeded corpus alternating plain and weighted +-1 martingales."""
    rng = np.random.default_rng(seed)
    return [random_martingale(level, rng, side, weighted=bool(i % 2)) for i in range(count)]


# ---------------------------------------------------------------------------
# square-function domination and high-frequency smallness
# ---------------------------------------------------------------------------


def _scale_fields(f: GridFunction, multiplier: np.ndarray, lp: LPFamily) -> list[np.ndarray]:
    """``T_k f = T(S_k f)`` for every active scale, as arrays."""
    F = sfft.fft2(f.values) * multiplier
    rho = physical_radius(f.level, f.side)
    out = []
    for k in active_scales(f.level, f.side):
        phi = lp.phi(rho * 2.0 ** (-k))
        if not np.any(phi):
            continue
        out.append(sfft.ifft2(F * phi))
    return out


def square_function_bound(fields: Sequence[np.ndarray], side: float) -> np.ndarray:
    """``(sum_k |M_2(M(g_k))|^2)^(1/2)`` with dyadic ``M``."""
    acc = None
    for g in fields:
        inner = hardy_littlewood(GridFunction(g, side))
        term = m2(inner).values.real ** 2
        acc = term if acc is None else acc + term
    if acc is None:
        return None
    return np.sqrt(acc)


def _max_ratio(lhs: np.ndarray, rhs: Optional[np.ndarray], floor: float) -> float:
    if rhs is None:
        return 0.0
    sel = rhs > floor
    if not np.any(sel):
        return 0.0
    return float(np.max(lhs[sel] / rhs[sel]))


def domination_check(f: GridFunction, m: Symbol1D, v, lp: LPFamily) -> float:
    """Max over samples of ``Delta(Tf) / (sum_k |M_2 M T_k f|^2)^(1/2)``."""
    mult = directional_symbol_grid(f.level, f.side, m, v)
    tf = f.with_values(sfft.ifft2(sfft.fft2(f.values) * mult))
    lhs = square_function(tf).values.real
    rhs = square_function_bound(_scale_fields(f, mult, lp), f.side)
    return _max_ratio(lhs, rhs, 1e-12 * f.norm())


def unit_square_level(f: GridFunction) -> int:
    """Martingale level whose squares have physical side 1."""
    j = math.log2(f.side)
    if abs(j - round(j)) > 1e-12 or not 0 <= round(j) <= f.level:
        raise ValueError("side must be a power of two not exceeding the lattice size")
    return int(round(j))


@dataclass
class E0Smallness:
    ratio: float
    trivial: bool = False


def e0_smallness_check(f: GridFunction, m: Symbol1D, cutoff_exponent: int, v,
                       lp: LPFamily) -> E0Smallness:
    """``max |E_unit(Tf)| / (sum_k |M_2 M T_k f|^2)^(1/2)``.

    ``T`` is ``m`` with ``|t| < 2**(2 * cutoff_exponent)`` removed, ``t`` the
    physical frequency.  ``E_unit`` averages over squares of physical side 1,
    so the torus side must be a power of two greater than 1.
    """
    radius = 2.0 ** (2 * cutoff_exponent)
    nyquist = f.n / (2 * f.side)
    if radius >= nyquist:
        return E0Smallness(0.0, trivial=True)
    j = unit_square_level(f)
    if j == 0:
        raise ValueError("unit squares fill the torus; use side >= 2")
    hp = m.high_pass(radius)
    mult = directional_symbol_grid(f.level, f.side, hp, v)
    tf = f.with_values(sfft.ifft2(sfft.fft2(f.values) * mult))
    lhs = np.abs(conditional_expectation(tf, j).values)
    rhs = square_function_bound(_scale_fields(f, mult, lp), f.side)
    return E0Smallness(_max_ratio(lhs, rhs, 1e-12 * f.norm()))


def g_function(f: GridFunction, s: DirectionSet, m: Symbol1D, lp: LPFamily,
               c3: float = 1.0) -> GridFunction:
    """``G(f) = c3 (sum_k |M_2(M(A_k f))|^2)^(1/2)``, ``A_k f = sup_v |T_v S_k f|``."""
    F = sfft.fft2(f.values)
    rho = physical_radius(f.level, f.side)
    mults = [directional_symbol_grid(f.level, f.side, m, v) for v in s.vectors]
    fields = []
    for k in active_scales(f.level, f.side):
        phi = lp.phi(rho * 2.0 ** (-k))
        if not np.any(phi):
            continue
        Fk = F * phi
        a = np.zeros(f.values.shape)
        for mu in mults:
            np.maximum(a, np.abs(sfft.ifft2(Fk * mu)), out=a)
        fields.append(a)
    bound = square_function_bound(fields, f.side)
    if bound is None:
        bound = np.zeros(f.values.shape)
    return GridFunction(c3 * bound, f.side)
