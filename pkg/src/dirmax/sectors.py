"""Shifted circle grids, annular sectors and cluster decomposition.

Angles are measured in turns (``[0, 1)`` is the circle).  Grid decisions use
exact integer arithmetic in units of ``1 / (3 * 2**ANGLE_BITS)`` turns, so a
dyadic interval shifted by a third of its length has integer endpoints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .directions import DirectionSet
from .maximal_ops import strong_maximal
from .spectral_core import GridFunction, Window, lattice_frequencies, smooth_step

ANGLE_BITS = 30
UNITS = 3 * 2**ANGLE_BITS
GRID_SHIFTS = (Fraction(0), Fraction(1, 3), Fraction(2, 3))


def to_units(turn: Fraction) -> int:
    """Exact position of a turn in grid units (floor when not representable)."""
    t = Fraction(turn) % 1
    return math.floor(t * UNITS)


def to_turns(units: int) -> Fraction:
    return Fraction(int(units) % UNITS, UNITS)


def _contains(start, length, a, b_len):
    """Half-open arc ``[start, start+length)`` contains ``[a, a+b_len)``."""
    return (np.mod(np.asarray(a) - start, UNITS) + b_len) <= length


def _intersect(s1, l1, s2, l2) -> bool:
    """Half-open arcs intersect."""
    if l1 >= UNITS or l2 >= UNITS:
        return True
    return (s2 - s1) % UNITS < l1 or (s1 - s2) % UNITS < l2


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircleGrid:
    """Dyadic intervals on the circle, level ``m`` shifted by ``(-1)**m * shift * 2**-m``."""

    grid_id: int

    @property
    def shift(self) -> Fraction:
        return GRID_SHIFTS[self.grid_id]

    def offset(self, m: int) -> int:
        """Start of interval ``k = 0`` at level ``m``, in units."""
        sign = 1 if m % 2 == 0 else -1
        return (sign * self.grid_id * 2 ** (ANGLE_BITS - m)) % UNITS

    @staticmethod
    def length(m: int) -> int:
        return 3 * 2 ** (ANGLE_BITS - m)

    def intervals(self, m: int) -> np.ndarray:
        """Starts (units) of the ``2**m`` intervals at level ``m``, by ``k``."""
        k = np.arange(2**m, dtype=np.int64)
        return (self.offset(m) + k * self.length(m)) % UNITS

    def containing(self, m: int, point) -> np.ndarray:
        """Start of the level-``m`` interval containing ``point`` (units)."""
        length = self.length(m)
        off = self.offset(m)
        k = np.floor_divide(np.mod(np.asarray(point, dtype=np.int64) - off, UNITS), length)
        return (off + k * length) % UNITS

    def interval_turns(self, m: int, k: int) -> tuple[Fraction, Fraction]:
        start = to_turns(self.intervals(m)[k])
        return start, start + Fraction(1, 2**m)


def check_grid_property(grid: CircleGrid, finest: int = 14, pairwise_finest: int = 10) -> bool:
    """Nested-or-disjoint property, verified two ways.

    Every level must tile the circle and every interval must sit inside an
    interval one level up; together these imply the grid property at all
    levels down to ``finest``.  Levels up to ``pairwise_finest`` are also
    compared literally pair by pair.
    """
    for m in range(finest + 1):
        starts = np.sort(grid.intervals(m))
        gaps = np.diff(np.append(starts, starts[0] + UNITS))
        if not np.all(gaps == grid.length(m)):
            return False
        if m > 0:
            parent = grid.containing(m - 1, starts)
            if not np.all(_contains(parent, grid.length(m - 1), starts, grid.length(m))):
                return False
    starts, lengths = [], []
    for m in range(pairwise_finest + 1):
        s = grid.intervals(m)
        starts.append(s)
        lengths.append(np.full(s.shape, grid.length(m)))
    s = np.concatenate(starts)
    ln = np.concatenate(lengths)
    full = ln >= UNITS
    for i in range(len(s)):
        if full[i]:
            continue
        d1 = np.mod(s - s[i], UNITS)
        d2 = np.mod(s[i] - s, UNITS)
        meet = (d1 < ln[i]) | (d2 < ln) | full
        inside = _contains(s, ln, s[i], ln[i]) | full
        around = _contains(s[i], ln[i], s, ln)
        if np.any(meet & ~inside & ~around):
            return False
    return True


def covering_interval(grids: Sequence[CircleGrid], a: int, length: int) -> tuple[int, int, int]:
    """Shortest grid interval containing the arc ``[a, a+length)``.

    Returns ``(grid_id, start, length)`` in units; ties go to the lower grid
    id.  The level-0 interval of grid 0 is the whole circle, so this never
    fails.
    """
    for m in range(ANGLE_BITS, -1, -1):
        ln = CircleGrid.length(m)
        if ln < length:
            continue
        for g in grids:
            s = int(g.containing(m, a))
            if _contains(s, ln, a, length):
                return g.grid_id, s, ln
    raise AssertionError("the whole circle contains every arc")


def covering_constant(grids: Sequence[CircleGrid], resolution: int = 12,
                      max_fraction: Fraction = Fraction(1, 3)) -> float:
    """Worst ``|J| / |I|`` over all arcs ``I`` on the ``2**-resolution`` lattice.

    ``I`` ranges over every start and every length up to ``max_fraction``;
    ``J`` is the shortest interval of the three grids containing ``I``.
    """
    step = 3 * 2 ** (ANGLE_BITS - resolution)
    starts = np.arange(2**resolution, dtype=np.int64) * step
    worst = 0.0
    max_len = math.floor(max_fraction * 2**resolution)
    for q in range(1, max_len + 1):
        length = q * step
        best = np.full(starts.shape, UNITS, dtype=np.int64)
        for m in range(resolution, 0, -1):
            ln = CircleGrid.length(m)
            if ln < length:
                continue
            hit = np.zeros(starts.shape, dtype=bool)
            for g in grids:
                s = g.containing(m, starts)
                hit |= _contains(s, ln, starts, length)
            best = np.where(hit & (best == UNITS), ln, best)
            if np.all(best < UNITS) and ln >= 4 * length:
                break
        worst = max(worst, float(best.max()) / length)
    return worst


def make_circle_grids(validate: bool = True, finest: int = 14,
                      covering_resolution: int = 12, max_constant: float = 8.0) -> tuple:
    grids = tuple(CircleGrid(i) for i in range(3))
    if validate:
        for g in grids:
            if not check_grid_property(g, finest):
                raise ValueError(f"grid {g.grid_id} violates the nesting property")
        c = covering_constant(grids, covering_resolution)
        if c > max_constant:
            raise ValueError(f"covering constant {c} exceeds {max_constant}")
    return grids


# ---------------------------------------------------------------------------
# sectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sector:
    n: int
    index: int
    grid_id: int
    b_start: int          # units
    b_length: int         # units
    full_circle: bool = False

    @property
    def count(self) -> int:
        return 2**self.n

    @property
    def angle_lo(self) -> Fraction:
        return Fraction(self.index, self.count)

    @property
    def angle_hi(self) -> Fraction:
        return Fraction(self.index + 1, self.count)

    @property
    def aperture(self) -> float:
        """Aperture in radians."""
        return 2 * math.pi / self.count

    @property
    def inner_radius(self) -> float:
        return 2.0 ** (self.n - 1)

    @property
    def outer_radius(self) -> float:
        return 2.0**self.n

    @property
    def center_turn(self) -> Fraction:
        return (self.angle_lo + self.angle_hi) / 2

    @property
    def bisector(self) -> np.ndarray:
        a = 2 * math.pi * float(self.center_turn)
        return np.array([math.cos(a), math.sin(a)])

    @property
    def target(self) -> tuple[int, int]:
        """``10 A(omega)`` rotated a quarter turn, as a units arc."""
        half = Fraction(5, self.count)
        return to_units(self.center_turn + Fraction(1, 4) - half), to_units(2 * half)

    @property
    def b_turns(self) -> tuple[Fraction, Fraction]:
        lo = to_turns(self.b_start)
        return lo, lo + Fraction(self.b_length, UNITS)

    @property
    def b_center(self) -> Fraction:
        lo, hi = self.b_turns
        return ((lo + hi) / 2) % 1

    @property
    def key(self) -> tuple[int, int]:
        return self.n, self.index

    def in_b(self, turn_units, antipodal: bool = False) -> np.ndarray:
        inside = np.mod(np.asarray(turn_units) - self.b_start, UNITS) < self.b_length
        if antipodal:
            inside = inside | self.in_b(np.mod(np.asarray(turn_units) + UNITS // 2, UNITS))
        return inside

    def theta(self, xi, eta) -> np.ndarray:
        """Smooth bump: 1 on the sector, 0 outside the enlarged sector."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        r = np.hypot(xi, eta)
        with np.errstate(divide="ignore"):
            u = np.log2(r)
        radial = smooth_step(u - (self.n - 2)) * smooth_step((self.n + 1) - u)
        turn = np.mod(np.arctan2(eta, xi) / (2 * math.pi), 1.0)
        delta = np.abs(np.mod(turn - float(self.center_turn) + 0.5, 1.0) - 0.5)
        half = 0.5 / self.count
        angular = smooth_step((2 * half - delta) / half)
        return np.where(r > 0, radial * angular, 0.0)

    def contains_points(self, xi, eta) -> np.ndarray:
        """Membership of physical frequencies in the closed sector ``omega``."""
        r = np.hypot(xi, eta)
        turn = np.mod(np.arctan2(eta, xi) / (2 * math.pi), 1.0)
        delta = np.abs(np.mod(turn - float(self.center_turn) + 0.5, 1.0) - 0.5)
        tol = 1e-12
        return ((r >= self.inner_radius * (1 - tol)) & (r <= self.outer_radius * (1 + tol))
                & (delta <= 0.5 / self.count + tol))

    def to_dict(self) -> dict:
        lo, hi = self.b_turns
        return {
            "n": self.n,
            "angle_lo_turns": str(self.angle_lo),
            "angle_hi_turns": str(self.angle_hi),
            "grid_id": self.grid_id,
            "b_lo": str(lo),
            "b_hi": str(hi),
        }


def make_sectors(n: int, grids: Optional[Sequence[CircleGrid]] = None) -> list[Sector]:
    """The ``2**n`` sectors of the annulus ``2**(n-1) < |xi| <= 2**n``.

    ``B(omega)`` is the shortest grid interval containing ``10 A(omega)``
    turned by a quarter; when the tenfold arc exceeds a third of the circle
    the covering bound no longer applies and ``B`` is the whole circle.
    """
    if n < 1:
        raise ValueError("sector scale must be at least 1")
    if n > ANGLE_BITS - 2:
        raise ValueError("sector scale beyond the angular resolution")
    grids = tuple(grids) if grids is not None else make_circle_grids(validate=False)
    out = []
    for j in range(2**n):
        proto = Sector(n, j, 0, 0, UNITS, True)
        a, ln = proto.target
        if Fraction(10, 2**n) > Fraction(1, 3):
            out.append(proto)
            continue
        g, s, bl = covering_interval(grids, a, ln)
        out.append(Sector(n, j, g, s, bl, bl >= UNITS))
    return out


@lru_cache(maxsize=16)
def sector_index_grid(level: int, side: float, n: int) -> np.ndarray:
    """Sector index of every lattice frequency in annulus ``n``, else ``-1``.

    Radii use ``2**(n-1) < |xi| <= 2**n`` and angles ``(lo, hi]``, so every
    point on a boundary goes to the lower sector.
    """
    xi, eta = lattice_frequencies(level)
    r2 = (xi.astype(float) ** 2 + eta.astype(float) ** 2) / side**2
    in_ring = (r2 > 4.0 ** (n - 1)) & (r2 <= 4.0**n)
    pos = np.mod(np.arctan2(eta, xi) / (2 * math.pi), 1.0) * 2**n
    snapped = np.where(np.abs(pos - np.round(pos)) < 1e-9, np.round(pos), pos)
    idx = (np.ceil(snapped).astype(np.int64) - 1) % 2**n
    out = np.where(in_ring, idx, -1)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=4096)
def _sector_points(level: int, side: float, n: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat lattice indices and frequencies of one sector."""
    flat = np.flatnonzero(sector_index_grid(level, side, n) == index)
    xi, eta = lattice_frequencies(level)
    return flat, np.stack([xi.ravel()[flat], eta.ravel()[flat]]) / side


def _check_nyquist(f: GridFunction, n: int):
    if 2.0**n > f.n / (2 * f.side):
        raise ValueError(f"annulus {n} lies beyond the lattice band")


def sector_projection(f: GridFunction, sector: Sector) -> GridFunction:
    _check_nyquist(f, sector.n)
    mask = sector_index_grid(f.level, f.side, sector.n) == sector.index
    return f.with_values(sfft.ifft2(sfft.fft2(f.values) * mask))


def annulus_projection(f: GridFunction, n: int) -> GridFunction:
    _check_nyquist(f, n)
    mask = sector_index_grid(f.level, f.side, n) >= 0
    return f.with_values(sfft.ifft2(sfft.fft2(f.values) * mask))


# ---------------------------------------------------------------------------
# kappa classes and clusters
# ---------------------------------------------------------------------------


def direction_units(s: DirectionSet) -> np.ndarray:
    return np.array([to_units(t) for t in s.turns()], dtype=np.int64)


def kappa_of(count: int) -> int:
    """``kappa`` with ``2**(kappa-1) < count <= 2**kappa``; ``count = 1`` gives 0."""
    if count < 1:
        raise ValueError("count must be positive")
    return (count - 1).bit_length()


def kappa_classes(sectors: Iterable[Sector], s: DirectionSet) -> dict[int, list[Sector]]:
    dirs = direction_units(s)
    classes: dict[int, list[Sector]] = {}
    for w in sectors:
        c = int(np.count_nonzero(w.in_b(dirs)))
        if c == 0:
            continue
        classes.setdefault(kappa_of(c), []).append(w)
    return classes


def split_by_grid(sectors: Iterable[Sector]) -> dict[int, list[Sector]]:
    out: dict[int, list[Sector]] = {}
    for w in sectors:
        out.setdefault(w.grid_id, []).append(w)
    return out


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int):
        a, b = self.find(i), self.find(j)
        if a != b:
            self.parent[max(a, b)] = min(a, b)


@dataclass
class ClusterSet:
    kappa: int
    clusters: list            # lists of sector keys (n, index)
    t_values: list            # Fraction turns
    b_intervals: dict = field(default_factory=dict)   # key -> (start, length) units

    def to_json(self) -> str:
        adj = {}
        for cl in self.clusters:
            for key in cl:
                adj[f"{key[0]}:{key[1]}"] = [f"{o[0]}:{o[1]}" for o in cl if o != key]
        return json.dumps({
            "kappa": self.kappa,
            "clusters": [[f"{k[0]}:{k[1]}" for k in cl] for cl in self.clusters],
            "t_values": [str(t) for t in self.t_values],
            "adjacency": adj,
        }, sort_keys=True)

    def check(self) -> bool:
        """Common point inside clusters, disjointness across clusters."""
        for cl in self.clusters:
            point = to_units(self.t_values[self.clusters.index(cl)])
            for key in cl:
                s, ln = self.b_intervals[key]
                if not (np.mod(point - s, UNITS) < ln):
                    return False
        flat = [(ci, key) for ci, cl in enumerate(self.clusters) for key in cl]
        for a in range(len(flat)):
            for b in range(a + 1, len(flat)):
                if flat[a][0] == flat[b][0]:
                    continue
                if _intersect(*self.b_intervals[flat[a][1]], *self.b_intervals[flat[b][1]]):
                    return False
        return True


def cluster_decompose(sectors: Sequence[Sector], kappa: int = 0) -> ClusterSet:
    """Group sectors whose ``B`` intervals intersect (all from one grid)."""
    sectors = list(sectors)
    if len({w.grid_id for w in sectors if not w.full_circle}) > 1:
        raise ValueError("sectors must share a grid")
    distinct = sorted({(w.b_start, w.b_length) for w in sectors})
    uf = UnionFind(len(distinct))
    for i, (s1, l1) in enumerate(distinct):
        for j in range(i + 1, len(distinct)):
            s2, l2 = distinct[j]
            if not _intersect(s1, l1, s2, l2):
                continue
            nested = (bool(_contains(s1, l1, s2, l2)) or bool(_contains(s2, l2, s1, l1))
                      or l1 >= UNITS or l2 >= UNITS)
            if not nested:
                raise ValueError("intersecting B intervals that are not nested")
            uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(len(distinct)):
        groups.setdefault(uf.find(i), []).append(i)
    index = {b: i for i, b in enumerate(distinct)}
    clusters, t_values = [], []
    for root in sorted(groups):
        members = groups[root]
        smallest = min(members, key=lambda i: (distinct[i][1], distinct[i][0]))
        s, ln = distinct[smallest]
        t_values.append(to_turns(s + ln // 2))
        member_set = set(members)
        clusters.append(sorted(w.key for w in sectors if index[(w.b_start, w.b_length)] in member_set))
    b = {w.key: (w.b_start, w.b_length) for w in sectors}
    return ClusterSet(kappa, clusters, t_values, b)


# ---------------------------------------------------------------------------
# windowed sector fields
# ---------------------------------------------------------------------------


def turn_vector(turn) -> np.ndarray:
    a = 2 * math.pi * float(turn)
    return np.array([math.cos(a), math.sin(a)])


def windowed_sector_hat(f_hat: np.ndarray, level: int, side: float, sector: Sector,
                        window: Window, v) -> np.ndarray:
    """Coefficients of ``int F_omega(x + t v) psi(t) dt``."""
    flat, pts = _sector_points(level, side, sector.n, sector.index)
    out = np.zeros(f_hat.shape, dtype=complex)
    out.ravel()[flat] = f_hat.ravel()[flat] * window.hat(v[0] * pts[0] + v[1] * pts[1])
    return out


def windowed_sector(f: GridFunction, sector: Sector, window: Window, v) -> GridFunction:
    _check_nyquist(f, sector.n)
    return f.with_values(sfft.ifft2(windowed_sector_hat(sfft.fft2(f.values), f.level, f.side,
                                                        sector, window, v)))


def selection_defect(level: int, side: float, sector: Sector, window: Window, v) -> float:
    """Largest window value met on the sector's lattice points for direction ``v``."""
    flat, pts = _sector_points(level, side, sector.n, sector.index)
    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(window.hat(v[0] * pts[0] + v[1] * pts[1]))))


def direction_stability_check(f: GridFunction, sector: Sector, v, v2, window: Window,
                              threshold: float = 1e-12,
                              mstar: Optional[np.ndarray] = None) -> float:
    """Max of ``|F~(v) - F~(v')| / (2**n |v - v'| M*F)``.

    Both directions must lie in ``B(omega)``; ``M*F`` is the strong maximal
    function of ``|F|`` over dyadic rectangles.
    """
    v = np.asarray(v, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    units = [to_units(Fraction(float(np.mod(np.arctan2(u[1], u[0]) / (2 * math.pi), 1.0))))
             for u in (v, v2)]
    if not all(bool(sector.in_b(u)) for u in units):
        raise ValueError("both directions must lie in B(omega)")
    dist = float(np.hypot(*(v - v2)))
    if dist == 0.0:
        return 0.0
    fh = sfft.fft2(f.values)
    a = sfft.ifft2(windowed_sector_hat(fh, f.level, f.side, sector, window, v))
    b = sfft.ifft2(windowed_sector_hat(fh, f.level, f.side, sector, window, v2))
    if mstar is None:
        mstar = strong_maximal(f).values.real
    scale = 2.0**sector.n * dist * mstar
    sel = mstar > threshold * max(f.norm(), 1e-300)
    if not np.any(sel):
        return 0.0
    return float(np.max(np.abs(a - b)[sel] / scale[sel]))


def _ball_mask(level: int, side: float, m: int) -> np.ndarray:
    xi, eta = lattice_frequencies(level)
    r2 = (xi.astype(float) ** 2 + eta.astype(float) ** 2) / side**2
    return r2 <= 4.0**m


def cluster_operator_check(f: GridFunction, cluster: Sequence[Sector], s: DirectionSet,
                           window: Window, t_value: Fraction, threshold: float = 1e-12,
                           mstar: Optional[np.ndarray] = None) -> float:
    """Smallest ``c`` with ``|sup_v |sum F~(v)| - sup_v |P_m(v) G|| <= c M*F``.

    ``G`` freezes every field at the cluster direction ``t(C)`` (and at the
    opposite direction for ``v`` in the antipodal copy of ``B``); ``m(v)``
    is the largest scale ``n`` with ``v`` in ``B(omega)``.
    """
    if f.norm() == 0.0:
        return 0.0
    fh = sfft.fft2(f.values)
    dirs = direction_units(s)
    t = turn_vector(t_value)
    frozen = {}
    for sign in (1.0, -1.0):
        acc = np.zeros(fh.shape, dtype=complex)
        for w in cluster:
            acc += windowed_sector_hat(fh, f.level, f.side, w, window, sign * t)
        frozen[sign] = acc
    lhs = np.zeros(f.values.shape)
    rhs = np.zeros(f.values.shape)
    for v, u in zip(s.vectors, dirs):
        hat = np.zeros(fh.shape, dtype=complex)
        for w in cluster:
            hat += windowed_sector_hat(fh, f.level, f.side, w, window, v)
        np.maximum(lhs, np.abs(sfft.ifft2(hat)), out=lhs)
        for sign, shift in ((1.0, 0), (-1.0, UNITS // 2)):
            scales = [w.n for w in cluster if bool(w.in_b((u + shift) % UNITS))]
            if scales:
                g = sfft.ifft2(frozen[sign] * _ball_mask(f.level, f.side, max(scales)))
                np.maximum(rhs, np.abs(g), out=rhs)
    if mstar is None:
        mstar = strong_maximal(f).values.real
    sel = mstar > threshold * f.norm()
    if not np.any(sel):
        return 0.0
    return float(np.max(np.abs(lhs - rhs)[sel] / mstar[sel]))


def sectors_to_json(sectors: Sequence[Sector]) -> str:
    return json.dumps([w.to_dict() for w in sectors], indent=1)
