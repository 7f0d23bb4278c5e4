"""Directional maximal operators and the auxiliary maximal functions.

Lattice operators share one pattern: each direction ``v`` defines a Fourier
multiplier, the input spectrum is computed once, and the output is the
pointwise sup of magnitudes over directions with the first maximising index
recorded.
"""
from __future__ import annotations

import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .directions import DirectionSet
from .spectral_core import (
    DMAX_HEADER,
    DMAX_MAGIC,
    DMAX_VERSION,
    GridFunction,
    Symbol1D,
    Window,
    directional_symbol_grid,
    lattice_frequencies,
    read_dmax_header,
)


@dataclass(frozen=True, eq=False)
class MaximalOutput:
    values: np.ndarray
    argmax: np.ndarray
    side: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("maximal output must be finite and nonnegative")
        arg = np.asarray(self.argmax, dtype=np.uint32)
        vals.flags.writeable = False
        arg.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "argmax", arg)

    @property
    def grid(self) -> GridFunction:
        return GridFunction(self.values, self.side)

    def norm(self) -> float:
        n = self.values.shape[0]
        return float(np.sqrt(np.sum(self.values**2)) * self.side / n)


def write_maximal(path, out: MaximalOutput):
    """DMAX header, then ``values`` as float64 and ``argmax`` as uint32."""
    n = out.values.shape[0]
    level = n.bit_length() - 1
    with open(path, "wb") as fh:
        fh.write(DMAX_HEADER.pack(DMAX_MAGIC, DMAX_VERSION, level, out.side))
        fh.write(np.ascontiguousarray(out.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(out.argmax, dtype="<u4").tobytes())


def read_maximal(path) -> MaximalOutput:
    with open(path, "rb") as fh:
        level, side = read_dmax_header(fh)
        n = 2**level
        payload = fh.read()
    if len(payload) != 12 * n * n:
        raise ValueError("file is not a maximal-output container")
    vals = np.frombuffer(payload[:8 * n * n], dtype="<f8").reshape(n, n)
    arg = np.frombuffer(payload[8 * n * n:], dtype="<u4").reshape(n, n)
    return MaximalOutput(vals.copy(), arg.copy(), side)


def default_workers() -> int:
    env = os.environ.get("DMAX_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# generic sup over directional multipliers
# ---------------------------------------------------------------------------


class _Spectrum:
    """Input spectrum, kept in half form when the input is real."""

    def __init__(self, f: GridFunction):
        self.n = f.n
        self.side = f.side
        self.real = not np.any(f.values.imag)
        if self.real:
            self.half = sfft.rfft2(f.values.real)
        self.full = None
        self._values = f.values

    def apply(self, multiplier: np.ndarray, hermitian: bool) -> np.ndarray:
        """Magnitude of the inverse transform after multiplication."""
        n = self.n
        if self.real and hermitian:
            h = multiplier.shape[1]
            if h != n // 2 + 1:
                multiplier = multiplier[:, : n // 2 + 1]
            return np.abs(sfft.irfft2(self.half * multiplier, s=(n, n)))
        if self.full is None:
            self.full = sfft.fft2(self._values)
        return np.abs(sfft.ifft2(self.full * multiplier))


def _sup_reduce(spec: _Spectrum, directions: Sequence, multiplier_of: Callable,
                hermitian: bool, workers: int) -> MaximalOutput:
    n = spec.n
    idx = list(range(len(directions)))

    def run(chunk):
        best = np.full((n, n), -1.0)
        arg = np.zeros((n, n), dtype=np.uint32)
        for j in chunk:
            mag = spec.apply(multiplier_of(directions[j]), hermitian)
            upd = mag > best
            best[upd] = mag[upd]
            arg[upd] = j
        return best, arg

    workers = max(1, int(workers))
    if workers == 1 or len(idx) < 2:
        best, arg = run(idx)
    else:
        size = math.ceil(len(idx) / workers)
        chunks = [idx[i:i + size] for i in range(0, len(idx), size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
        best, arg = parts[0]
        for b, a in parts[1:]:
            # chunks are in index order, strict '>' keeps the first maximiser
            upd = b > best
            best[upd] = b[upd]
            arg[upd] = a[upd]
    return MaximalOutput(np.maximum(best, 0.0), arg, spec.side)


def directional_sup(f: GridFunction, s: DirectionSet, m: Symbol1D, workers: int = 1) -> MaximalOutput:
    """``sup_v |T_v f|`` with ``T_v`` the multiplier ``m(v . xi)``."""
    spec = _Spectrum(f)
    return _sup_reduce(spec, s.vectors,
                       lambda v: directional_symbol_grid(f.level, f.side, m, v),
                       hermitian=False, workers=workers)


def smooth_single_scale(f: GridFunction, s: DirectionSet, window: Window,
                        workers: int = 1) -> MaximalOutput:
    """``sup_v |int F(x + t v) psi(t) dt|`` computed spectrally."""
    window.validate()
    xi, eta = lattice_frequencies(f.level)

    def mult(v):
        return window.hat((v[0] * xi + v[1] * eta) / f.side)

    return _sup_reduce(_Spectrum(f), s.vectors, mult, hermitian=False, workers=workers)


# ---------------------------------------------------------------------------
# line segment averages: bilinear interpolation + trapezoid rule
# ---------------------------------------------------------------------------


def _segment_nodes(eps: float, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    intervals = max(1, int(round(2 * eps / (spacing / 2))))
    t = np.linspace(-eps, eps, intervals + 1)
    w = np.full(intervals + 1, 2 * eps / intervals)
    w[0] = w[-1] = eps / intervals
    return t, w


def _shift_rows(a: np.ndarray, n: int) -> np.ndarray:
    """Rows ``u(a_k, xi)``: multiplier of the bilinear shift by ``a_k`` cells."""
    fl = np.floor(a)
    fr = a - fl
    fl = fl.astype(np.int64)
    xi = np.arange(n, dtype=np.int64)
    ph0 = np.exp(2j * np.pi * ((np.outer(fl, xi)) % n) / n)
    ph1 = np.exp(2j * np.pi * ((np.outer(fl + 1, xi)) % n) / n)
    return (1.0 - fr)[:, None] * ph0 + fr[:, None] * ph1


def segment_multiplier(level: int, side: float, v, eps: float) -> np.ndarray:
    """Fourier multiplier of ``f -> sum_k w_k f(x + t_k v)`` (bilinear samples).

    Exactly the lattice operator "bilinear interpolation, trapezoid rule with
    step h/2 on [-eps, eps]"; returned as a real array since the node set is
    symmetric.
    """
    n = 2**level
    h = side / n
    t, w = _segment_nodes(eps, h)
    ua = _shift_rows(t * v[0] / h, n)
    ub = _shift_rows(t * v[1] / h, n)
    return ((ua.T * w) @ ub).real


def _canonical(v) -> tuple[tuple[float, float], int]:
    """Representative of ``v`` modulo sign and quarter turns, plus the turn count."""
    x, y = float(v[0]), float(v[1])
    if y < 0 or (y == 0 and x < 0):
        x, y = -x, -y
    if x <= 0 and y > 0:
        return (y, -x), 1
    return (x, y), 0


class SegmentCache:
    """LRU cache of segment multipliers keyed by canonical direction."""

    def __init__(self, max_bytes: int = 700 * 2**20):
        self.max_bytes = max_bytes
        self._store: OrderedDict = OrderedDict()
        self._bytes = 0

    def clear(self):
        self._store.clear()
        self._bytes = 0

    def get(self, level: int, side: float, v, eps: float) -> np.ndarray:
        (cx, cy), turns = _canonical(v)
        key = (level, side, eps, round(cx, 14), round(cy, 14))
        mu = self._store.get(key)
        if mu is None:
            mu = segment_multiplier(level, side, (cx, cy), eps)
            mu.flags.writeable = False
            self._store[key] = mu
            self._bytes += mu.nbytes
            while self._bytes > self.max_bytes and len(self._store) > 1:
                _, old = self._store.popitem(last=False)
                self._bytes -= old.nbytes
        else:
            self._store.move_to_end(key)
        if turns == 0:
            return mu
        n = mu.shape[0]
        neg = (-np.arange(n)) % n
        # quarter turn: mu_{Rv}[i, j] = mu_v[j, -i]
        return mu[:, neg].T


SEGMENTS = SegmentCache()


def _segment_sup(f: GridFunction, s: DirectionSet, eps_list: Sequence[float],
                 normalise: bool, workers: int) -> MaximalOutput:
    spec = _Spectrum(f)
    pairs = [(v, e) for v in s.vectors for e in eps_list]

    def mult(pair):
        v, e = pair
        mu = SEGMENTS.get(f.level, f.side, v, e)
        return mu / (2 * e) if normalise else mu

    out = _sup_reduce(spec, pairs, mult, hermitian=True, workers=workers)
    # report the direction index, not the (direction, scale) pair
    return MaximalOutput(out.values, out.argmax // len(eps_list), f.side)


def dyadic_epsilons(f: GridFunction, top: Optional[float] = None) -> list[float]:
    top = f.side / 2 if top is None else top
    eps, e = [], f.spacing
    while e <= top * (1 + 1e-12):
        eps.append(e)
        e *= 2
    return eps


def kakeya_max(f: GridFunction, s: DirectionSet, epsilons: Optional[Sequence[float]] = None,
               workers: int = 1) -> MaximalOutput:
    """``sup_v sup_eps`` of line averages over ``|t| < eps``."""
    if epsilons is None:
        epsilons = dyadic_epsilons(f)
    epsilons = list(epsilons)
    if not epsilons:
        raise ValueError("empty epsilon list")
    h = f.spacing
    for e in epsilons:
        if e < h * (1 - 1e-12) or e > f.side / 2 * (1 + 1e-12):
            raise ValueError(f"scale {e} outside [grid spacing, side/2]")
        k = math.log2(e / h)
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"scale {e} is not a dyadic multiple of the spacing")
    return _segment_sup(f, s, epsilons, True, workers)


def kakeya_single_scale(f: GridFunction, s: DirectionSet, workers: int = 1) -> MaximalOutput:
    """``sup_v |int_{|t|<1} f(x + t v) dt|``."""
    if f.side < 4:
        raise ValueError("single-scale Kakeya needs side >= 4")
    return _segment_sup(f, s, [1.0], False, workers)


def line_integrals_direct(f: GridFunction, v, eps: float) -> np.ndarray:
    """Reference spatial evaluation of ``sum_k w_k f(x + t_k v)``.

    Four periodic rolls per node; used to cross-check the spectral path.
    """
    h = f.spacing
    t, w = _segment_nodes(eps, h)
    vals = f.values
    out = np.zeros_like(vals)
    for tk, wk in zip(t, w):
        a, b = tk * v[0] / h, tk * v[1] / h
        ia, ib = math.floor(a), math.floor(b)
        fa, fb = a - ia, b - ib
        acc = ((1 - fa) * (1 - fb) * np.roll(vals, (-ia, -ib), (0, 1))
               + fa * (1 - fb) * np.roll(vals, (-ia - 1, -ib), (0, 1))
               + (1 - fa) * fb * np.roll(vals, (-ia, -ib - 1), (0, 1))
               + fa * fb * np.roll(vals, (-ia - 1, -ib - 1), (0, 1)))
        out += wk * acc
    return out


# ---------------------------------------------------------------------------
# dyadic maximal functions
# ---------------------------------------------------------------------------


def block_means(a: np.ndarray, bx: int, by: int) -> np.ndarray:
    """Means over aligned ``bx x by`` blocks, broadcast back to full size."""
    n0, n1 = a.shape
    m = a.reshape(n0 // bx, bx, n1 // by, by).mean(axis=(1, 3))
    return np.broadcast_to(m[:, None, :, None], (n0 // bx, bx, n1 // by, by)).reshape(n0, n1)


def hardy_littlewood(f: GridFunction) -> GridFunction:
    """Dyadic maximal function: sup of averages of ``|f|`` over dyadic squares."""
    a = np.abs(f.values)
    out = a.copy()
    n = f.n
    b = 2
    while b <= n:
        np.maximum(out, block_means(a, b, b), out=out)
        b *= 2
    return GridFunction(out, f.side)


def m2(f: GridFunction) -> GridFunction:
    sq = GridFunction(np.abs(f.values) ** 2, f.side)
    return GridFunction(np.sqrt(hardy_littlewood(sq).values.real), f.side)


def strong_maximal(f: GridFunction) -> GridFunction:
    """Sup of averages of ``|f|`` over dyadic axis-parallel rectangles."""
    a = np.abs(f.values)
    n = f.n
    out = a.copy()
    sizes = [2**k for k in range(f.level + 1)]
    for bx in sizes:
        # averaging along x first, then every y size
        ax = a.reshape(n // bx, bx, n).mean(axis=1)
        for by in sizes:
            if bx == 1 and by == 1:
                continue
            m = ax.reshape(n // bx, n // by, by).mean(axis=2)
            full = np.broadcast_to(m[:, None, :, None], (n // bx, bx, n // by, by)).reshape(n, n)
            np.maximum(out, full, out=out)
    return GridFunction(out, f.side)


# ---------------------------------------------------------------------------
# plane functions and the directional Hilbert maximal function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    """Midpoint rule on ``0 < t <= extent`` pairing ``t`` with ``-t``.

    Cell width is ``step`` near the singularity and grows like
    ``rel_step * t`` further out.
    """

    step: float = 1e-3
    rel_step: float = 1e-4
    extent: Optional[float] = None

    def nodes(self, extent: float) -> tuple[np.ndarray, np.ndarray]:
        t1 = min(extent, self.step / self.rel_step)
        edges = [np.arange(0.0, t1, self.step)]
        if extent > t1:
            k = math.ceil(math.log(extent / t1) / math.log1p(self.rel_step))
            edges.append(t1 * (1 + self.rel_step) ** np.arange(k + 1))
        e = np.unique(np.concatenate(edges + [[extent]]))
        e = e[e <= extent]
        return 0.5 * (e[1:] + e[:-1]), np.diff(e)


class PlaneFunction:
    """Compactly supported function on the plane, given by a callable."""

    def __init__(self, func: Callable, support_radius: float, description: str = ""):
        self.func = func
        self.support_radius = float(support_radius)
        self.description = description

    def __call__(self, x, y):
        return self.func(np.asarray(x, float), np.asarray(y, float))


def box_indicator(half_width: float = 1.0) -> PlaneFunction:
    def f(x, y):
        return ((np.abs(x) <= half_width) & (np.abs(y) <= half_width)).astype(float)

    return PlaneFunction(f, half_width * math.sqrt(2), f"1_[-{half_width},{half_width}]^2")


class InverseRadial(PlaneFunction):
    """``f(p) = 1/|p|`` on ``r_in <= |p| <= r_out``, zero elsewhere.

    Besides point evaluation it provides the exact principal-value line
    integral ``p.v. int f(p + t v) dt / t``.
    """

    def __init__(self, r_in: float, r_out: float):
        if not 0 < r_in < r_out:
            raise ValueError("need 0 < r_in < r_out")
        self.r_in = float(r_in)
        self.r_out = float(r_out)
        super().__init__(self._eval, r_out, f"1/|x| on [{r_in:g}, {r_out:g}]")

    def _eval(self, x, y):
        r = np.hypot(x, y)
        with np.errstate(divide="ignore"):
            return np.where((r >= self.r_in) & (r <= self.r_out), 1.0 / np.where(r > 0, r, 1), 0.0)

    @property
    def norm(self) -> float:
        return math.sqrt(2 * math.pi * math.log(self.r_out / self.r_in))

    def line_pv(self, px, py, vx, vy) -> np.ndarray:
        px, py, vx, vy = np.broadcast_arrays(*(np.asarray(a, float) for a in (px, py, vx, vy)))
        rho = np.hypot(px, py)
        c = px * vx + py * vy             # t = s - c, s measured from the foot point
        d2 = np.maximum(rho**2 - c**2, 0.0)
        out = np.zeros(rho.shape)
        b2 = self.r_out**2 - d2
        a2 = self.r_in**2 - d2
        live = (b2 > 0) & (rho > 0)
        b = np.sqrt(np.where(live, b2, 0.0))
        a = np.sqrt(np.maximum(a2, 0.0))
        hole = a2 > 0
        # both branches are evaluated; the unused one may overflow for tiny rho
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            logd2 = np.log(d2)
            whole = self._piece(-b, b, c, d2, rho, logd2)
            left = self._piece(-b, -a, c, d2, rho, logd2)
            right = self._piece(a, b, c, d2, rho, logd2)
            res = np.where(hole, left + right, whole)
            inner = live & (rho < self.r_in)
            res = np.where(inner, self._inside(c, d2, rho, a, b), res)
        out[live] = res[live]
        return out

    @staticmethod
    def _inside(c, d2, rho, a, b):
        """Value for ``|p| < r_in``, free of the cancellation in the split form.

        The two halves of the line combine into ``int_a^b 2c ds / ((s^2 - c^2) R)``
        with ``R = sqrt(s^2 + d^2)``, which equals ``2 artanh(z) / rho``; ``z`` is
        rearranged so the ``d^2`` factors cancel analytically.
        """
        wa = np.sqrt(1 + d2 / a**2)
        wb = np.sqrt(1 + d2 / b**2)
        inv = 1 / a**2 - 1 / b**2
        den = wa * wb - rho**2 * (1 / a**2 + 1 / b**2 + d2 / (a * b) ** 2) / (1 + wa * wb)
        q = inv / (wa + wb) / den
        z = c * rho * q
        gain = np.where(z == 0, 1.0, np.arctanh(z) / np.where(z == 0, 1.0, z))
        return 2 * c * q * gain

    @staticmethod
    def _antider(s, c, d2, rho):
        q = d2 + c * s
        rs = rho * np.sqrt(s * s + d2)
        br = q < 0
        pos = np.log(np.where(br, 1.0, q + rs)) - np.log(np.abs(s - c))
        neg = np.log(np.abs(s - c)) - np.log(np.where(br, rs - q, 1.0))
        return np.where(br, neg, pos), br.astype(float)

    def _piece(self, s1, s2, c, d2, rho, logd2):
        a1, b1 = self._antider(s1, c, d2, rho)
        a2, b2 = self._antider(s2, c, d2, rho)
        jump = np.where(b2 != b1, (b2 - b1) * logd2, 0.0)
        return -(a2 - a1 + jump) / rho


@dataclass(frozen=True, eq=False)
class PointValues:
    values: np.ndarray
    argmax: np.ndarray


def hilbert_line_quadrature(f: PlaneFunction, p, v, quad: Quadrature) -> float:
    """``p.v. int f(p + t v) dt / t`` by the paired midpoint rule."""
    px, py = float(p[0]), float(p[1])
    extent = quad.extent or (2 * f.support_radius + math.hypot(px, py))
    t, dt = quad.nodes(extent)
    g = f(px + t * v[0], py + t * v[1]) - f(px - t * v[0], py - t * v[1])
    return float(np.sum(g / t * dt))


def hilbert_max(f: PlaneFunction, s: DirectionSet, points, quad: Optional[Quadrature] = None,
                method: str = "auto", chunk: int = 1 << 20) -> PointValues:
    """``sup_v |p.v. int f(p + t v) dt/t|`` at the given plane points.

    ``method='exact'`` uses ``f.line_pv`` (available for ``InverseRadial``);
    ``'quadrature'`` always integrates numerically; ``'auto'`` prefers exact.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    quad = quad or Quadrature()
    if quad.step > f.support_radius:
        raise ValueError("quadrature step exceeds the support radius")
    use_exact = method == "exact" or (method == "auto" and hasattr(f, "line_pv"))
    if use_exact and not hasattr(f, "line_pv"):
        raise ValueError("exact evaluation unavailable for this function")
    vecs = s.vectors
    best = np.full(len(pts), -1.0)
    arg = np.zeros(len(pts), dtype=np.uint32)
    if use_exact:
        per = max(1, chunk // max(1, len(vecs)))
        for start in range(0, len(pts), per):
            p = pts[start:start + per]
            vals = np.abs(f.line_pv(p[:, 0:1], p[:, 1:2], vecs[None, :, 0], vecs[None, :, 1]))
            best[start:start + per] = vals.max(axis=1)
            arg[start:start + per] = vals.argmax(axis=1)
    else:
        for i, p in enumerate(pts):
            for j, v in enumerate(vecs):
                val = abs(hilbert_line_quadrature(f, p, v, quad))
                if val > best[i]:
                    best[i] = val
                    arg[i] = j
    return PointValues(best, arg)
