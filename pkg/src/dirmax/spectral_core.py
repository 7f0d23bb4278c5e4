"""Periodic lattice functions, spectra and Fourier multipliers.

Functions live on a periodic square of physical side ``side`` sampled on a
``2**L x 2**L`` lattice; sample ``(i, j)`` sits at ``(i*h, j*h)`` with
``h = side / 2**L``.  Axis 0 is the x direction, axis 1 is y.

Frequencies are integers ``(xi, eta)`` in cycles per side.  Every symbol is
evaluated at the *physical* frequency ``(xi, eta) / side`` so experiments do
not depend on the torus size.  Spectral coefficients are normalised so that
the mode ``exp(2*pi*i*(a*x + b*y)/side)`` has a single unit coefficient.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import j0

UNIT_TOL = 1e-12

__all__ = [
    "GridFunction",
    "Spectrum",
    "Symbol1D",
    "LPFamily",
    "Window",
    "HMReport",
    "KernelDecay",
    "forward_spectrum",
    "inverse_spectrum",
    "lattice_frequencies",
    "directional_symbol_grid",
    "apply_directional_multiplier",
    "radial_multiplier",
    "scale_projection",
    "band_projection",
    "reconstruction_projection",
    "ball_projection",
    "active_scales",
    "make_lp_family",
    "make_window",
    "verify_hm_symbol",
    "kernel_decay_check",
    "symbol_catalog",
    "write_dmax",
    "read_dmax",
    "read_csv_grid",
    "write_csv_grid",
]


# ---------------------------------------------------------------------------
# carriers
# ---------------------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


def _level_of(shape: Sequence[int]) -> int:
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"expected a square 2-d array, got shape {tuple(shape)}")
    n = shape[0]
    level = int(round(math.log2(n))) if n > 0 else -1
    if n <= 0 or 2**level != n:
        raise ValueError(f"side length {n} is not a power of two")
    return level


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex samples on the periodic ``2**L x 2**L`` lattice."""

    values: np.ndarray
    side: float = 1.0

    def __post_init__(self):
        vals = np.asarray(self.values)
        if not np.iscomplexobj(vals):
            vals = vals.astype(np.complex128)
        else:
            vals = vals.astype(np.complex128, copy=False)
        level = _level_of(vals.shape)
        if level < 1:
            raise ValueError("level must be at least 1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function has non-finite samples")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise ValueError(f"side must be positive, got {self.side}")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "side", float(self.side))

    @property
    def level(self) -> int:
        return _level_of(self.values.shape)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.side / self.n

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical sample coordinates ``(X, Y)`` with ``indexing='ij'``."""
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(x, x, indexing="ij")

    def norm(self) -> float:
        """L2 norm with respect to area measure."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.cell_area))

    def inner(self, other: "GridFunction") -> complex:
        self._check_compatible(other)
        return complex(np.vdot(other.values, self.values) * self.cell_area)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(values, self.side)

    def real_part(self) -> np.ndarray:
        return self.values.real

    def _check_compatible(self, other: "GridFunction"):
        if other.values.shape != self.values.shape or other.side != self.side:
            raise ValueError("grid functions live on different lattices")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c) -> "GridFunction":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    @classmethod
    def from_function(cls, func: Callable, level: int, side: float = 1.0) -> "GridFunction":
        """Sample ``func(X, Y)`` on the lattice."""
        n = 2**level
        x = np.arange(n) * (side / n)
        X, Y = np.meshgrid(x, x, indexing="ij")
        return cls(np.broadcast_to(func(X, Y), (n, n)), side)

    @classmethod
    def zeros(cls, level: int, side: float = 1.0) -> "GridFunction":
        return cls(np.zeros((2**level, 2**level), dtype=np.complex128), side)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Fourier coefficients stored in FFT order.

    ``coefficients[a % n, b % n]`` is the coefficient of the mode with integer
    frequency ``(a, b)``; the represented frequencies are ``[-n/2, n/2)``.
    """

    coefficients: np.ndarray
    side: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.complex128)
        _level_of(c.shape)
        if not np.all(np.isfinite(c)):
            raise ValueError("spectrum has non-finite coefficients")
        if not self.side > 0:
            raise ValueError("side must be positive")
        object.__setattr__(self, "coefficients", _frozen(c))
        object.__setattr__(self, "side", float(self.side))

    @property
    def level(self) -> int:
        return _level_of(self.coefficients.shape)

    @property
    def n(self) -> int:
        return self.coefficients.shape[0]

    def coefficient(self, xi: int, eta: int) -> complex:
        n = self.n
        if not (-n // 2 <= xi < n // 2 and -n // 2 <= eta < n // 2):
            raise IndexError(f"frequency ({xi}, {eta}) outside the lattice band")
        return complex(self.coefficients[xi % n, eta % n])

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        return lattice_frequencies(self.level)

    def norm(self) -> float:
        """Parseval-normalised L2 norm; equals the spatial norm."""
        return float(self.side * np.sqrt(np.sum(np.abs(self.coefficients) ** 2)))


def lattice_frequencies(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency grids ``(XI, ETA)`` in FFT order."""
    n = 2**level
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.meshgrid(k, k, indexing="ij")


def physical_radius(level: int, side: float) -> np.ndarray:
    xi, eta = lattice_frequencies(level)
    return np.hypot(xi, eta) / side


def forward_spectrum(f: GridFunction) -> Spectrum:
    n = f.n
    return Spectrum(sfft.fft2(f.values) / (n * n), f.side)


def inverse_spectrum(s: Spectrum) -> GridFunction:
    n = s.n
    return GridFunction(sfft.ifft2(s.coefficients) * (n * n), s.side)


def _spectral_apply(f: GridFunction, multiplier: np.ndarray) -> GridFunction:
    return GridFunction(sfft.ifft2(sfft.fft2(f.values) * multiplier), f.side)


# ---------------------------------------------------------------------------
# symbols
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Symbol1D:
    """One-dimensional multiplier profile ``m(t)``.

    ``profile`` must accept numpy arrays.  When ``singular_at_zero`` is set
    the value at ``t = 0`` is forced to zero (principal value convention).
    """

    profile: Callable[[np.ndarray], np.ndarray]
    singular_at_zero: bool = False
    description: str = ""

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.profile(t), dtype=np.complex128)
        out = np.broadcast_to(out, t.shape).copy()
        if self.singular_at_zero:
            out[t == 0] = 0.0
        return out

    def check_bounded(self, lo: float = 1e-3, hi: float = 1e3, samples: int = 2001) -> float:
        """Sampled sup of ``|m|`` on ``lo <= |t| <= hi``; raises if not finite."""
        t = np.geomspace(lo, hi, samples)
        vals = np.abs(self(np.concatenate([-t, t])))
        sup = float(vals.max())
        if not math.isfinite(sup):
            raise ValueError(f"symbol {self.description!r} is unbounded on a compact set")
        return sup

    def high_pass(self, radius: float) -> "Symbol1D":
        """Same symbol with ``|t| < radius`` zeroed."""
        base = self.profile

        def prof(t):
            return np.where(np.abs(t) < radius, 0.0, base(t))

        return Symbol1D(prof, self.singular_at_zero, f"{self.description}|highpass({radius:g})")


def _sgn(t):
    return np.sign(t)


def _one(t):
    return np.ones_like(t)


def _imag_power(t):
    with np.errstate(divide="ignore"):
        return np.where(t == 0, 0.0, np.exp(1j * np.log(np.abs(t) + (t == 0))))


def _smooth_sgn(t):
    return np.tanh(t)


def symbol_catalog() -> dict[str, Symbol1D]:
    """Built-in symbols addressable by id from configs and the CLI."""
    return {
        "one": Symbol1D(_one, False, "one"),
        "sgn": Symbol1D(_sgn, True, "sgn"),
        "hilbert": Symbol1D(lambda t: -1j * np.sign(t), True, "hilbert"),
        "imag-power": Symbol1D(_imag_power, True, "|t|^i"),
        "tanh": Symbol1D(_smooth_sgn, False, "tanh"),
    }


def _check_unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (2,) or abs(float(np.hypot(v[0], v[1])) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction {v!r} is not a unit vector")
    return v


def directional_symbol_grid(level: int, side: float, m: Symbol1D, v) -> np.ndarray:
    """``m((v . (xi, eta)) / side)`` on the lattice, FFT order."""
    v = _check_unit(v)
    xi, eta = lattice_frequencies(level)
    proj = v[0] * xi + v[1] * eta
    # rounding noise on frequencies exactly orthogonal to v
    scale = np.abs(xi) + np.abs(eta) + 1.0
    proj = np.where(np.abs(proj) <= 1e-12 * scale, 0.0, proj)
    return m(proj / side)


def apply_directional_multiplier(f: GridFunction, m: Symbol1D, v) -> GridFunction:
    return _spectral_apply(f, directional_symbol_grid(f.level, f.side, m, v))


# ---------------------------------------------------------------------------
# Littlewood-Paley machinery
# ---------------------------------------------------------------------------


def _expneg(u):
    out = np.zeros_like(u, dtype=float)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a = _expneg(u)
    b = _expneg(1.0 - u)
    return a / (a + b)


def _log2_radius(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(r > 0, np.log2(np.where(r > 0, r, 1.0)), -np.inf)


def lowpass_profile(r) -> np.ndarray:
    """1 on ``r <= 1``, 0 on ``r >= 2``, smooth in between."""
    u = _log2_radius(r)
    return smooth_step(np.where(np.isinf(u), 2.0, 1.0 - u))


def phi_profile(r) -> np.ndarray:
    """Telescoping Littlewood-Paley bump supported in ``1/2 < r < 2``."""
    r = np.asarray(r, dtype=float)
    return lowpass_profile(r) - lowpass_profile(2.0 * r)


def chi_profile(r) -> np.ndarray:
    """1 on ``[1/2, 2]``, 0 outside ``(1/4, 4)``."""
    u = _log2_radius(r)
    u = np.where(np.isinf(u), -10.0, u)
    return smooth_step(u + 2.0) * smooth_step(2.0 - u)


_BUMP_RADIUS = 0.125
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(256)


def _bump_hankel(rho) -> np.ndarray:
    """2-d Fourier transform of the radial bump supported in ``|x| <= 1/8``."""
    rho = np.asarray(rho, dtype=float)
    r = 0.5 * _BUMP_RADIUS * (_GL_NODES + 1.0)
    w = 0.5 * _BUMP_RADIUS * _GL_WEIGHTS
    s = r / _BUMP_RADIUS
    h = np.exp(-1.0 / (1.0 - s**2))
    flat = rho.reshape(-1)
    out = np.empty(flat.shape)
    for start in range(0, flat.size, 65536):
        chunk = flat[start:start + 65536]
        out[start:start + 65536] = 2 * np.pi * (j0(2 * np.pi * np.outer(chunk, r)) @ (h * r * w))
    return out.reshape(rho.shape)


_BETA_NORM = None


def beta_profile(r) -> np.ndarray:
    """``beta(r) = -(2 pi r)^2 |h^(r)|^2`` normalised to ``beta(1) = -1``.

    Its inverse transform is the Laplacian of ``h * h`` which is supported in
    ``|x| <= 1/4`` and integrates to zero, so ``beta(0) = 0``.
    """
    global _BETA_NORM
    if _BETA_NORM is None:
        _BETA_NORM = float((2 * np.pi) ** 2 * _bump_hankel(np.array([1.0]))[0] ** 2)
    r = np.asarray(r, dtype=float)
    uniq, inv = np.unique(r, return_inverse=True)
    vals = -((2 * np.pi * uniq) ** 2) * _bump_hankel(uniq) ** 2 / _BETA_NORM
    # beyond r ~ 200 the quadrature is noise and beta is below 1e-30 anyway
    vals = np.where(uniq > 200.0, 0.0, vals)
    return vals[inv].reshape(r.shape)


def psi_profile(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    chi = chi_profile(r)
    out = np.zeros_like(r)
    live = chi > 0
    out[live] = chi[live] / beta_profile(r[live]) ** 2
    return out


@dataclass(frozen=True)
class LPFamily:
    """Radial Littlewood-Paley symbols ``phi``, ``beta``, ``psi``.

    ``lowpass`` is the smooth ball cutoff (1 on the unit ball, 0 outside the
    ball of radius 2) from which ``phi`` is built by telescoping; ``chi`` is
    the smooth plateau that defines ``psi = chi / beta**2``.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    beta: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    lowpass: Callable[[np.ndarray], np.ndarray]
    chi: Callable[[np.ndarray], np.ndarray]
    phi_support: tuple[float, float] = (0.5, 2.0)
    beta_nonvanishing: tuple[float, float] = (0.25, 4.0)
    beta_floor: float = 0.0
    phi_sup: float = 1.0


def make_lp_family(floor: float = 1e-3, samples: int = 20001) -> LPFamily:
    """Build and validate the Littlewood-Paley triple.

    Raises ``ValueError`` when a sampled invariant fails; nothing is silently
    repaired.
    """
    rr = np.geomspace(0.25, 4.0, samples)
    beta = beta_profile(rr)
    min_beta = float(np.abs(beta).min())
    if min_beta < floor:
        raise ValueError(f"beta drops to {min_beta:.3g} < {floor} on [1/4, 4]")
    if beta_profile(np.array([0.0]))[0] != 0.0:
        raise ValueError("beta(0) must vanish")

    outside = np.concatenate([np.linspace(0, 0.5, 101), np.linspace(2.0, 10.0, 101)])
    if np.any(phi_profile(outside) != 0.0):
        raise ValueError("phi leaks outside 1/2 < r < 2")

    probe = np.geomspace(1e-3, 1e3, 997)
    total = sum(phi_profile(probe * 2.0 ** (-k)) for k in range(-40, 41))
    if np.max(np.abs(total - 1.0)) > 1e-8:
        raise ValueError("phi does not form a partition of unity")

    inside = np.geomspace(0.5, 2.0, 1001)
    if np.max(np.abs(psi_profile(inside) * beta_profile(inside) ** 2 - 1.0)) > 1e-8:
        raise ValueError("psi * beta**2 != 1 on supp phi")

    return LPFamily(
        phi=phi_profile,
        beta=beta_profile,
        psi=psi_profile,
        lowpass=lowpass_profile,
        chi=chi_profile,
        beta_floor=min_beta,
        phi_sup=float(phi_profile(np.geomspace(0.5, 2.0, 4001)).max()),
    )


def radial_multiplier(f: GridFunction, profile: Callable, k: int = 0) -> GridFunction:
    """Multiply the spectrum by ``profile(2**-k * |xi|_phys)``."""
    rho = physical_radius(f.level, f.side)
    return _spectral_apply(f, profile(rho * 2.0 ** (-k)))


def scale_projection(f: GridFunction, k: int, lp: LPFamily) -> GridFunction:
    """Littlewood-Paley piece ``S_k f``."""
    return radial_multiplier(f, lp.phi, k)


def band_projection(f: GridFunction, k: int, lp: LPFamily) -> GridFunction:
    """``B_k f`` with symbol ``beta(2**-k xi)``."""
    return radial_multiplier(f, lp.beta, k)


def reconstruction_projection(f: GridFunction, k: int, lp: LPFamily) -> GridFunction:
    """``L_k f`` with symbol ``psi(2**-k xi)``."""
    return radial_multiplier(f, lp.psi, k)


def active_scales(level: int, side: float) -> range:
    """Every ``k`` for which ``S_k`` can be nonzero on this lattice."""
    n = 2**level
    rmin = 1.0 / side
    rmax = math.hypot(n / 2, n / 2) / side
    return range(math.floor(math.log2(rmin)) - 1, math.ceil(math.log2(rmax)) + 2)


def ball_projection(f: GridFunction, m: int) -> GridFunction:
    """Sharp projection onto ``|xi|_phys <= 2**m``."""
    rho2 = physical_radius(f.level, f.side) ** 2
    return _spectral_apply(f, (rho2 <= 4.0**m).astype(float))


# ---------------------------------------------------------------------------
# single-scale window
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Smooth window ``psi`` given through its transform ``psi_hat``.

    ``psi_hat`` is tabulated on ``[0, 1]`` and evaluated by linear
    interpolation; it vanishes identically outside ``support``.
    """

    grid: np.ndarray
    table: np.ndarray
    support: tuple[float, float] = (0.0, 1.0)
    description: str = ""

    def hat(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return np.interp(tau, self.grid, self.table, left=0.0, right=0.0)

    @property
    def integral(self) -> float:
        """``integral psi = psi_hat(0)``."""
        return float(self.hat(0.0))

    def validate(self, allowed: tuple[float, float] = (0.0, 1.0)):
        lo, hi = allowed
        probe = np.concatenate([np.linspace(lo - 2.0, lo, 401, endpoint=False)[:-1],
                                np.linspace(hi, hi + 2.0, 401)[1:]])
        if np.any(self.hat(probe) != 0.0) or self.support[0] < lo or self.support[1] > hi:
            raise ValueError(f"window transform is not supported in [{lo}, {hi}]")
        return self


def make_window(points: int = 8193) -> Window:
    """``psi_hat = g_hat * g_hat`` with ``g_hat`` a bump on ``[0, 1/2]``.

    ``psi = g**2``, and ``g`` is a unimodular modulation of a real even
    profile, so ``|psi|`` is a positive bump while ``psi_hat`` stays inside
    ``[0, 1]``.
    """
    half = np.linspace(0.0, 0.5, points)
    u = 4.0 * half - 1.0
    inner = np.abs(u) < 1
    g_hat = np.zeros_like(half)
    g_hat[inner] = np.exp(-1.0 / (1.0 - u[inner] ** 2))
    d = half[1] - half[0]
    conv = np.convolve(g_hat, g_hat) * d
    grid = np.linspace(0.0, 1.0, conv.size)
    conv[0] = conv[-1] = 0.0
    conv /= conv.max()
    return Window(grid, conv, (0.0, 1.0), "g_hat*g_hat, g_hat bump on [0,1/2]").validate()


# ---------------------------------------------------------------------------
# symbol and kernel diagnostics
# ---------------------------------------------------------------------------

_CENTRAL_STENCILS = {
    1: ([-1, 1], [-0.5, 0.5]),
    2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
    3: ([-2, -1, 1, 2], [-0.5, 1.0, -1.0, 0.5]),
    4: ([-2, -1, 0, 1, 2], [1.0, -4.0, 6.0, -4.0, 1.0]),
}


@dataclass
class HMReport:
    constants: list[float]
    diverged: list[bool]
    steps: list[float]
    description: str = ""

    @property
    def ok(self) -> bool:
        return not any(self.diverged)


def _band_sups(t: np.ndarray, vals: np.ndarray, edges: np.ndarray) -> np.ndarray:
    idx = np.digitize(np.abs(t), edges) - 1
    out = np.zeros(len(edges) - 1)
    for b in range(len(edges) - 1):
        sel = idx == b
        out[b] = vals[sel].max() if np.any(sel) else 0.0
    return out


def verify_hm_symbol(m: Symbol1D, alpha_max: int = 2, decades: tuple[int, int] = (-6, 6),
                     per_decade: int = 40) -> HMReport:
    """Estimate ``C_a = sup |t|^a |m^(a)(t)|`` by central differences.

    The relative step is ``max(1e-4, eps**(1/(a+2)))``; higher orders need the
    larger step to keep rounding noise below the signal.  A constant is
    flagged as diverging when the per-decade sup keeps growing by more than
    50% per decade over the three decades at either end of the sampled range.
    """
    if alpha_max > 4:
        raise ValueError("orders above 4 are not checkable by finite differences")
    lo, hi = decades
    mag = np.logspace(lo, hi, (hi - lo) * per_decade + 1)
    t = np.concatenate([-mag[::-1], mag])
    edges = 10.0 ** np.arange(lo, hi + 1, dtype=float)
    edges[0] *= 0.999
    edges[-1] *= 1.001
    constants, diverged, steps = [], [], []
    eps = np.finfo(float).eps
    for alpha in range(alpha_max + 1):
        if alpha == 0:
            deriv = m(t)
            rel = 0.0
        else:
            rel = max(1e-4, eps ** (1.0 / (alpha + 2)))
            h = np.abs(t) * rel
            offs, coef = _CENTRAL_STENCILS[alpha]
            deriv = sum(c * m(t + o * h) for o, c in zip(offs, coef)) / h**alpha
        vals = np.abs(t) ** alpha * np.abs(deriv)
        sup = float(vals.max())
        bands = _band_sups(t, vals, edges)
        growing = False
        for end in (bands[:3][::-1], bands[-3:]):
            if np.all(end > 0) and np.all(end[1:] > 1.5 * end[:-1]):
                growing = True
        constants.append(sup)
        diverged.append(bool(growing or not math.isfinite(sup)))
        steps.append(rel)
    return HMReport(constants, diverged, steps, m.description)


@dataclass
class KernelDecay:
    constant: float
    exponent: float
    radii: np.ndarray
    envelope: np.ndarray


def kernel_decay_check(v, lp: LPFamily, window: Window, level: int = 9,
                       side: float = 32.0) -> KernelDecay:
    """Fit ``|K_v(x)| <= c (1 + |x|)^-3`` for ``K_v = (phi_0 * psi_hat(v.xi))^``.

    ``phi_0`` is the smooth ball cutoff ``lp.lowpass``.  The kernel is the
    Riemann sum of the continuous inverse transform, i.e. its ``side``
    periodisation.  Returns the fitted constant and the log-log slope of the
    shell envelope on the tail ``|x| >= 2`` above the rounding floor.
    """
    v = _check_unit(v)
    window.validate()
    xi, eta = lattice_frequencies(level)
    n = 2**level
    rho = np.hypot(xi, eta) / side
    if n / (2 * side) <= 2.0:
        raise ValueError("lattice band does not contain the ball of radius 2")
    proj = (v[0] * xi + v[1] * eta) / side
    symbol = lp.lowpass(rho) * window.hat(proj)
    kernel = sfft.ifft2(symbol) * (n * n) / side**2
    h = side / n
    idx = np.fft.fftfreq(n, d=1.0 / n) * h
    X, Y = np.meshgrid(idx, idx, indexing="ij")
    r = np.hypot(X, Y)
    absk = np.abs(kernel)
    constant = float(np.max(absk * (1.0 + r) ** 3))

    edges = 2.0 ** np.arange(1, int(math.log2(side / 2)) + 1, 0.5)
    floor = 1e-12 * absk.max()
    radii, env = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (r >= a) & (r < b)
        e = absk[sel].max()
        if e <= floor:
            break
        radii.append(math.sqrt(a * b))
        env.append(e)
    radii_arr, env_arr = np.array(radii), np.array(env)
    if len(radii) >= 2:
        slope = float(np.polyfit(np.log1p(radii_arr), np.log(env_arr), 1)[0])
    else:
        slope = -math.inf
    return KernelDecay(constant, slope, radii_arr, env_arr)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

DMAX_MAGIC = b"DMAX"
DMAX_VERSION = 1
DMAX_HEADER = struct.Struct("<4sIId")


def write_dmax(path, f: GridFunction, extra: Optional[bytes] = None):
    """Write the binary container: header then (re, im) float64 pairs row-major."""
    with open(path, "wb") as fh:
        fh.write(DMAX_HEADER.pack(DMAX_MAGIC, DMAX_VERSION, f.level, f.side))
        fh.write(np.ascontiguousarray(f.values, dtype="<c16").tobytes())
        if extra:
            fh.write(extra)


def read_dmax_header(fh):
    raw = fh.read(DMAX_HEADER.size)
    if len(raw) != DMAX_HEADER.size:
        raise ValueError("truncated DMAX header")
    magic, version, level, side = DMAX_HEADER.unpack(raw)
    if magic != DMAX_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != DMAX_VERSION:
        raise ValueError(f"unsupported DMAX version {version}")
    return level, side


def read_dmax(path) -> GridFunction:
    with open(path, "rb") as fh:
        level, side = read_dmax_header(fh)
        n = 2**level
        data = fh.read(16 * n * n)
        if len(data) != 16 * n * n:
            raise ValueError("truncated DMAX payload")
        if fh.read(1):
            raise ValueError("DMAX file holds more than one grid function")
    vals = np.frombuffer(data, dtype="<c16").reshape(n, n).astype(np.complex128)
    return GridFunction(vals, side)


def write_csv_grid(path, f: GridFunction):
    n = f.n
    with open(path, "w") as fh:
        fh.write(f"# level={f.level} side={f.side!r}\n")
        fh.write("x_index,y_index,re,im\n")
        for i in range(n):
            for j in range(n):
                z = f.values[i, j]
                fh.write(f"{i},{j},{float(z.real)!r},{float(z.imag)!r}\n")


def read_csv_grid(path, side: Optional[float] = None) -> GridFunction:
    """Import ``x_index,y_index,re,im`` rows; missing cells are zero."""
    rows = []
    header_side = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("side="):
                        header_side = float(tok[5:])
                continue
            if line.startswith("x_index"):
                continue
            i, j, re, im = line.split(",")
            rows.append((int(i), int(j), float(re), float(im)))
    if not rows:
        raise ValueError("empty grid CSV")
    size = max(max(r[0], r[1]) for r in rows) + 1
    n = 1 << max(1, (size - 1).bit_length())
    vals = np.zeros((n, n), dtype=np.complex128)
    for i, j, re, im in rows:
        vals[i, j] = complex(re, im)
    return GridFunction(vals, side if side is not None else (header_side or 1.0))
