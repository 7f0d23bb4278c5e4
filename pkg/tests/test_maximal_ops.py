import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from scipy.integrate import quad

from dirmax.directions import DirectionSet, make_directions
from dirmax.maximal_ops import (
    InverseRadial,
    MaximalOutput,
    PlaneFunction,
    Quadrature,
    box_indicator,
    directional_sup,
    hardy_littlewood,
    hilbert_line_quadrature,
    hilbert_max,
    kakeya_max,
    kakeya_single_scale,
    line_integrals_direct,
    m2,
    read_maximal,
    segment_multiplier,
    smooth_single_scale,
    strong_maximal,
    write_maximal,
)
from dirmax.norm_lab import extremal_function
from dirmax.spectral_core import (
    GridFunction,
    apply_directional_multiplier,
    make_window,
    symbol_catalog,
)

SYM = symbol_catalog()


def random_grid(level, side=1.0, seed=0, real=False):
    rng = np.random.default_rng(seed)
    n = 2**level
    v = rng.standard_normal((n, n))
    if not real:
        v = v + 1j * rng.standard_normal((n, n))
    return GridFunction(v, side)


def mode(a, b, level=5, side=1.0):
    return GridFunction.from_function(
        lambda x, y: np.exp(2j * np.pi * (a * x + b * y) / side), level, side)


# --- directional_sup ---------------------------------------------------------


def test_singleton_set_is_single_direction():
    f = random_grid(5, 2.0, 1)
    v = (0.6, 0.8)
    out = directional_sup(f, DirectionSet([v]), SYM["hilbert"])
    ref = np.abs(apply_directional_multiplier(f, SYM["hilbert"], v).values)
    assert np.array_equal(out.values, ref)
    assert np.all(out.argmax == 0)


def test_identity_symbol_gives_modulus():
    f = random_grid(4, 1.0, 2)
    out = directional_sup(f, make_directions("random", 9, 3), SYM["one"])
    assert np.allclose(out.values, np.abs(f.values), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 8, 33])
def test_sgn_on_single_mode(n):
    out = directional_sup(mode(3, 4), make_directions("equispaced", n), SYM["sgn"])
    assert np.allclose(out.values, 1.0, atol=1e-12)


def test_sup_property():
    f = random_grid(5, 1.0, 4)
    s = make_directions("random", 7, 5)
    out = directional_sup(f, s, SYM["imag-power"])
    for k, v in enumerate(s):
        single = np.abs(apply_directional_multiplier(f, SYM["imag-power"], v).values)
        assert np.all(out.values >= single - 1e-10)
        hit = out.argmax == k
        assert np.allclose(out.values[hit], single[hit], atol=1e-12)


def test_parallel_matches_serial():
    f = random_grid(5, 1.0, 6)
    s = make_directions("random", 12, 1)
    a = directional_sup(f, s, SYM["sgn"], workers=1)
    b = directional_sup(f, s, SYM["sgn"], workers=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.argmax, b.argmax)


def test_maximal_output_rejects_negative():
    with pytest.raises(ValueError):
        MaximalOutput(-np.ones((4, 4)), np.zeros((4, 4)))


def test_maximal_file_roundtrip(tmp_path):
    out = directional_sup(random_grid(4, 3.0), make_directions("equispaced", 5), SYM["sgn"])
    write_maximal(tmp_path / "m.dmax", out)
    back = read_maximal(tmp_path / "m.dmax")
    assert back.side == 3.0
    assert np.array_equal(back.values, out.values) and np.array_equal(back.argmax, out.argmax)


# --- segment integrals -------------------------------------------------------


def test_spectral_segments_match_direct_quadrature():
    f = random_grid(6, 4.0, 7)
    for v in [(1.0, 0.0), (0.6, 0.8), (math.cos(2.0), math.sin(2.0))]:
        for eps in (0.125, 1.0):
            spec = np.fft.ifft2(np.fft.fft2(f.values) * segment_multiplier(6, 4.0, v, eps))
            ref = line_integrals_direct(f, v, eps)
            assert np.allclose(spec, ref, atol=1e-10 * np.abs(ref).max())


def test_kakeya_constant():
    f = GridFunction(np.full((64, 64), 1.0), 4.0)
    out = kakeya_max(f, make_directions("random", 5, 1))
    assert np.allclose(out.values, 1.0, atol=1e-12)


def test_kakeya_square_example():
    f = GridFunction.from_function(lambda x, y: ((x <= 1) & (y <= 1)).astype(float), 6, 4.0)
    out = kakeya_max(f, DirectionSet([(1.0, 0.0)]), [0.25])
    assert out.values[8, 8] == pytest.approx(1.0, abs=1e-12)


def test_kakeya_contains_unit_scale():
    f = random_grid(6, 4.0, 8, real=True)
    s = make_directions("equispaced", 6)
    many = kakeya_max(f, s)
    single = kakeya_single_scale(f, s)
    assert np.all(many.values >= single.values / 2 - 1e-10)


def test_kakeya_rejects_bad_scales():
    f = random_grid(5, 4.0)
    s = make_directions("equispaced", 2)
    with pytest.raises(ValueError):
        kakeya_max(f, s, [])
    with pytest.raises(ValueError):
        kakeya_max(f, s, [0.3])
    with pytest.raises(ValueError):
        kakeya_single_scale(random_grid(5, 2.0), s)


def test_single_scale_disk():
    level, side = 7, 4.0
    h = side / 2**level
    f = GridFunction.from_function(
        lambda x, y: (np.hypot(np.minimum(x, side - x), np.minimum(y, side - y)) <= 1).astype(float),
        level, side)
    out = kakeya_single_scale(f, make_directions("random", 6, 2))
    assert abs(out.values[0, 0] - 2.0) <= 2 * h
    assert np.all(kakeya_single_scale(GridFunction.zeros(5, 4.0),
                                      make_directions("equispaced", 3)).values == 0)


def test_single_scale_tube():
    # tube of width 2h and length 1 centred at (2, 2); the sampled indicator
    # ramps to zero over one cell past each end, adding exactly h
    level, side = 8, 4.0
    n = 2**level
    h = side / n
    vals = np.zeros((n, n))
    c = n // 2
    vals[c - 1:c + 2, c - 32:c + 33] = 1.0
    out = kakeya_single_scale(GridFunction(vals, side), DirectionSet([(0.0, 1.0)]))
    assert out.values[c, c] == pytest.approx(1.0 + h, abs=1e-10)
    assert abs(out.values[c, c] - 1.0) <= 2 * h


# --- smooth single scale -----------------------------------------------------


def test_smooth_single_scale_spectral_behaviour():
    w = make_window()
    s = DirectionSet([(0.6, 0.8), (-0.6, -0.8)])
    assert np.abs(smooth_single_scale(mode(3, 4), s, w).values).max() < 1e-14
    const = GridFunction(np.full((16, 16), 3.0), 1.0)
    assert np.allclose(smooth_single_scale(const, s, w).values, 3.0 * w.integral)
    # v . xi / side = 5/8 lies inside the window support
    g = mode(3, 4, side=8.0)
    out = smooth_single_scale(g, s, w)
    assert np.allclose(out.values, w.hat(5 / 8), atol=1e-12)


def test_smooth_single_scale_domination_stable():
    w = make_window()
    s = make_directions("equispaced", 16)
    ratios = []
    for seed in range(8):
        f = random_grid(6, 4.0, seed)
        lhs = smooth_single_scale(f, s, w).values
        rhs = strong_maximal(f).values.real
        ratios.append(float(np.max(lhs / rhs)))
    assert max(ratios) / min(ratios) < 2.0


# --- dyadic maximal functions ------------------------------------------------


def brute_force_hl(a, i, j):
    n = a.shape[0]
    best, b = 0.0, 1
    while b <= n:
        i0, j0 = (i // b) * b, (j // b) * b
        best = max(best, np.abs(a[i0:i0 + b, j0:j0 + b]).mean())
        b *= 2
    return best


def test_hardy_littlewood_basics():
    assert np.allclose(hardy_littlewood(GridFunction(np.ones((8, 8)))).values, 1.0)
    f = random_grid(4, 1.0, 3)
    assert np.all(hardy_littlewood(f).values.real >= np.abs(f.values) - 1e-15)


def test_hardy_littlewood_indicator_against_brute_force():
    n = 16
    a = np.zeros((n, n))
    a[4:8, 8:12] = 1.0            # dyadic square of side 4 cells
    out = hardy_littlewood(GridFunction(a)).values.real
    for i in range(n):
        for j in range(n):
            assert out[i, j] == pytest.approx(brute_force_hl(a, i, j))
    # x in the sibling square: smallest common dyadic parent has side 8
    assert out[0, 8] == pytest.approx(16 / 64)


def test_m2_relations():
    f = random_grid(4, 1.0, 5)
    assert np.all(m2(f).values.real >= hardy_littlewood(f).values.real - 1e-12)
    a = np.zeros((16, 16))
    a[8:12, 0:4] = 1.0
    q = GridFunction(a)
    assert np.allclose(m2(q).values, np.sqrt(hardy_littlewood(q).values.real))
    assert np.allclose(m2(GridFunction(np.ones((8, 8)))).values, 1.0)


def test_strong_maximal_relations():
    assert np.allclose(strong_maximal(GridFunction(np.ones((8, 8)))).values, 1.0)
    f = random_grid(4, 1.0, 6)
    assert np.all(strong_maximal(f).values.real >= hardy_littlewood(f).values.real - 1e-12)
    a = np.zeros((32, 32))
    a[8:16, 4:6] = 1.0            # dyadic 8 x 2 rectangle
    out = strong_maximal(GridFunction(a)).values.real
    assert np.allclose(out[8:16, 4:6], 1.0)


# --- invariants shared by the maximal operators -----------------------------


def _ops(s):
    w = make_window()
    return {
        "directional": lambda f: directional_sup(f, s, SYM["sgn"]).values,
        "kakeya": lambda f: kakeya_max(f, s).values,
        "kakeya0": lambda f: kakeya_single_scale(f, s).values,
        "smooth0": lambda f: smooth_single_scale(f, s, w).values,
        "hardy-littlewood": lambda f: hardy_littlewood(f).values.real,
        "strong": lambda f: strong_maximal(f).values.real,
    }


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                        allow_infinity=False))
def test_sublinear_and_homogeneous(seed, c):
    s = make_directions("random", 4, seed)
    f, g = random_grid(4, 4.0, seed), random_grid(4, 4.0, seed + 1)
    for name, op in _ops(s).items():
        of, og = op(f), op(g)
        assert np.all(op(f + g) <= of + og + 1e-10 * (1 + of + og)), name
        assert np.allclose(op(c * f), abs(c) * of, atol=1e-10 * (1 + abs(c))), name


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
def test_monotone_in_direction_set(seed, n):
    big = make_directions("random", n, seed)
    small = big.subset(range(n // 2))
    f = random_grid(4, 4.0, seed)
    for name in ("directional", "kakeya", "kakeya0", "smooth0"):
        assert np.all(_ops(small)[name](f) <= _ops(big)[name](f) + 1e-12), name


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 10_000))
def test_kakeya_permutation_invariant(seed, perm_seed):
    s = make_directions("random", 6, seed)
    perm = np.random.default_rng(perm_seed).permutation(6)
    f = random_grid(4, 4.0, seed)
    a = kakeya_max(f, s).values
    b = kakeya_max(f, s.subset(perm)).values
    assert np.allclose(a, b, rtol=0, atol=1e-12)


# --- Hilbert maximal function on the plane -----------------------------------


def test_hilbert_box_example():
    f = box_indicator(1.0)
    val = hilbert_line_quadrature(f, (2.0, 0.0), (1.0, 0.0), Quadrature())
    assert abs(abs(val) - math.log(3)) <= 1e-3
    out = hilbert_max(f, DirectionSet([(1.0, 0.0)]), [(2.0, 0.0)])
    assert abs(out.values[0] - math.log(3)) <= 1e-3


def test_hilbert_radial_origin_vanishes():
    f = PlaneFunction(lambda x, y: np.exp(-(x * x + y * y)), 5.0)
    out = hilbert_max(f, make_directions("random", 5, 1), [(0.0, 0.0)])
    assert abs(out.values[0]) < 1e-12
    g = InverseRadial(1.0, 10.0)
    assert np.abs(g.line_pv(0.0, 0.0, 0.6, 0.8)) < 1e-12


def test_hilbert_rejects_coarse_step():
    with pytest.raises(ValueError):
        hilbert_max(box_indicator(0.1), make_directions("equispaced", 2), [(0, 0)],
                    Quadrature(step=0.5))


@settings(max_examples=20, deadline=None)
@given(px=st.floats(-12, 12), py=st.floats(-12, 12), theta=st.floats(0, 2 * np.pi))
@example(px=1.3695199651402881e-229, py=0.0, theta=0.0)
def test_inverse_radial_exact_matches_quadrature(px, py, theta):
    f = InverseRadial(1.0, 8.0)
    v = (math.cos(theta), math.sin(theta))
    exact = float(f.line_pv(px, py, *v))
    quad = hilbert_line_quadrature(f, (px, py), v, Quadrature(step=1e-4, rel_step=1e-5))
    # the integrand jumps at the annulus edges, so the midpoint rule is first order
    assert abs(exact - quad) <= 2e-3 * (1 + abs(exact))


@pytest.mark.parametrize("rho", [0.5, 1e-3, 1e-8, 1e-40, 1e-229])
def test_inverse_radial_near_origin(rho):
    # inside the hole: the value is c (1/a^2 - 1/b^2) + O(rho^3) on a line through the origin
    f = InverseRadial(1.0, 8.0)
    val = float(f.line_pv(0.6 * rho, 0.8 * rho, 0.6, 0.8))
    ref = quad(lambda s: 2 * rho / (s * (s * s - rho * rho)), 1.0, 8.0, epsabs=0, epsrel=1e-13)[0]
    assert val == pytest.approx(ref, rel=1e-12)
    assert val == pytest.approx(rho * (1 - 1 / 64), rel=max(rho**2, 1e-15))


@pytest.mark.parametrize("rho", [100.0, 300.0, 1000.0, 5000.0, 10000.0])
def test_extremal_lower_bound(rho):
    n = 10**6
    f, _ = extremal_function(n, 1.0, 100.0)
    theta = 0.37
    p = (rho * math.cos(theta), rho * math.sin(theta))
    val = abs(float(f.line_pv(p[0], p[1], math.cos(theta), math.sin(theta))))
    assert val >= math.log(rho) / (2 * rho)
