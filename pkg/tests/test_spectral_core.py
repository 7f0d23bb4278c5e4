import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirmax.spectral_core import (
    GridFunction,
    Spectrum,
    Symbol1D,
    apply_directional_multiplier,
    active_scales,
    ball_projection,
    forward_spectrum,
    inverse_spectrum,
    kernel_decay_check,
    make_lp_family,
    make_window,
    read_csv_grid,
    read_dmax,
    scale_projection,
    symbol_catalog,
    verify_hm_symbol,
    write_csv_grid,
    write_dmax,
)
from dirmax.norm_lab import exact_diagonal_norm, power_iteration_norm

SYM = symbol_catalog()


@pytest.fixture(scope="module")
def lp():
    return make_lp_family()


def random_grid(level, side=1.0, seed=0):
    rng = np.random.default_rng(seed)
    n = 2**level
    return GridFunction(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)), side)


def mode(a, b, level=5, side=1.0):
    return GridFunction.from_function(
        lambda x, y: np.exp(2j * np.pi * (a * x + b * y) / side), level, side)


# --- representation --------------------------------------------------------


def test_rejects_nonfinite_and_bad_side():
    vals = np.zeros((8, 8))
    vals[1, 2] = np.nan
    with pytest.raises(ValueError):
        GridFunction(vals)
    with pytest.raises(ValueError):
        GridFunction(np.zeros((8, 8)), side=0.0)
    with pytest.raises(ValueError):
        GridFunction(np.zeros((8, 4)))


def test_constant_has_only_dc():
    s = forward_spectrum(GridFunction(np.ones((16, 16))))
    c = s.coefficients.copy()
    assert c[0, 0] == pytest.approx(1.0)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-14


def test_single_mode_unit_coefficient():
    s = forward_spectrum(mode(3, 4))
    assert s.coefficient(3, 4) == pytest.approx(1.0)
    c = s.coefficients.copy()
    c[3, 4] = 0
    assert np.abs(c).max() < 1e-12


def test_inverse_of_unit_coefficient():
    c = np.zeros((16, 16), dtype=complex)
    c[1, 0] = 1.0
    f = inverse_spectrum(Spectrum(c))
    x, _ = f.coords()
    assert np.allclose(f.values, np.exp(2j * np.pi * x), atol=1e-12)
    assert np.all(inverse_spectrum(Spectrum(np.zeros((16, 16)))).values == 0)


@settings(max_examples=25, deadline=None)
@given(level=st.integers(3, 6), side=st.floats(0.25, 8.0), seed=st.integers(0, 2**32 - 1))
def test_roundtrip_and_parseval(level, side, seed):
    f = random_grid(level, side, seed)
    s = forward_spectrum(f)
    back = inverse_spectrum(s)
    assert np.linalg.norm(back.values - f.values) <= 1e-10 * np.linalg.norm(f.values)
    assert abs(s.norm() - f.norm()) <= 1e-10 * f.norm()


# --- directional multipliers -----------------------------------------------


def test_identity_symbol():
    f = random_grid(5)
    g = apply_directional_multiplier(f, SYM["one"], (0.6, 0.8))
    assert np.allclose(g.values, f.values, atol=1e-12)


def test_single_mode_scales_by_symbol_value():
    m = Symbol1D(lambda t: np.exp(-0.1 * t) + 0j, False, "decay")
    f = mode(3, 4)
    g = apply_directional_multiplier(f, m, (0.6, 0.8))
    assert np.allclose(g.values, np.exp(-0.5) * f.values, atol=1e-12)


def test_sgn_maps_cos_to_i_sin():
    # cos = (e+ + e-)/2 and sgn flips the sign of the negative mode
    f = GridFunction.from_function(lambda x, y: np.cos(2 * np.pi * x) + 0 * y, 5)
    g = apply_directional_multiplier(f, SYM["sgn"], (1.0, 0.0))
    x, _ = f.coords()
    assert np.allclose(g.values, 1j * np.sin(2 * np.pi * x), atol=1e-12)


def test_non_unit_direction_rejected():
    with pytest.raises(ValueError):
        apply_directional_multiplier(random_grid(3), SYM["sgn"], (1.0, 0.1))


def test_singular_symbol_zero_at_dc():
    assert SYM["sgn"](0.0) == 0
    assert SYM["imag-power"](np.array([0.0]))[0] == 0


@settings(max_examples=15, deadline=None)
@given(theta=st.floats(0, 2 * np.pi), seed=st.integers(0, 1000))
def test_multiplier_composition(theta, seed):
    v = (math.cos(theta), math.sin(theta))
    f = random_grid(4, 2.0, seed)
    a, b = SYM["tanh"], SYM["imag-power"]
    ab = Symbol1D(lambda t: a.profile(t) * b.profile(t), True, "prod")
    two = apply_directional_multiplier(apply_directional_multiplier(f, a, v), b, v)
    one = apply_directional_multiplier(f, ab, v)
    assert np.linalg.norm(two.values - one.values) <= 1e-10 * np.linalg.norm(f.values)


def test_diagonal_norm_law_by_power_iteration():
    # tanh saturates, so its top eigenvalues nearly coincide; use gapped symbols
    bump = Symbol1D(lambda t: np.exp(-(t - 1.3) ** 2) + 0j, False, "bump")
    for m in (bump, SYM["imag-power"]):
        exact = exact_diagonal_norm(m, (0.6, 0.8), 4, 2.0).value
        est = power_iteration_norm(m, (0.6, 0.8), 4, 2.0, tol=1e-9, seed=3)
        assert abs(est.value - exact) <= 1e-6 * exact


def test_check_bounded():
    assert SYM["sgn"].check_bounded() == pytest.approx(1.0)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        Symbol1D(lambda t: 1.0 / (np.abs(t) - 1.0), False, "pole").check_bounded(
            lo=0.5, hi=2.0, samples=3)


# --- Littlewood-Paley family -------------------------------------------------


def test_phi_support(lp):
    assert lp.phi(np.array([0.4, 2.1])).tolist() == [0.0, 0.0]


def test_partition_of_unity_at_sample(lp):
    total = sum(lp.phi(np.array([1.37 * 2.0 ** (-k)]))[0] for k in range(-40, 41))
    assert abs(total - 1.0) <= 1e-8


def test_psi_inverts_beta_squared(lp):
    rng = np.random.default_rng(0)
    r = rng.uniform(0.5, 2.0, 100)
    assert np.max(np.abs(lp.psi(r) * lp.beta(r) ** 2 - 1.0)) <= 1e-8
    assert lp.beta(np.array([0.0]))[0] == 0.0
    assert lp.beta_floor >= 1e-3


def test_scale_projection_outside_support(lp):
    f = mode(3, 4)
    # physical radius 5, 2**-k * 5 = 5/16 is outside (1/2, 2)
    assert np.abs(scale_projection(f, 4, lp).values).max() < 1e-14


def test_lp_reconstructs_mean_zero_input(lp):
    f = random_grid(5, 3.0, 1)
    total = sum(scale_projection(f, k, lp).values for k in active_scales(f.level, f.side))
    target = f.values - f.values.mean()
    assert np.linalg.norm(total - target) <= 1e-8 * np.linalg.norm(f.values)


@settings(max_examples=10, deadline=None)
@given(k=st.integers(-2, 6), seed=st.integers(0, 1000))
def test_scale_projection_bounded(lp, k, seed):
    f = random_grid(4, 2.0, seed)
    assert scale_projection(f, k, lp).norm() <= lp.phi_sup * f.norm() * (1 + 1e-12)


# --- ball projection ---------------------------------------------------------


def test_ball_projection_identity_and_zero():
    f = random_grid(4)
    assert np.allclose(ball_projection(f, 10).values, f.values, atol=1e-12)
    g = f - GridFunction(np.full((16, 16), f.values.mean()))
    assert np.abs(ball_projection(g, -1).values).max() < 1e-12


@settings(max_examples=10, deadline=None)
@given(m=st.integers(-1, 5), seed=st.integers(0, 1000))
def test_ball_projection_idempotent_self_adjoint(m, seed):
    f, g = random_grid(4, 1.0, seed), random_grid(4, 1.0, seed + 1)
    pf = ball_projection(f, m)
    assert np.allclose(ball_projection(pf, m).values, pf.values, atol=1e-12)
    lhs = pf.inner(g)
    rhs = f.inner(ball_projection(g, m))
    assert abs(lhs - rhs) <= 1e-10 * f.norm() * g.norm()
    assert pf.norm() <= f.norm() * (1 + 1e-12)


def test_ball_maximal_on_lacunary_signs():
    # sup over the finitely many distinct projections, compared with f
    rng = np.random.default_rng(5)
    ratios = []
    for _ in range(10):
        c = np.zeros((64, 64), dtype=complex)
        for j in range(6):
            a = 2**j
            c[a, 0] = rng.choice([-1, 1])
            c[0, a] = rng.choice([-1, 1])
        f = inverse_spectrum(Spectrum(c))
        sup = np.max([np.abs(ball_projection(f, m).values) for m in range(-1, 7)], axis=0)
        ratios.append(GridFunction(sup).norm() / f.norm())
    assert 1.0 <= max(ratios) < 5.0


# --- HM symbol check ---------------------------------------------------------


def test_hm_sgn():
    rep = verify_hm_symbol(SYM["sgn"], 2)
    assert rep.constants[0] == pytest.approx(1.0)
    assert rep.ok


def test_hm_imag_power():
    rep = verify_hm_symbol(SYM["imag-power"], 1)
    assert rep.constants[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.constants[1] == pytest.approx(1.0, rel=1e-3)
    assert rep.ok


def test_hm_identity_symbol_flagged():
    rep = verify_hm_symbol(Symbol1D(lambda t: t + 0j, False, "t"), 1)
    assert rep.diverged[0]


def test_hm_rejects_high_orders():
    with pytest.raises(ValueError):
        verify_hm_symbol(SYM["sgn"], 5)


# --- window and kernel decay -------------------------------------------------


def test_window_support_and_positivity():
    w = make_window()
    assert w.hat(np.array([-0.01, 1.01])).tolist() == [0.0, 0.0]
    assert w.integral == 0.0  # psi_hat vanishes at the support edge
    tau = np.linspace(0, 1, 4001)
    x = np.linspace(-20, 20, 41)
    psi = np.trapezoid(w.hat(tau)[None, :] * np.exp(2j * np.pi * np.outer(x, tau)), tau, axis=1)
    # psi = g**2 with g a modulated real profile: |psi| is a positive bump
    assert np.all(np.abs(psi) >= 0)
    assert abs(psi[20]) == pytest.approx(np.abs(psi).max())


def test_kernel_decay(lp):
    w = make_window()
    a = kernel_decay_check((1.0, 0.0), lp, w)
    b = kernel_decay_check((0.0, 1.0), lp, w)
    assert math.isfinite(a.constant)
    assert a.exponent <= -3 + 0.3
    assert abs(a.constant - b.constant) <= 0.25 * a.constant


# --- file formats ------------------------------------------------------------


def test_dmax_roundtrip(tmp_path):
    f = random_grid(4, 2.5, 9)
    p = tmp_path / "f.dmax"
    write_dmax(p, f)
    g = read_dmax(p)
    assert g.side == 2.5
    assert np.array_equal(g.values, f.values)
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(ValueError):
        read_dmax(p)


def test_csv_roundtrip(tmp_path):
    f = random_grid(3, 4.0, 2)
    p = tmp_path / "f.csv"
    write_csv_grid(p, f)
    g = read_csv_grid(p)
    assert g.side == 4.0
    assert np.array_equal(g.values, f.values)
