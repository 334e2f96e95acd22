import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levysle.levy_driver import norm_const
from levysle.superharmonic import (
    F1,
    F1_derivatives,
    OperatorParams,
    QuadConfig,
    RegimeError,
    ScanGrid,
    TestFunctionParams,
    brownian_exponents,
    drift_identity_residual,
    f_second_derivative,
    frac_laplacian_truncated,
    lambda_local,
    lambda_operator,
    param_map,
    profile_frac_laplacian,
    regime_of,
    superharmonicity_scan,
)


def _random_z(rng, n):
    u = np.tan(rng.uniform(-1, 1, n) * math.atan(100.0))
    y = np.exp(rng.uniform(math.log(1e-2), 0.0, n))
    return y * (u + 1j)


# param_map

def test_param_map_substitution():
    a, lam = param_map(1.0, kappa1=5.0)
    assert a == pytest.approx(2.0, abs=1e-15)
    assert lam == pytest.approx(1.5, abs=1e-15)
    _, lam = param_map(0.75, kappa1=2.0)
    assert lam - 1.5 == pytest.approx(1.125, abs=1e-15)


def test_param_map_supercritical_adds_a_prime():
    b = 13 / 36
    a0, lam0 = param_map(b, kappa2=8.5, regime="supercritical")
    a1, lam1 = param_map(b, kappa2=8.5, a_prime=0.5, regime="supercritical")
    assert a1 - a0 == pytest.approx(0.5, abs=1e-15)
    assert lam1 == lam0


def test_b_half_rejected():
    with pytest.raises(RegimeError):
        param_map(0.5, kappa1=3.0)
    with pytest.raises(ValueError):
        TestFunctionParams(0.5, 1.0, 1.0)


@pytest.mark.parametrize("regime,b", [("subcritical", 0.3), ("supercritical", 0.75), ("other", 0.75)])
def test_param_map_regime_mismatch(regime, b):
    with pytest.raises(RegimeError):
        param_map(b, kappa1=3.0, kappa2=9.0, regime=regime)


@given(b=st.floats(0.51, 1.0), kappa=st.floats(0.0, 7.9))
def test_param_map_reproduces_brownian_exponents(b, kappa):
    a, lam = param_map(b, kappa1=kappa)
    mu, nu = brownian_exponents(b, kappa)
    assert a == pytest.approx(mu, rel=1e-14)
    assert lam == pytest.approx(nu, rel=1e-14)


# truncated fractional Laplacian

@pytest.mark.parametrize("x", [-3.0, 0.0, 1.7])
def test_frac_laplacian_linear_is_zero(x):
    assert abs(frac_laplacian_truncated(lambda s: 2.5 * s - 1.0, x, 0.8, 1.3)) < 1e-12


@pytest.mark.parametrize("x", [-2.0, 0.0, 0.3, 5.0])
def test_frac_laplacian_quadratic_closed_form(x):
    # plain differences of f leave a rounding floor of about eps |f| / (f'' y0**alpha)
    assert frac_laplacian_truncated(lambda s: s * s, x, 1.0, 1.0) == pytest.approx(2 / math.pi, rel=1e-10)


@given(alpha=st.floats(0.1, 1.9), delta=st.floats(0.01, 5.0))
@settings(max_examples=50, deadline=None)
def test_frac_laplacian_quadratic_any_alpha(alpha, delta):
    exact = 2 * norm_const(alpha) * delta ** (2 - alpha) / (2 - alpha)
    got = frac_laplacian_truncated(lambda s: s * s, 0.4, delta, alpha)
    assert got == pytest.approx(exact, rel=1e-10)


def test_frac_laplacian_profile_matches_mpmath():
    mpmath.mp.dps = 30
    ref = mpmath.quad(lambda y: (2 * (1 + y * y) ** mpmath.mpf("0.75") - 2) / y ** 2, [0, mpmath.mpf("0.5")])
    ref = float(ref / mpmath.pi)
    got = frac_laplacian_truncated(lambda s: (1 + s * s) ** 0.75, 0.0, 0.5, 1.0)
    assert abs(got - ref) < 1e-8
    assert abs(profile_frac_laplacian(0.0, 0.5, 1.0, 0.75) - ref) < 1e-8


def test_profile_second_difference_far_field_matches_mpmath():
    # large |u| and tiny window is where naive differencing cancels
    u, c, alpha, b = 80.0, 1e-3, 1.2, 0.75
    mpmath.mp.dps = 40
    g = lambda s: (1 + mpmath.mpf(s) ** 2) ** mpmath.mpf(b)
    ref = mpmath.quad(lambda y: (g(u + y) + g(u - y) - 2 * g(u)) / y ** (1 + alpha), [0, c])
    ref = float(ref) * norm_const(alpha)
    assert profile_frac_laplacian(u, c, alpha, b) == pytest.approx(ref, rel=1e-8)


def test_frac_laplacian_monotone_in_truncation():
    cs = np.geomspace(1e-3, 4.0, 25)
    vals = [frac_laplacian_truncated(lambda s: s * s, 0.7, c, 1.4) for c in cs]
    assert np.all(np.diff(vals) >= 0)


def test_frac_laplacian_rejects_bad_delta():
    with pytest.raises(ValueError):
        frac_laplacian_truncated(lambda s: s, 0.0, 0.0, 1.0)


def test_quadrature_convergence_on_random_inputs():
    rng = np.random.default_rng(11)
    tight = QuadConfig(epsabs=5e-15, epsrel=5e-12)
    for _ in range(50):
        u = rng.uniform(-50, 50)
        c = 10 ** rng.uniform(-3, 1)
        alpha = rng.uniform(0.2, 1.9)
        b = rng.choice([rng.uniform(0.05, 0.45), rng.uniform(0.55, 1.0)])
        val, err = profile_frac_laplacian(u, c, alpha, b, full_output=True)
        val2 = profile_frac_laplacian(u, c, alpha, b, quad_config=tight)
        assert abs(val - val2) <= max(err, 4 * np.spacing(abs(val)))


# F1 and f''

def test_F1_examples():
    assert F1(3j, 0.7, 1.3) == pytest.approx(3 ** 1.3, rel=1e-15)
    assert F1(1 + 1j, 1.0, 2.0) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(ValueError):
        F1(1.0 + 0j, 0.7, 1.0)


@given(x=st.floats(-10, 10), y=st.floats(0.01, 10), c=st.floats(0.01, 100),
       b=st.floats(0.05, 1.0), lam=st.floats(-2, 3))
def test_F1_homogeneous(x, y, c, b, lam):
    z = complex(x, y)
    assert F1(c * z, b, lam) == pytest.approx(c ** lam * F1(z, b, lam), rel=1e-12)


def test_F1_derivatives_against_finite_differences():
    rng = np.random.default_rng(5)
    for z in _random_z(rng, 50):
        b, lam = rng.uniform(0.05, 1.0), rng.uniform(-1, 3)
        f, fx, fxx, fy = F1_derivatives(z, b, lam)
        h = 1e-4 * abs(z.imag)
        ex = (F1(z + h, b, lam) - F1(z - h, b, lam)) / (2 * h)
        exx = (F1(z + h, b, lam) - 2 * f + F1(z - h, b, lam)) / h ** 2
        ey = (F1(z + 1j * h, b, lam) - F1(z - 1j * h, b, lam)) / (2 * h)
        scale = abs(f) / abs(z.imag)
        assert abs(fx - ex) < 1e-6 * scale
        assert abs(fy - ey) < 1e-6 * scale
        assert abs(fxx - exx) < 1e-4 * scale / abs(z.imag)


def test_f_second_derivative_special_cases():
    assert f_second_derivative(0.0, 3.0, 0.4) == pytest.approx(2 * 3.0 * 0.4, rel=1e-15)
    xs = np.linspace(-20, 20, 41)
    np.testing.assert_allclose(f_second_derivative(xs, 1.7, 1.0), 2 * 1.7, rtol=1e-14)


def test_f_second_derivative_finite_difference():
    rng = np.random.default_rng(2)
    for _ in range(200):
        x, a, b = rng.uniform(-5, 5), rng.uniform(0.1, 5), rng.uniform(0.05, 1.0)
        mpmath.mp.dps = 30
        f = lambda s: (1 + a * s * s) ** b
        fd = float(mpmath.diff(f, mpmath.mpf(x), 2))
        got = float(f_second_derivative(x, a, b))
        assert abs(got - fd) <= 1e-6 * max(abs(fd), 1e-12)


# the operator

def test_brownian_operator_is_harmonic():
    rng = np.random.default_rng(7)
    for kappa, b in [(2.0, 0.75), (6.0, 0.6), (9.0, 13 / 36), (0.0, 1.0)]:
        tf = TestFunctionParams.brownian(b, kappa)
        op = OperatorParams(kappa, 0.0, 1.2, 1.0)
        for z in _random_z(rng, 100):
            v = lambda_operator(op, tf, z)
            assert abs(v) < 1e-8 * max(1.0, abs(F1(z, b, tf.lambda_exp)) / abs(z) ** 2)


@pytest.mark.parametrize("case", ["subcritical", "supercritical"])
def test_drift_identity(case):
    rng = np.random.default_rng(3)
    if case == "subcritical":
        b, kappa, ki, ap = 0.75, 2.0, 2.5, 0.0
        tf = TestFunctionParams.from_param_map(b, kappa1=ki)
    else:
        b, kappa, ki, ap = 13 / 36, 9.0, 8.5, 0.5
        tf = TestFunctionParams.from_param_map(b, kappa2=ki, a_prime=ap)
    op = OperatorParams(kappa, 1.0, 1.2, 0.5, kappa1=ki if ap == 0 else None, kappa2=ki if ap else None,
                        a_prime=ap)
    for z in _random_z(rng, 100):
        r = drift_identity_residual(op, tf, z, ki, ap)
        scale = max(1.0, abs(F1(z, b, tf.lambda_exp)) / abs(z) ** 2)
        assert abs(r) < 1e-8 * scale


def test_local_part_scaling():
    rng = np.random.default_rng(9)
    tf = TestFunctionParams.from_param_map(0.75, kappa1=2.5)
    op = OperatorParams(2.0, 1.0, 1.2, 0.5)
    for z in _random_z(rng, 20):
        c = rng.uniform(0.1, 10)
        lhs = float(lambda_local(op, tf, c * z))
        rhs = c ** (tf.lambda_exp - 2) * float(lambda_local(op, tf, z))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@given(x=st.floats(0.0, 50.0), y=st.floats(0.01, 1.0))
@settings(max_examples=40, deadline=None)
def test_operator_even_in_x(x, y):
    tf = TestFunctionParams.from_param_map(0.75, kappa1=2.5)
    op = OperatorParams(2.0, 1.0, 1.2, 0.25)
    a = lambda_operator(op, tf, complex(x, y))
    b = lambda_operator(op, tf, complex(-x, y))
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_operator_needs_upper_half_plane():
    tf = TestFunctionParams.from_param_map(0.75, kappa1=2.5)
    with pytest.raises(ValueError):
        lambda_operator(OperatorParams(2.0, 1.0, 1.2, 0.25), tf, 1.0 + 0j)


# regime gate and scans

@pytest.mark.parametrize("kappa,b", [(8.0, 0.75), (9.0, 0.75), (2.0, 0.3), (8.0, 0.3), (2.0, 0.5)])
def test_regime_gate(kappa, b):
    with pytest.raises(RegimeError):
        regime_of(kappa, b)


def test_scan_refuses_mismatched_regime():
    tf = TestFunctionParams(0.75, 1.5, 1.6)
    with pytest.raises(RegimeError):
        superharmonicity_scan(OperatorParams(9.0, 1.0, 1.2, 0.5), tf, ScanGrid(n_u=3, n_y=2), (0.5,))


def test_degenerate_scan_is_harmonic():
    tf = TestFunctionParams.brownian(0.75, 2.0)
    grid = ScanGrid(n_u=21, n_y=7)
    rep, vals = superharmonicity_scan(OperatorParams(2.0, 0.0, 1.2, 1.0), tf, grid, (1.0, 0.25),
                                      sign_tol=1e-8, return_values=True)
    assert rep.passed
    scale = np.maximum(1.0, np.abs(F1(grid.points(), 0.75, tf.lambda_exp)) / np.abs(grid.points()) ** 2)
    for v in vals.values():
        assert np.all(np.abs(v) < 1e-8 * scale)


def test_scan_small_grid_reports_delta0_and_constants():
    tf = TestFunctionParams.from_param_map(0.75, kappa1=2.5)
    rep = superharmonicity_scan(OperatorParams(2.0, 1.0, 1.2, 0.25), tf, ScanGrid(n_u=9, n_y=4),
                                (0.25, 0.125))
    assert rep.passed
    assert rep.details["delta0"] == 0.25
    consts = rep.details["comparison_constants"]
    assert consts["uniform_C"] > 0 and consts["second_derivative_C"] > 0


def test_scan_reports_missing_delta0():
    # kappa1 far below kappa leaves a positive local drift
    tf = TestFunctionParams.from_param_map(0.75, kappa1=0.5)
    rep = superharmonicity_scan(OperatorParams(2.0, 1.0, 1.2, 0.25), tf, ScanGrid(n_u=9, n_y=4),
                                (0.25,), comparison=False)
    assert not rep.passed
    assert rep.details["delta0"] == "below smallest tested delta"
