"""Truncated fractional Laplacian, the test function F1 and the operator Lambda.

``F1(x, y) = (1 + (x/y)**2)**b * y**lam`` is homogeneous of degree ``lam``, so
everything reduces to the one-variable profile ``g(u) = (1 + u**2)**b`` with
``u = x / y``:

    truncated nonlocal term:  D_{x|c} F1(x, y) = y**(lam - alpha) * D_{u|c/y} g(u)

Local derivatives are closed form; only the nonlocal term uses quadrature.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .levy_driver import norm_const
from .reports import VerificationReport

_EPS = float(np.finfo(float).eps)

__all__ = [
    "QuadConfig",
    "QuadratureError",
    "RegimeError",
    "TestFunctionParams",
    "OperatorParams",
    "ScanGrid",
    "param_map",
    "brownian_exponents",
    "frac_laplacian_truncated",
    "profile_frac_laplacian",
    "F1",
    "F1_derivatives",
    "f_second_derivative",
    "lambda_operator",
    "lambda_local",
    "drift_identity_residual",
    "superharmonicity_scan",
    "regime_of",
]


class QuadratureError(RuntimeError):
    def __init__(self, value, abserr, message):
        super().__init__(f"quadrature did not converge: {message} (value={value}, abserr={abserr})")
        self.value = value
        self.abserr = abserr


class RegimeError(ValueError):
    """Parameters fall outside both admissible regimes."""


@dataclass(frozen=True)
class QuadConfig:
    epsabs: float = 1e-14
    epsrel: float = 1e-11
    limit: int = 200
    # QUADPACK flags roundoff at tight targets; the result stands if the
    # achieved error is still below this relative level.
    accept_rel: float = 1e-8


@dataclass(frozen=True)
class TestFunctionParams:
    """``F1 = (1 + (x/y)**2)**b y**lambda_exp`` and the weight exponent ``mu``.

    ``a_coef`` is the coefficient of the one-variable profile
    ``f(x) = (1 + a x**2)**b`` used in the comparison bounds.
    """

    __test__ = False  # not a pytest class

    b: float
    lambda_exp: float
    mu: float
    a_coef: float = 1.0

    def __post_init__(self):
        if not 0 < self.b <= 1:
            raise ValueError("b must lie in (0, 1]")
        if self.b == 0.5:
            raise ValueError("b = 1/2 is excluded")
        if not self.a_coef > 0:
            raise ValueError("a_coef must be positive")

    @classmethod
    def from_param_map(cls, b, kappa1=None, kappa2=None, a_prime=0.0, a_coef=1.0):
        regime = "subcritical" if b > 0.5 else "supercritical"
        a, lam = param_map(b, kappa1=kappa1, kappa2=kappa2, a_prime=a_prime, regime=regime)
        return cls(b, lam, a, a_coef)

    @classmethod
    def brownian(cls, b, kappa):
        mu, nu = brownian_exponents(b, kappa)
        return cls(b, nu, mu)


@dataclass(frozen=True)
class OperatorParams:
    kappa: float
    theta: float
    alpha: float
    delta: float
    kappa1: float | None = None
    kappa2: float | None = None
    a_prime: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or self.theta < 0:
            raise ValueError("kappa and theta must be non-negative")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.a_prime < 0:
            raise ValueError("a_prime must be non-negative")

    @property
    def window(self) -> float:
        """Truncation of the nonlocal term, ``theta**(1/alpha) delta``."""
        return self.theta ** (1.0 / self.alpha) * self.delta

    def with_delta(self, delta):
        return OperatorParams(self.kappa, self.theta, self.alpha, delta, self.kappa1, self.kappa2, self.a_prime)


def param_map(b, kappa1=None, kappa2=None, a_prime=0.0, regime="subcritical"):
    """Exponents ``(a, lambda)`` of the comparison function.

    subcritical (kappa < 8, b in (1/2, 1]):
        a = 2b + kappa1 b(1-b)/2,          lambda = 4b + kappa1 b(1-2b)/2
    supercritical (kappa > 8, b in (0, 1/2)):
        a = 2b + kappa2 b(1-b)/2 + a',     lambda = 4b + kappa2 b(1-2b)/2
    """
    if b == 0.5:
        raise RegimeError("b = 1/2 is excluded")
    if regime == "subcritical":
        if not 0.5 < b <= 1:
            raise RegimeError("the subcritical regime needs b in (1/2, 1]")
        if kappa1 is None:
            raise RegimeError("kappa1 is required in the subcritical regime")
        k, extra = kappa1, 0.0
    elif regime == "supercritical":
        if not 0 < b < 0.5:
            raise RegimeError("the supercritical regime needs b in (0, 1/2)")
        if kappa2 is None:
            raise RegimeError("kappa2 is required in the supercritical regime")
        k, extra = kappa2, a_prime
    else:
        raise RegimeError(f"unknown regime {regime!r}")
    a = 2 * b + k * b * (1 - b) / 2 + extra
    lam = 4 * b + k * b * (1 - 2 * b) / 2
    return a, lam


def brownian_exponents(b, kappa):
    """``(mu, nu)`` making F1 harmonic for the purely Brownian operator."""
    return 2 * b + kappa * b * (1 - b) / 2, 4 * b + kappa * b * (1 - 2 * b) / 2


def regime_of(kappa, b) -> str:
    """Regime a (kappa, b) pair belongs to; raises for the excluded combinations."""
    if b == 0.5:
        raise RegimeError("b = 1/2 is excluded")
    if 0 <= kappa < 8 and 0.5 < b <= 1:
        return "subcritical"
    if kappa > 8 and 0 < b < 0.5:
        return "supercritical"
    raise RegimeError(f"kappa={kappa} with b={b} matches neither regime "
                      "(kappa < 8 needs b in (1/2, 1]; kappa > 8 needs b in (0, 1/2))")


def _quad_alg(fun, upper, alpha, cfg: QuadConfig):
    """``int_0^upper fun(y) y**(1 - alpha) dy`` for fun bounded near 0.

    ``y = upper t**(1/(2-alpha))`` absorbs the weight exactly and leaves
    ``upper**(2-alpha)/(2-alpha) int_0^1 fun(y(t)) dt``.
    """
    p = 1.0 / (2.0 - alpha)
    scale = upper ** (2.0 - alpha) * p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        out = quad(lambda t: fun(upper * t ** p), 0.0, 1.0, epsabs=cfg.epsabs / scale,
                   epsrel=cfg.epsrel, limit=cfg.limit, full_output=1)
    val, err = scale * out[0], scale * out[1]
    if len(out) > 3 and err > cfg.accept_rel * max(1.0, abs(val)):
        raise QuadratureError(val, err, out[3])
    return val, err


def frac_laplacian_truncated(f, x, delta, alpha, quad_config: QuadConfig | None = None,
                             second_difference=None, full_output=False):
    """``A(alpha) int_0^delta (f(x+y) + f(x-y) - 2 f(x)) / y**(1+alpha) dy``.

    The symmetrised second difference removes the principal value.  Pass
    ``second_difference(y)`` to supply a cancellation-free version of the
    numerator; it is then integrated with the endpoint weight handled
    exactly.  Without it the plain difference of f is used, which loses all
    digits as y -> 0, so on ``[0, y0]`` the numerator is replaced by its
    leading Taylor term ``d(y0) (y/y0)**2``.  With ``full_output`` the
    quadrature error estimate (already scaled by the constant) is returned too.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    cfg = quad_config or QuadConfig()
    A = norm_const(alpha)
    if second_difference is not None:
        val, err = _quad_alg(lambda y: second_difference(y) / (y * y) if y > 0 else 0.0, delta, alpha, cfg)
    else:
        fx = f(x)

        def d(y):
            fp, fm = f(x + y), f(x - y)
            out = fp + fm - 2.0 * fx
            # a difference at rounding level is noise, not curvature
            return 0.0 if abs(out) <= 8 * _EPS * (abs(fp) + abs(fm) + 2 * abs(fx)) else out

        # rounding in d(y0) / y0**2 is then about sqrt(eps) relative
        y0 = min(delta, _EPS ** 0.25 * max(1.0, abs(x)))
        val = d(y0) / (y0 * y0) * y0 ** (2 - alpha) / (2 - alpha)
        err = _EPS ** 0.5 * abs(val)
        if y0 < delta:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", IntegrationWarning)
                out = quad(lambda y: d(y) / y ** (1 + alpha), y0, delta, epsabs=cfg.epsabs,
                           epsrel=cfg.epsrel, limit=cfg.limit, full_output=1)
            tail, tail_err = out[0], out[1]
            if len(out) > 3 and tail_err > cfg.accept_rel * max(1.0, abs(tail)):
                raise QuadratureError(tail, tail_err, out[3])
            val, err = val + tail, err + tail_err
    if full_output:
        return A * val, A * err
    return A * val


def _profile_second_difference(u, b, a_coef=1.0):
    """Cancellation-free ``g(u+v) + g(u-v) - 2 g(u)`` for ``g = (1 + a u**2)**b``.

    With ``L+- = log(g(u+-v)/g(u))/b`` the sum ``L+ + L-`` is O(v**2) and
    ``L+ - L-`` is O(v); both have closed forms free of subtraction, and
    ``e**x + e**y - 2 = 2 (e**m (cosh(d) - 1) + expm1(m))`` with
    ``m = (x+y)/2, d = (x-y)/2``.
    """
    base = 1.0 + a_coef * u * u
    gu = base ** b
    one_minus = 1.0 - a_coef * u * u

    def d(v):
        s = a_coef * v * v / base
        hsum = 0.5 * b * math.log1p(2.0 * a_coef * v * v * one_minus / (base * base) + s * s)
        hdiff = b * math.atanh(2.0 * a_coef * u * v / (base * (1.0 + s)))
        return 2.0 * gu * (math.exp(hsum) * 2.0 * math.sinh(0.5 * hdiff) ** 2 + math.expm1(hsum))

    return d


def profile_frac_laplacian(u, window, alpha, b, a_coef=1.0, quad_config=None, full_output=False):
    """Truncated fractional Laplacian of ``(1 + a u**2)**b`` at u."""
    d = _profile_second_difference(float(u), b, a_coef)
    return frac_laplacian_truncated(None, u, window, alpha, quad_config, second_difference=d,
                                    full_output=full_output)


def f_second_derivative(x, a_coef, b):
    """``f''`` for ``f(x) = (1 + a x**2)**b``: ``2ab (1 + a(2b-1)x**2)(1 + a x**2)**(b-2)``."""
    x = np.asarray(x, dtype=float)
    return 2 * a_coef * b * (1 + a_coef * (2 * b - 1) * x * x) * (1 + a_coef * x * x) ** (b - 2)


def F1(z, b, lam):
    """``(1 + (x/y)**2)**b y**lam`` for Im z > 0."""
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise ValueError("F1 needs Im z > 0")
    x, y = z.real, z.imag
    return (1 + (x / y) ** 2) ** b * y ** lam


def F1_derivatives(z, b, lam):
    """Closed-form ``(F1, dF1/dx, d2F1/dx2, dF1/dy)``.

    With ``R = x**2 + y**2`` and ``m = lam - 2b``, ``F1 = R**b y**m``.
    """
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    R = x * x + y * y
    m = lam - 2 * b
    Rb = R ** b
    ym = y ** m
    f = Rb * ym
    fx = 2 * b * x * R ** (b - 1) * ym
    fxx = 2 * b * R ** (b - 2) * ym * ((2 * b - 1) * x * x + y * y)
    fy = 2 * b * y * R ** (b - 1) * ym + m * Rb * y ** (m - 1)
    return f, fx, fxx, fy


def lambda_local(params: OperatorParams, tf: TestFunctionParams, z):
    """Local (differential) part of ``Lambda F1`` at z, evaluated term by term."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    R = x * x + y * y
    f, fx, fxx, fy = F1_derivatives(z, tf.b, tf.lambda_exp)
    return (-4 * tf.mu * y * y / (R * R) * f - 2 * x / R * fx + 2 * y / R * fy
            + params.kappa / 2 * fxx)


def _nonlocal(params: OperatorParams, tf: TestFunctionParams, z, quad_config=None, full_output=False):
    """``theta * D_{x|window} F1`` via the profile scaling."""
    z = complex(z)
    if params.theta == 0:
        return (0.0, 0.0) if full_output else 0.0
    x, y = z.real, z.imag
    val, err = profile_frac_laplacian(x / y, params.window / y, params.alpha, tf.b, 1.0,
                                      quad_config, full_output=True)
    scale = params.theta * y ** (tf.lambda_exp - params.alpha)
    if full_output:
        return scale * val, scale * err
    return scale * val


def lambda_operator(params: OperatorParams, tf: TestFunctionParams, z, quad_config=None):
    """``Lambda F1`` at a point z of H (the weight exponent is ``tf.mu``)."""
    z = complex(z)
    if not z.imag > 0:
        raise ValueError("Lambda F1 needs Im z > 0")
    return float(lambda_local(params, tf, z)) + _nonlocal(params, tf, z, quad_config)


def drift_identity_residual(params: OperatorParams, tf: TestFunctionParams, z, kappa_i, a_prime=0.0,
                            quad_config=None):
    """``Lambda F1 - [-4a' y**2/R**2 F1 + (kappa - kappa_i)/2 F1_xx + theta D F1]``.

    With ``(a, lambda)`` from :func:`param_map` this vanishes identically.
    """
    z = complex(z)
    x, y = z.real, z.imag
    R = x * x + y * y
    f, _, fxx, _ = F1_derivatives(z, tf.b, tf.lambda_exp)
    nl = _nonlocal(params, tf, z, quad_config)
    full = float(lambda_local(params, tf, z)) + nl
    predicted = -4 * a_prime * y * y / (R * R) * f + (params.kappa - kappa_i) / 2 * fxx + nl
    return float(full - predicted)


@dataclass(frozen=True)
class ScanGrid:
    """Points ``z = y (u + i)`` with tan-spaced ``u`` and log-spaced ``y``."""

    u_max: float = 100.0
    n_u: int = 41
    y_lo: float = 1e-2
    y_hi: float = 1.0
    n_y: int = 13
    symmetric: bool = False  # Lambda F1 is even in x; by default only u >= 0

    def u_values(self) -> np.ndarray:
        s = np.linspace(-1.0 if self.symmetric else 0.0, 1.0, self.n_u)
        return np.tan(s * math.atan(self.u_max))

    def y_values(self) -> np.ndarray:
        return np.geomspace(self.y_lo, self.y_hi, self.n_y)

    def points(self) -> np.ndarray:
        u, y = self.u_values(), self.y_values()
        return (y[:, None] * (u[None, :] + 1j)).ravel()

    def to_dict(self):
        return {"u_max": self.u_max, "n_u": self.n_u, "y_lo": self.y_lo, "y_hi": self.y_hi,
                "n_y": self.n_y, "symmetric": self.symmetric}


DEFAULT_DELTAS = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125)


def _comparison_constants(alpha, b, a_coef, u_vals, windows):
    """Empirical suprema of the ratios in the comparison bounds for the profile f."""
    rows = []
    for c in windows:
        for u in u_vals:
            d = profile_frac_laplacian(u, c, alpha, b, a_coef)
            rows.append((u, c, d, float(f_second_derivative(u, a_coef, b))))
    rows = np.array(rows)
    u, c, d, f2 = rows.T
    cpow = c ** (2 - alpha)
    out = {"uniform_C": float(np.max(np.abs(d) / (a_coef * cpow)))}
    if b > 0.5:
        out["second_derivative_C"] = float(np.max(np.abs(d) / (f2 * cpow)))
    else:
        far = np.abs(u) > 4.0 / math.sqrt((1 - 2 * b) * a_coef)
        if far.any():
            logf = 1 + np.abs(np.log(c[far])) if alpha == 2 * b else 1.0
            out["far_field_C"] = float(np.max(d[far] / (np.abs(f2[far]) * cpow[far] * logf)))
            out["far_field_min_u"] = float(np.min(np.abs(u[far])))
    out["windows"] = [float(w) for w in windows]
    return out


def superharmonicity_scan(params: OperatorParams, tf: TestFunctionParams, grid: ScanGrid | None = None,
                          delta_list=DEFAULT_DELTAS, quad_config=None, sign_tol: float = 0.0,
                          comparison: bool = True, return_values: bool = False):
    """Max of ``Lambda F1`` over the grid for every truncation level in ``delta_list``.

    The empirical delta0 is the largest tested delta such that it and every
    smaller tested delta give ``max Lambda F1 <= sign_tol``.  The comparison
    constants of the profile bounds are estimated on the same slices.  With
    ``return_values`` the per-point values ``{delta: array}`` (in the order of
    ``grid.points()``) are returned alongside the report.
    """
    t0 = _time.perf_counter()
    regime = regime_of(params.kappa, tf.b)
    grid = grid or ScanGrid()
    pts = grid.points()
    local = lambda_local(params, tf, pts)
    per_delta = []
    values = {}
    for delta in sorted(delta_list):
        p = params.with_delta(delta)
        nl = np.array([_nonlocal(p, tf, z, quad_config) for z in pts])
        vals = local + nl
        i = int(np.argmax(vals))
        values[delta] = vals
        per_delta.append({"delta": float(delta), "max": float(vals[i]), "argmax": complex(pts[i]),
                          "max_abs": float(np.max(np.abs(vals)))})
    delta0 = None
    for row in per_delta:  # ascending delta
        if row["max"] <= sign_tol:
            delta0 = row["delta"]
        else:
            break
    details = {"regime": regime, "per_delta": per_delta, "grid": grid.to_dict(),
               "delta0": delta0 if delta0 is not None else "below smallest tested delta"}
    if comparison and params.theta > 0:
        windows = sorted({p * params.theta ** (1 / params.alpha) for p in delta_list})
        details["comparison_constants"] = _comparison_constants(
            params.alpha, tf.b, tf.a_coef, grid.u_values(), windows)
    report = VerificationReport(
        name="superharmonicity_scan",
        passed=delta0 is not None,
        target=0.0,
        estimate=min(r["max"] for r in per_delta),
        tolerance=sign_tol,
        params={"kappa": params.kappa, "theta": params.theta, "alpha": params.alpha,
                "kappa1": params.kappa1, "kappa2": params.kappa2, "a_prime": params.a_prime,
                "b": tf.b, "lambda": tf.lambda_exp, "mu": tf.mu},
        details=details,
        wall_time=_time.perf_counter() - t0,
    )
    return (report, values) if return_values else report
