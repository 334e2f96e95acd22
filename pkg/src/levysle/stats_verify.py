"""Monte Carlo checks of the probabilistic identities and bounds.

Every check returns a :class:`~levysle.reports.VerificationReport` carrying
its seed, sample count and standard error; a rerun with the same seed is
bit-identical.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .levy_driver import (
    StableParams,
    combined_driver,
    levy_tail_mass,
    norm_const,
    stable_endpoints,
    stable_jump_counts,
    smalljump_variance,
)
from .loewner import (
    HorizonError,
    backward_flow_batch,
    batch_arrays,
    build_chain,
    centred_backward_ensemble,
    compose_inverse_batch,
)
from .reports import VerificationReport
from .superharmonic import OperatorParams, TestFunctionParams, regime_of

__all__ = [
    "BiasWarning",
    "RegimeError",
    "MomentSpec",
    "DyadicEventSpec",
    "JumpTail",
    "partition_types",
    "set_partition_type_counts",
    "moment_from_cumulants",
    "moment_exact",
    "moment_mc",
    "jump_tail_exact",
    "jump_tail_mc",
    "oscillation_mc",
    "duality_samples",
    "duality_mc",
    "supermartingale_mc",
    "vartheta",
    "derivative_tail_mc",
    "derivative_tail_sweep",
    "sample_seeds",
]


class BiasWarning(UserWarning):
    """Truncation close to the sampler cutoff; the small-jump bias is not small."""


class RegimeError(ValueError):
    """Event parameters outside the range where the statement applies."""


@dataclass(frozen=True)
class MomentSpec:
    c: float
    t: float
    k: int
    alpha: float

    def __post_init__(self):
        if not (self.c > 0 and self.t > 0):
            raise ValueError("c and t must be positive")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")


@dataclass(frozen=True)
class DyadicEventSpec:
    n: int
    beta: float
    alpha: float
    L: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be a positive integer")

    @property
    def default_L(self) -> int:
        return int(math.floor(3.0 / (2.0 - self.alpha * self.beta))) + 1

    @property
    def level(self) -> int:
        return self.default_L if self.L is None else self.L

    @property
    def threshold(self) -> float:
        """Jump size / truncation level ``2**(-beta n)``."""
        return 2.0 ** (-self.beta * self.n)

    @property
    def interval(self) -> float:
        """Dyadic interval length ``2**(-2n)``."""
        return 2.0 ** (-2 * self.n)


def sample_seeds(seed: int, n: int) -> list[int]:
    """Per-sample integer seeds derived from a master seed."""
    return [int(s.generate_state(2, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------- moments

def partition_types(k: int):
    """Integer partitions of k, as tuples of parts in non-increasing order."""
    def rec(n, largest):
        if n == 0:
            yield ()
            return
        for p in range(min(n, largest), 0, -1):
            for rest in rec(n - p, p):
                yield (p,) + rest
    return list(rec(k, k))


def _type_count(parts) -> int:
    """Set partitions of {1..2k} with block sizes ``2*parts`` (order ignored)."""
    two_k = 2 * sum(parts)
    num = math.factorial(two_k)
    den = 1
    for p in parts:
        den *= math.factorial(2 * p)
    for m in Counter(parts).values():
        den *= math.factorial(m)
    return num // den


def set_partition_type_counts(size: int) -> Counter:
    """Brute force: count set partitions of {1..size} by sorted block sizes."""
    counts: Counter = Counter()

    def rec(i, blocks):
        if i == size:
            counts[tuple(sorted((len(b) for b in blocks), reverse=True))] += 1
            return
        for b in blocks:
            b.append(i)
            rec(i + 1, blocks)
            b.pop()
        blocks.append([i])
        rec(i + 1, blocks)
        blocks.pop()

    rec(0, [])
    return counts


def moment_from_cumulants(k: int, cumulant) -> float:
    """``E X**(2k)`` of a symmetric law from its even cumulants ``cumulant(j) = kappa_{2j}``."""
    total = 0.0
    for parts in partition_types(k):
        term = float(_type_count(parts))
        for p in parts:
            term *= cumulant(p)
        total += term
    return total


def _truncated_cumulant(alpha, t, c, lower=0.0):
    A = norm_const(alpha)

    def kappa(j):
        e = 2 * j - alpha
        return 2 * A * t * (c ** e - lower ** e) / e

    return kappa


def moment_exact(spec: MomentSpec) -> float:
    """``E|S_{c,t}|**(2k)`` summed over set partitions into even blocks.

    The even cumulants of the truncated process are
    ``kappa_{2j} = 2 A t c**(2j - alpha) / (2j - alpha)``.
    """
    return moment_from_cumulants(spec.k, _truncated_cumulant(spec.alpha, spec.t, spec.c))


def _sampler_moment(spec: MomentSpec, eps: float) -> float:
    """Exact moment of the sampler's law: jumps in [eps, c) plus a Gaussian."""
    jumps = _truncated_cumulant(spec.alpha, spec.t, spec.c, lower=eps)
    var = smalljump_variance(spec.alpha, eps) * spec.t

    def kappa(j):
        return jumps(j) + (var if j == 1 else 0.0)

    return moment_from_cumulants(spec.k, kappa)


def moment_mc(spec: MomentSpec, n_samples: int, seed: int, eps: float | None = None,
              n_se: float = 3.0) -> VerificationReport:
    """Monte Carlo ``E|S_{c,t}|**(2k)`` against :func:`moment_exact`.

    The tolerance is ``n_se`` standard errors plus the exact bias of the
    Gaussian small-jump replacement.
    """
    t0 = _time.perf_counter()
    eps = spec.c / 64.0 if eps is None else float(eps)
    if eps >= spec.c:
        raise ValueError("the sampler cutoff must lie below c")
    if spec.c < 4 * eps:
        warnings.warn(f"c={spec.c} is within a factor 4 of the cutoff {eps}; "
                      "the small-jump bias dominates", BiasWarning, stacklevel=2)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = stable_endpoints(spec.alpha, spec.t, n_samples, rng, eps, truncate_at=spec.c)
    vals = np.abs(x) ** (2 * spec.k)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_samples))
    exact = moment_exact(spec)
    bias = abs(_sampler_moment(spec, eps) - exact)
    tol = n_se * se + bias
    return VerificationReport(
        name="truncated_moment", passed=abs(est - exact) <= tol, target=exact, estimate=est,
        tolerance=tol, stderr=se, n_samples=n_samples, seed=seed,
        params={"c": spec.c, "t": spec.t, "k": spec.k, "alpha": spec.alpha, "eps": eps},
        details={"smalljump_bias": bias, "z_score": (est - exact) / se if se > 0 else 0.0},
        wall_time=_time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- dyadic events

class JumpTail(NamedTuple):
    tail: float      # P{Poisson(mean) >= L}
    mean: float
    power_bound: float   # mean**L
    majorant: float      # (2A/alpha)**L 2**(-3n)
    L: int


def jump_tail_exact(spec: DyadicEventSpec) -> JumpTail:
    """Poisson tail of the number of jumps above ``2**(-beta n)`` in an interval of length ``2**(-2n)``."""
    if not spec.beta < 2.0 / spec.alpha:
        raise RegimeError(f"beta={spec.beta} must be below 2/alpha={2 / spec.alpha}")
    A = norm_const(spec.alpha)
    m = A / spec.alpha * 2.0 ** (1 - (2 - spec.alpha * spec.beta) * spec.n)
    L = spec.level
    tail = float(stats.poisson.sf(L - 1, m))
    return JumpTail(tail, m, m ** L, (2 * A / spec.alpha) ** L * 2.0 ** (-3 * spec.n), L)


def _wilson(k, n, level=0.95):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def jump_tail_mc(spec: DyadicEventSpec, n_samples: int, seed: int, level: float = 0.95) -> VerificationReport:
    """Frequency of ``A_{n,j}`` (at least L large jumps in one dyadic interval)."""
    t0 = _time.perf_counter()
    exact = jump_tail_exact(spec)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    thr = spec.threshold
    counts = stable_jump_counts(spec.alpha, spec.interval, thr, n_samples, rng, eps=thr)
    hits = int(np.sum(counts >= exact.L))
    freq = hits / n_samples
    lo, hi = _wilson(hits, n_samples, level)
    return VerificationReport(
        name="jump_tail", passed=lo <= exact.tail <= hi, target=exact.tail, estimate=freq,
        stderr=math.sqrt(max(freq * (1 - freq), 1e-300) / n_samples), n_samples=n_samples, seed=seed,
        params={"n": spec.n, "beta": spec.beta, "alpha": spec.alpha, "L": exact.L},
        details={"wilson_interval": [lo, hi], "level": level, "hits": hits, "poisson_mean": exact.mean,
                 "power_bound": exact.power_bound, "majorant": exact.majorant,
                 "mean_count": float(counts.mean()), "expected_count": exact.mean},
        wall_time=_time.perf_counter() - t0,
    )


def _truncated_paths_sup(alpha, c, T, n_samples, rng, eps, n_grid):
    """Sup of ``|S_{c,s}|`` over ``s`` in [0, T] and the endpoint, per sample.

    Jumps in [eps, c) are placed at exact times; the path is read at the grid
    points and just after every jump, which is where the pure-jump part of a
    cadlag path attains its running extremes.
    """
    rate = (levy_tail_mass(alpha, eps) - levy_tail_mass(alpha, c))
    counts = rng.poisson(rate * T, size=n_samples)
    total = int(counts.sum())
    u = rng.uniform(size=total)
    mags = (eps ** -alpha - u * (eps ** -alpha - c ** -alpha)) ** (-1.0 / alpha)
    sizes = rng.choice(np.array([-1.0, 1.0]), size=total) * mags
    times = rng.uniform(0.0, T, size=total)
    owner = np.repeat(np.arange(n_samples), counts)
    dt = T / n_grid
    gauss = rng.standard_normal((n_samples, n_grid)) * math.sqrt(smalljump_variance(alpha, eps) * dt)
    gpath = np.concatenate([np.zeros((n_samples, 1)), np.cumsum(gauss, axis=1)], axis=1)
    # events: grid points (kind 0) and jumps (kind 1), sorted per sample by time
    g_owner = np.repeat(np.arange(n_samples), n_grid + 1)
    g_times = np.tile(np.arange(n_grid + 1) * dt, n_samples)
    ev_owner = np.concatenate([g_owner, owner])
    ev_time = np.concatenate([g_times, times])
    ev_jump = np.concatenate([np.zeros(g_owner.size), sizes])
    order = np.lexsort((ev_time, ev_owner))
    ev_owner, ev_time, ev_jump = ev_owner[order], ev_time[order], ev_jump[order]
    csum = np.cumsum(ev_jump)
    starts = np.searchsorted(ev_owner, np.arange(n_samples))
    before = np.where(starts > 0, csum[starts - 1], 0.0)
    jump_part = csum - before[ev_owner]
    cell = np.minimum((ev_time / dt).astype(int), n_grid)
    value = jump_part + gpath[ev_owner, cell]
    sup = np.zeros(n_samples)
    np.maximum.at(sup, ev_owner, np.abs(value))
    end = jump_part[np.r_[starts[1:], ev_owner.size] - 1] + gpath[:, -1]
    return sup, end


def oscillation_mc(spec: DyadicEventSpec, n_samples: int, seed: int, n_grid: int = 256,
                   eps: float | None = None, n_se: float = 3.0) -> VerificationReport:
    """Probability of ``B_{n,j}``: the truncated process moves more than ``2**-n`` within a dyadic interval.

    Truncation ``c = 2**(-beta n)``, interval ``T = 2**(-2n)``.  Checked against
    twice the endpoint probability (reflection form) and against the Chebyshev
    bounds ``2**(1 + 2kn) E|S_{c,T}|**(2k)`` for k = 1, 2.
    """
    if not spec.beta > 1:
        raise RegimeError("the oscillation bound needs beta > 1")
    t0 = _time.perf_counter()
    c, T, level = spec.threshold, spec.interval, 2.0 ** (-spec.n)
    eps = c / 64.0 if eps is None else float(eps)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sup, end = _truncated_paths_sup(spec.alpha, c, T, n_samples, rng, eps, n_grid)
    ind_sup = (sup > level).astype(float)
    ind_end = (np.abs(end) > level).astype(float)
    p_sup = float(ind_sup.mean())
    p_end = float(ind_end.mean())
    diff = ind_sup - 2 * ind_end
    se_diff = float(diff.std(ddof=1) / math.sqrt(n_samples))
    se_sup = float(ind_sup.std(ddof=1) / math.sqrt(n_samples))
    endpoint_ok = p_sup <= 2 * p_end + n_se * se_diff
    cheb = {}
    for k in (1, 2):
        m = moment_exact(MomentSpec(c, T, k, spec.alpha))
        bound = 2.0 ** (1 + 2 * k * spec.n) * m
        cheb[k] = {"moment": m, "bound": bound, "holds": p_sup <= bound}
    passed = endpoint_ok and cheb[1]["holds"] and cheb[2]["holds"]
    return VerificationReport(
        name="oscillation", passed=passed, target=2 * p_end, estimate=p_sup, tolerance=n_se * se_diff,
        stderr=se_sup, n_samples=n_samples, seed=seed,
        params={"n": spec.n, "beta": spec.beta, "alpha": spec.alpha, "truncation": c, "interval": T,
                "level": level, "eps": eps, "n_grid": n_grid},
        details={"p_endpoint": p_end, "endpoint_bound_holds": endpoint_ok,
                 "chebyshev": {str(k): v for k, v in cheb.items()}},
        wall_time=_time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- duality

def duality_samples(params: StableParams, z: complex, t: float, n_samples: int, seed: int,
                    step: float = 1e-3):
    """Samples of ``g_{-t}(z)`` (backward flows) and ``f_t(z + V_t) - V_t`` (inverse maps).

    Both ensembles use truncated drivers on independent seed streams.
    """
    z = complex(z)
    if t == 0:
        return np.full(n_samples, z), np.full(n_samples, z)
    ss_a, ss_b = np.random.SeedSequence(seed).spawn(2)
    seeds_a = [int(s.generate_state(2, np.uint64)[0]) for s in ss_a.spawn(n_samples)]
    seeds_b = [int(s.generate_state(2, np.uint64)[0]) for s in ss_b.spawn(n_samples)]
    paths_a = [combined_driver(params, t, step, s, truncated=True) for s in seeds_a]
    back, _ = backward_flow_batch(paths_a, z, t, step)
    paths_b = [combined_driver(params, t, step, s, truncated=True) for s in seeds_b]
    dur, drv = batch_arrays([build_chain(p, step) for p in paths_b], t)
    vt = np.array([p.value_at(t) for p in paths_b])
    fwd, _ = compose_inverse_batch(dur, drv, z + vt, reverse=True, derivative=False)
    return back, fwd - vt


def duality_mc(params: StableParams, z: complex, t: float, n_samples: int, seed: int,
               step: float = 1e-3, level: float = 0.01) -> VerificationReport:
    """Two-sample KS tests on the real and imaginary parts of the two ensembles."""
    t0 = _time.perf_counter()
    a, b = duality_samples(params, z, t, n_samples, seed, step)
    out = {}
    passed = True
    for name, fa, fb in (("re", a.real, b.real), ("im", a.imag, b.imag)):
        if t == 0:
            stat, p = 0.0, 1.0
        else:
            res = stats.ks_2samp(fa, fb)
            stat, p = float(res.statistic), float(res.pvalue)
        crit = math.sqrt(-math.log(level / 2) * (1 / n_samples + 1 / n_samples) / 2)
        out[name] = {"statistic": stat, "pvalue": p, "critical": crit,
                     "mean_backward": float(fa.mean()), "mean_inverse": float(fb.mean())}
        passed &= p > level
    return VerificationReport(
        name="duality", passed=passed, target=level,
        estimate=min(out["re"]["pvalue"], out["im"]["pvalue"]), n_samples=n_samples, seed=seed,
        params={**params.to_dict(), "z": complex(z), "t": t, "step": step},
        details={"ks": out}, wall_time=_time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- supermartingale and tails

def _stable_from(params) -> StableParams:
    if isinstance(params, StableParams):
        return params
    return StableParams(alpha=params.alpha, theta=params.theta, kappa=params.kappa, delta=params.delta)


def supermartingale_mc(params: OperatorParams, tf: TestFunctionParams, z_hat: complex, u: float,
                       n_samples: int, seed: int, eta: float = 1e-3, delta0: float | None = None,
                       n_se: float = 3.0) -> VerificationReport:
    """``F(z_hat) = y**a e**(-a u) e**(lambda u) E[(1 + x~**2/y~**2)**b |g'_{T_u}|**a]``.

    Here ``a = tf.mu``.  The flow is stopped exactly when its height reaches
    ``e**u``.  Passes iff the estimate is at most
    ``(1 + (x/y)**2)**b y**lambda`` plus ``n_se`` standard errors.
    """
    t0 = _time.perf_counter()
    z_hat = complex(z_hat)
    x_hat, y_hat = z_hat.real, z_hat.imag
    if not y_hat > 0:
        raise ValueError("z_hat must lie in H")
    if u < math.log(y_hat) - 1e-15:
        raise ValueError("u must be at least log Im(z_hat)")
    if isinstance(params, OperatorParams):
        regime_of(params.kappa, tf.b)
    if delta0 is not None and params.delta > delta0:
        raise ValueError(f"delta={params.delta} exceeds the empirical delta0={delta0}")
    a, lam, b = tf.mu, tf.lambda_exp, tf.b
    bound = (1 + (x_hat / y_hat) ** 2) ** b * y_hat ** lam
    Y = math.exp(u)
    res = centred_backward_ensemble(_stable_from(params), z_hat, n_samples, seed, stop_height=Y, eta=eta)
    xt, yt = res.z.real, res.z.imag
    vals = y_hat ** a * math.exp((lam - a) * u) * (1 + (xt / yt) ** 2) ** b * np.exp(a * res.log_deriv)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return VerificationReport(
        name="supermartingale", passed=est <= bound + n_se * se, target=bound, estimate=est,
        tolerance=n_se * se, stderr=se, n_samples=n_samples, seed=seed,
        params={"kappa": params.kappa, "theta": params.theta, "alpha": params.alpha, "delta": params.delta,
                "b": b, "a": a, "lambda": lam, "z_hat": z_hat, "u": u, "eta": eta},
        details={"equal_within_n_se": abs(est - bound) <= n_se * se, "horizon_extensions": res.extensions,
                 "max_stopping_time": float(res.times.max()), "mean_stopping_time": float(res.times.mean())},
        wall_time=_time.perf_counter() - t0,
    )


def vartheta(rho: float, s: float) -> float:
    """``rho**(-s)`` for s > 0, ``1 + |log rho|`` for s = 0, 1 for s < 0."""
    if s > 0:
        return rho ** (-s)
    if s == 0:
        return 1.0 + abs(math.log(rho))
    return 1.0


def _tail_shape(tf, x, y, rho):
    return (1 + (x / y) ** 2) ** tf.b * (y / rho) ** tf.lambda_exp * vartheta(rho, tf.mu - tf.lambda_exp)


def derivative_tail_mc(params, tf: TestFunctionParams, x: float, y: float, rho, t_window: float,
                       n_samples: int, seed: int, eta: float = 1e-3) -> VerificationReport:
    """Frequency of ``|f_hat_t'(x + iy)| > rho / y`` at a fixed time t.

    ``f_hat_t'`` is sampled through its equality in law with the backward-flow
    derivative ``g_{-t}'``.  The empirical constant
    ``C = freq / [(1 + (x/y)**2)**b (y/rho)**lambda vartheta(rho, a - lambda)]``
    is reported for every rho.
    """
    t0 = _time.perf_counter()
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    if not (0 < y <= 1 and np.all((rhos > 0) & (rhos <= 1))):
        raise ValueError("rho and y must lie in (0, 1]")
    res = centred_backward_ensemble(_stable_from(params), complex(x, y), n_samples, seed, t=t_window, eta=eta)
    deriv = np.exp(res.log_deriv)
    rows = []
    for r in rhos:
        hits = int(np.sum(deriv > r / y))
        freq = hits / n_samples
        shape = _tail_shape(tf, x, y, r)
        rows.append({"rho": float(r), "hits": hits, "frequency": freq, "shape": shape, "C": freq / shape,
                     "wilson": _wilson(hits, n_samples)})
    return VerificationReport(
        name="derivative_tail", passed=all(math.isfinite(r["C"]) for r in rows),
        estimate=rows[0]["C"], n_samples=n_samples, seed=seed,
        params={"kappa": params.kappa, "theta": params.theta, "alpha": params.alpha, "delta": params.delta,
                "b": tf.b, "a": tf.mu, "lambda": tf.lambda_exp, "x": x, "y": y, "t": t_window, "eta": eta},
        details={"rows": rows}, wall_time=_time.perf_counter() - t0,
    )


def derivative_tail_sweep(params, tf: TestFunctionParams, x: float, ys, rhos, t_window: float,
                          n_samples: int, seed: int, factor: float = 3.0, eta: float = 1e-3) -> VerificationReport:
    """Boundedness of the empirical constant C across a (y, rho) sweep.

    The reference constant ``C_ref`` is the largest C among the cells at the
    first (coarsest) y.  Passes iff every cell has ``C <= factor * C_ref``
    and the reference cells saw at least one exceedance.  The spread
    ``max C / min C`` over cells with hits is reported as well.
    """
    t0 = _time.perf_counter()
    seeds = sample_seeds(seed, len(ys))
    cells = []
    for yv, s in zip(ys, seeds):
        rep = derivative_tail_mc(params, tf, x, float(yv), rhos, t_window, n_samples, s, eta)
        for row in rep.details["rows"]:
            cells.append({"y": float(yv), **row})
    ref = [c["C"] for c in cells if c["y"] == float(ys[0])]
    c_ref = max(ref)
    worst = max(c["C"] for c in cells)
    with_hits = [c["C"] for c in cells if c["hits"] > 0]
    spread = max(with_hits) / min(with_hits) if with_hits else math.nan
    passed = c_ref > 0 and worst <= factor * c_ref
    return VerificationReport(
        name="derivative_tail_sweep", passed=passed, target=factor * c_ref, estimate=worst,
        n_samples=n_samples, seed=seed,
        params={"kappa": params.kappa, "theta": params.theta, "alpha": params.alpha, "delta": params.delta,
                "b": tf.b, "a": tf.mu, "lambda": tf.lambda_exp, "x": x, "t": t_window, "eta": eta,
                "ys": [float(v) for v in ys], "rhos": [float(r) for r in rhos], "factor": factor},
        details={"cells": cells, "C_ref": c_ref, "C_max": worst, "spread_over_cells_with_hits": spread},
        wall_time=_time.perf_counter() - t0,
    )
