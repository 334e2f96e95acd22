"""Brownian, symmetric alpha-stable and mixed driving paths with explicit jumps.

The stable part is simulated as a compound Poisson process of the jumps with
``|x| >= eps`` plus a Gaussian stand-in for the remaining small jumps, so every
jump that truncation or stopping-time arguments act on is available by name.

Paths live on a uniform base grid with the jump times inserted.  The continuous
component (Brownian motion and the small-jump Gaussian) only moves at base grid
points; an inserted jump time carries the continuous value of the preceding
grid point.  This keeps the path piecewise constant between grid times, which
is the convention the Loewner solver uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

__all__ = [
    "PrecisionError",
    "StableParams",
    "JumpRecord",
    "DriverPath",
    "norm_const",
    "levy_tail_mass",
    "smalljump_variance",
    "sample_brownian",
    "sample_stable",
    "truncate",
    "combined_driver",
    "jump_times_above",
    "stable_endpoints",
    "stable_jump_counts",
    "child_seeds",
]

DEFAULT_EPS_RATIO = 1.0 / 64.0


class PrecisionError(ValueError):
    """Requested operation needs jumps below the path's simulation cutoff."""


def norm_const(alpha: float) -> float:
    """Normalising constant of the symmetric alpha-stable Levy density.

    The density of the Levy measure is ``norm_const(alpha) * |x|**(-1 - alpha)``
    for the process with characteristic function ``exp(-t |lambda|**alpha)``.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    log_val = (
        math.log(alpha)
        + (alpha - 1.0) * math.log(2.0)
        - 0.5 * math.log(math.pi)
        + gammaln((1.0 + alpha) / 2.0)
        - gammaln(1.0 - alpha / 2.0)
    )
    return math.exp(log_val)


def levy_tail_mass(alpha: float, r: float) -> float:
    """Levy measure of ``{|x| > r}``: expected jumps of size above r per unit time."""
    return 2.0 * norm_const(alpha) * r ** (-alpha) / alpha


def smalljump_variance(alpha: float, eps: float) -> float:
    """Variance per unit time carried by the jumps with ``|x| < eps``."""
    return 2.0 * norm_const(alpha) * eps ** (2.0 - alpha) / (2.0 - alpha)


@dataclass(frozen=True)
class StableParams:
    """Parameter block for ``sqrt(kappa) B + theta**(1/alpha) S``.

    ``delta`` is the truncation level of the stable part and ``eps_smalljump``
    the simulation cutoff below which jumps are replaced by a Gaussian.  It
    defaults to ``delta / 64``.
    """

    alpha: float
    theta: float = 1.0
    kappa: float = 0.0
    delta: float = 1.0
    eps_smalljump: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.theta < 0 or self.kappa < 0:
            raise ValueError("theta and kappa must be non-negative")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.eps_smalljump is None:
            object.__setattr__(self, "eps_smalljump", self.delta * DEFAULT_EPS_RATIO)
        if not 0.0 < self.eps_smalljump < self.delta:
            raise ValueError("eps_smalljump must lie in (0, delta)")

    @property
    def norm_const(self) -> float:
        return norm_const(self.alpha)

    @property
    def stable_scale(self) -> float:
        return self.theta ** (1.0 / self.alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "theta": self.theta,
            "kappa": self.kappa,
            "delta": self.delta,
            "eps_smalljump": self.eps_smalljump,
            "norm_const": self.norm_const,
        }


class JumpRecord(NamedTuple):
    time: float
    size: float


@dataclass(frozen=True, eq=False)
class DriverPath:
    """Cadlag path sampled on a non-uniform grid with an explicit jump list.

    ``values[i]`` is the right-continuous value at ``grid[i]``; between grid
    times the path is constant.  ``continuous`` is the path minus its recorded
    jumps.  ``cutoff`` is the smallest jump size that is guaranteed to be
    recorded individually.
    """

    grid: np.ndarray
    values: np.ndarray
    continuous: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    cutoff: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("grid", "values", "continuous", "jump_times", "jump_sizes"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ValueError("grid needs at least two points")
        if self.grid[0] != 0.0 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        if self.values.shape != self.grid.shape or self.continuous.shape != self.grid.shape:
            raise ValueError("values and continuous must match the grid")
        if self.jump_times.shape != self.jump_sizes.shape:
            raise ValueError("jump_times and jump_sizes differ in length")
        if self.jump_times.size and np.any(np.diff(self.jump_times) <= 0):
            raise ValueError("jump times must increase strictly")
        if np.any(self.jump_sizes == 0):
            raise ValueError("recorded jumps must be non-zero")
        if self.values[0] != 0.0:
            raise ValueError("paths start at 0")
        if self.jump_times.size:
            idx = self.jump_indices()
            if np.any(idx == 0):
                raise ValueError("no jump allowed at time 0")
            step = self.values[idx] - self.values[idx - 1]
            # the difference of two stored values carries their rounding error
            slack = 1e-12 * (1 + np.abs(self.jump_sizes)) + 8 * np.spacing(np.abs(self.values[idx]))
            if np.any(np.abs(step - self.jump_sizes) > slack):
                raise ValueError("path values disagree with the recorded jump sizes")

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def jumps(self) -> list[JumpRecord]:
        return [JumpRecord(float(t), float(s)) for t, s in zip(self.jump_times, self.jump_sizes)]

    def jump_indices(self) -> np.ndarray:
        """Grid index of every recorded jump time."""
        idx = np.searchsorted(self.grid, self.jump_times)
        if self.jump_times.size and not np.array_equal(self.grid[idx], self.jump_times):
            raise ValueError("jump time missing from grid")
        return idx

    def value_at(self, t: float) -> float:
        """Right-continuous value at time t."""
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        return float(self.values[max(i, 0)])

    def left_value_at(self, t: float) -> float:
        """Left limit at time t (equals ``value_at`` off the grid)."""
        i = int(np.searchsorted(self.grid, t, side="left")) - 1
        return float(self.values[max(i, 0)])

    def reconstruct(self) -> np.ndarray:
        """Continuous part plus the running sum of recorded jumps."""
        jumps_on_grid = np.zeros_like(self.values)
        if self.jump_times.size:
            jumps_on_grid[self.jump_indices()] = self.jump_sizes
        return self.continuous + np.cumsum(jumps_on_grid)


def child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Deterministic per-worker seed sequences derived from a master seed."""
    return np.random.SeedSequence(seed).spawn(n)


def _base_grid(horizon: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("step must be positive")
    if not horizon >= step:
        raise ValueError("horizon must be at least one step")
    n = int(math.ceil(horizon / step - 1e-9))
    grid = np.arange(n + 1, dtype=float) * step
    grid[-1] = horizon
    return grid


def _stable_jumps(rng: np.random.Generator, alpha: float, eps: float, horizon: float):
    """Compound Poisson jumps with ``|x| >= eps`` on ``(0, horizon)``."""
    rate = levy_tail_mass(alpha, eps)
    n = rng.poisson(rate * horizon)
    times = rng.uniform(0.0, horizon, size=n)
    mags = eps * rng.uniform(size=n) ** (-1.0 / alpha)
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    order = np.argsort(times, kind="stable")
    return times[order], (signs * mags)[order]


def _merge(base: np.ndarray, cont_base: np.ndarray, jump_times: np.ndarray, jump_sizes: np.ndarray):
    """Insert jump times into the base grid and build values."""
    keep = (jump_times > 0.0) & (jump_times < base[-1]) & ~np.isin(jump_times, base)
    jump_times, jump_sizes = jump_times[keep], jump_sizes[keep]
    grid = np.concatenate([base, jump_times])
    order = np.argsort(grid, kind="stable")
    grid = grid[order]
    # continuous part is piecewise constant on the base grid
    base_idx = np.searchsorted(base, grid, side="right") - 1
    continuous = cont_base[base_idx]
    jumps_on_grid = np.zeros_like(grid)
    jumps_on_grid[np.searchsorted(grid, jump_times)] = jump_sizes
    values = continuous + np.cumsum(jumps_on_grid)
    return grid, values, continuous, jump_times, jump_sizes


def _brownian_base(rng: np.random.Generator, base: np.ndarray, variance_rate: float) -> np.ndarray:
    incr = rng.standard_normal(base.size - 1) * np.sqrt(variance_rate * np.diff(base))
    return np.concatenate([[0.0], np.cumsum(incr)])


def sample_brownian(horizon: float, step: float, seed: int) -> DriverPath:
    """Standard Brownian motion on a uniform grid (no jumps)."""
    base = _base_grid(horizon, step)
    rng = np.random.default_rng(child_seeds(seed, 2)[0])
    b = _brownian_base(rng, base, 1.0)
    return DriverPath(base, b, b.copy(), np.empty(0), np.empty(0), cutoff=0.0,
                      meta={"kind": "brownian", "horizon": horizon, "step": step, "seed": seed})


def _stable_parts(params: StableParams, base: np.ndarray, seed: int):
    rng = np.random.default_rng(child_seeds(seed, 2)[1])
    eps = params.eps_smalljump
    jt, js = _stable_jumps(rng, params.alpha, eps, float(base[-1]))
    small = _brownian_base(rng, base, smalljump_variance(params.alpha, eps))
    return small, jt, js


def sample_stable(params: StableParams, horizon: float, step: float, seed: int) -> DriverPath:
    """Standard symmetric alpha-stable path, ``E exp(i l S_t) = exp(-t |l|**alpha)``.

    All jumps of size at least ``params.eps_smalljump`` are recorded.
    """
    base = _base_grid(horizon, step)
    small, jt, js = _stable_parts(params, base, seed)
    grid, values, cont, jt, js = _merge(base, small, jt, js)
    meta = {"kind": "stable", "params": params.to_dict(), "horizon": horizon, "step": step, "seed": seed}
    return DriverPath(grid, values, cont, jt, js, cutoff=params.eps_smalljump, meta=meta)


def truncate(path: DriverPath, delta: float) -> DriverPath:
    """Remove every recorded jump with ``|size| >= delta``.

    The grid is left untouched, so removed jump times stay as ordinary grid
    points.
    """
    if delta < path.cutoff:
        raise PrecisionError(
            f"truncation level {delta} is below the simulation cutoff {path.cutoff}"
        )
    drop = np.abs(path.jump_sizes) >= delta
    if not drop.any():
        return path
    removed = np.zeros_like(path.values)
    removed[np.searchsorted(path.grid, path.jump_times[drop])] = path.jump_sizes[drop]
    meta = dict(path.meta, truncated_at=float(delta))
    return DriverPath(
        path.grid,
        path.values - np.cumsum(removed),
        path.continuous,
        path.jump_times[~drop],
        path.jump_sizes[~drop],
        cutoff=path.cutoff,
        meta=meta,
    )


def combined_driver(
    params: StableParams, horizon: float, step: float, seed: int, truncated: bool = False
) -> DriverPath:
    """``sqrt(kappa) B + theta**(1/alpha) S`` (``S`` truncated at delta if asked).

    Uses the same seed streams as :func:`sample_brownian` and
    :func:`sample_stable`, so the components can be regenerated separately.
    """
    base = _base_grid(horizon, step)
    rng_b = np.random.default_rng(child_seeds(seed, 2)[0])
    b = _brownian_base(rng_b, base, 1.0)
    meta = {"kind": "combined", "params": params.to_dict(), "horizon": horizon,
            "step": step, "seed": seed, "truncated": bool(truncated)}
    sk = math.sqrt(params.kappa)
    if params.theta == 0.0:
        cont = sk * b
        return DriverPath(base, cont, cont.copy(), np.empty(0), np.empty(0), cutoff=0.0, meta=meta)
    small, jt, js = _stable_parts(params, base, seed)
    if truncated:
        keep = np.abs(js) < params.delta
        jt, js = jt[keep], js[keep]
    scale = params.stable_scale
    cont_base = sk * b + scale * small
    grid, values, cont, jt, js = _merge(base, cont_base, jt, scale * js)
    return DriverPath(grid, values, cont, jt, js, cutoff=scale * params.eps_smalljump, meta=meta)


def jump_times_above(path: DriverPath, threshold: float) -> list[JumpRecord]:
    """Recorded jumps with ``|size| > threshold`` in time order."""
    if threshold < path.cutoff:
        raise PrecisionError(f"threshold {threshold} is below the simulation cutoff {path.cutoff}")
    sel = np.abs(path.jump_sizes) > threshold
    return [JumpRecord(float(t), float(s)) for t, s in zip(path.jump_times[sel], path.jump_sizes[sel])]


# Vectorised endpoint samplers for Monte Carlo ensembles.  They use the same
# compound-Poisson plus Gaussian scheme as the path sampler.

def _jump_sums(rng, alpha, eps, t, size, upper=None):
    counts = rng.poisson(levy_tail_mass(alpha, eps) * t, size=size)
    total = int(counts.sum())
    mags = eps * rng.uniform(size=total) ** (-1.0 / alpha)
    signs = rng.choice(np.array([-1.0, 1.0]), size=total)
    jumps = signs * mags
    if upper is not None:
        jumps = np.where(mags < upper, jumps, 0.0)
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner, weights=jumps, minlength=size)


def stable_endpoints(
    alpha: float,
    t: float,
    size: int,
    rng: np.random.Generator,
    eps: float,
    truncate_at: float | None = None,
) -> np.ndarray:
    """Samples of ``S_t`` (or ``S_{c,t}`` with ``c = truncate_at``)."""
    if truncate_at is not None and truncate_at < eps:
        raise PrecisionError("truncation below the simulation cutoff")
    sums = _jump_sums(rng, alpha, eps, t, size, upper=truncate_at)
    gauss = rng.standard_normal(size) * math.sqrt(smalljump_variance(alpha, eps) * t)
    return sums + gauss


def stable_jump_counts(
    alpha: float, t: float, threshold: float, size: int, rng: np.random.Generator, eps: float
) -> np.ndarray:
    """Number of jumps with ``|x| > threshold`` on an interval of length t."""
    if threshold < eps:
        raise PrecisionError("threshold below the simulation cutoff")
    counts = rng.poisson(levy_tail_mass(alpha, eps) * t, size=size)
    total = int(counts.sum())
    mags = eps * rng.uniform(size=total) ** (-1.0 / alpha)
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner, weights=(mags > threshold).astype(float), minlength=size).astype(int)
