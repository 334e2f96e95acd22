"""Exact slit-map composition for piecewise-constant drivers.

For a constant driving value ``u`` over a time ``h`` the chordal Loewner
equation integrates in closed form: ``(g - u)**2`` grows by ``4 h``.  A chain
is a sequence of such steps, so all error comes from approximating the driver,
never from time stepping.

Branches: every square root is taken in the closed upper half-plane; on the
real axis the sign follows ``Re(z - u)`` so that real points move continuously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .levy_driver import DriverPath, smalljump_variance

__all__ = [
    "SWALLOW_TOL",
    "DomainError",
    "HorizonError",
    "SlitStep",
    "LoewnerChain",
    "SwallowResult",
    "HullGrid",
    "BackwardState",
    "BackwardTrajectory",
    "slit_step_forward",
    "slit_step_inverse",
    "build_chain",
    "forward_map",
    "forward_map_many",
    "swallow_time",
    "hull_grid",
    "backward_flow",
    "time_change_Tu",
    "sqrt_upper",
    "batch_arrays",
    "compose_inverse_batch",
    "backward_flow_batch",
    "CentredFlowResult",
    "centred_backward_ensemble",
]

SWALLOW_TOL = 1e-8


class DomainError(ValueError):
    """Point outside the domain of an inverse slit map."""


class HorizonError(RuntimeError):
    """The driver ends before the requested event happens."""


def sqrt_upper(r, sign_hint):
    """Square root of r with non-negative imaginary part.

    Where the root is real (r >= 0 on the real line) the sign is taken from
    ``sign_hint``.
    """
    q = np.sqrt(np.asarray(r, dtype=complex))
    q = np.where(q.imag < 0, -q, q)
    real_root = q.imag == 0
    return np.where(real_root & (np.asarray(sign_hint) < 0), -q, q)


def _swallow_in_step(s, h, tol2):
    """Closest approach of ``g - u`` to zero along one forward step.

    ``s = z - u``.  Along the step ``(g - u)**2 = s**2 + 4 tau`` so
    ``|g - u|**2`` is minimised at ``tau* = (b**2 - a**2) / 4`` (clamped to the
    step).  Returns (swallowed mask, time within the step).
    """
    a, b = s.real, s.imag
    tau_star = (b * b - a * a) / 4.0
    inside = (tau_star >= 0) & (tau_star <= h)
    at_end = tau_star > h
    s2 = s * s
    dist2 = np.where(inside, np.abs(2 * a * b), np.where(at_end, np.abs(s2 + 4 * h), np.abs(s2)))
    when = np.where(inside, tau_star, np.where(at_end, h, 0.0))
    hit = dist2 <= tol2
    if np.ndim(hit) == 0:
        return bool(hit), float(when)
    return hit, when


# Rounding floor on |g - u|**2 relative to the radicand scale; composing many
# steps leaves absolute errors far above (1e-8)**2 in the squared distance.
# The closest approach 2|Re s Im s| also carries the absolute rounding of
# Re g, which sits at the scale of |g| = |u + s|, not of |s|.
_ROUND_FLOOR = 1024 * np.finfo(float).eps


def _tol2(u, swallow_tol, s=0.0, h=0.0):
    abs_s = np.abs(s)
    return ((swallow_tol * (1.0 + np.abs(u))) ** 2 + _ROUND_FLOOR * (abs_s ** 2 + 4 * h)
            + 2.0 * abs_s * _ROUND_FLOOR * (1.0 + np.abs(u) + abs_s))


def slit_step_forward(z: complex, h: float, u: float, swallow_tol: float = SWALLOW_TOL):
    """One forward step: ``(w - u)**2 = (z - u)**2 + 4 h``.

    Returns ``(w, None)`` for a surviving point and ``(None, tau)`` when the
    point is swallowed ``tau`` into the step.
    """
    if h < 0:
        raise ValueError("step duration must be non-negative")
    z = complex(z)
    if z.imag < 0:
        raise ValueError("z must lie in the closed upper half-plane")
    if h == 0 and z != u:
        return z, None
    s = z - u
    hit, tau = _swallow_in_step(np.complex128(s), h, _tol2(u, swallow_tol, s, h))
    if hit:
        return None, tau
    w = u + complex(sqrt_upper(s * s + 4 * h, s.real))
    return w, None


def slit_step_inverse(w: complex, h: float, u: float) -> complex:
    """Inverse step: ``z = u + sqrt((w - u)**2 - 4 h)`` mapping H into H."""
    if h < 0:
        raise ValueError("step duration must be non-negative")
    w = complex(w)
    if w.imag < 0:
        raise DomainError("w must lie in the closed upper half-plane")
    s = w - u
    if w.imag == 0 and abs(s) < 2.0 * math.sqrt(h):
        raise DomainError("w lies inside the removed slit")
    if h == 0:
        return w
    return u + complex(sqrt_upper(s * s - 4 * h, s.real))


@dataclass(frozen=True)
class SlitStep:
    duration: float
    drive: float
    post_jump_shift: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.duration == 0 and self.post_jump_shift == 0:
            raise ValueError("a zero-length step must carry a jump")


class LoewnerChain:
    """Immutable sequence of slit steps stored as arrays.

    ``starts[i]`` and ``ends[i]`` are the step's time interval, ``drives[i]``
    the constant driving value on it and ``shifts[i]`` the recorded driver jump
    at ``ends[i]`` (0 if none).
    """

    def __init__(self, starts, ends, drives, shifts, end_value=None, swallow_tol=SWALLOW_TOL):
        self.starts = np.asarray(starts, dtype=float)
        self.ends = np.asarray(ends, dtype=float)
        self.drives = np.asarray(drives, dtype=float)
        self.shifts = np.asarray(shifts, dtype=float)
        for arr in (self.starts, self.ends, self.drives, self.shifts):
            arr.setflags(write=False)
        self.durations = self.ends - self.starts
        self.durations.setflags(write=False)
        if np.any(self.durations < 0):
            raise ValueError("negative step duration")
        # right-continuous drive after the final step
        self.end_value = float(self.drives[-1] + self.shifts[-1]) if end_value is None else float(end_value)
        self.swallow_tol = float(swallow_tol)

    @classmethod
    def from_steps(cls, steps, swallow_tol=SWALLOW_TOL):
        steps = list(steps)
        h = np.array([s.duration for s in steps])
        ends = np.cumsum(h)
        starts = ends - h
        return cls(starts, ends, [s.drive for s in steps], [s.post_jump_shift for s in steps],
                   swallow_tol=swallow_tol)

    def __len__(self):
        return self.drives.size

    @property
    def total_time(self) -> float:
        return float(self.ends[-1]) if len(self) else 0.0

    @property
    def steps(self) -> list[SlitStep]:
        return [SlitStep(float(h), float(u), float(s))
                for h, u, s in zip(self.durations, self.drives, self.shifts)]

    def step_index(self, t):
        """Index k of the step with ``starts[k] < t <= ends[k]`` (-1 for t <= 0)."""
        k = np.searchsorted(self.ends, t, side="left")
        k = np.where(np.asarray(t) <= 0, -1, np.minimum(k, len(self) - 1))
        return k

    def drive_at(self, t: float) -> float:
        """Right-continuous driving value at t."""
        if t >= self.total_time:
            return self.end_value
        k = int(np.searchsorted(self.ends, t, side="right"))
        return float(self.drives[k])

    def drive_left(self, t: float) -> float:
        """Left limit of the driving value at t."""
        if t <= 0:
            return float(self.drives[0])
        k = int(self.step_index(t))
        return float(self.drives[k])

    def is_jump_time(self, t: float) -> bool:
        k = int(np.searchsorted(self.ends, t))
        return k < len(self) and self.ends[k] == t and self.shifts[k] != 0

    def to_json_steps(self) -> list[dict]:
        return [{"h": float(h), "u": float(u), "shift": float(s)}
                for h, u, s in zip(self.durations, self.drives, self.shifts)]


class SwallowResult(NamedTuple):
    status: str  # "alive" or "swallowed"
    point: complex | None
    zeta: float | None
    bracket: tuple[float, float] | None = None

    @property
    def alive(self) -> bool:
        return self.status == "alive"


def build_chain(path: DriverPath, max_step: float, swallow_tol: float = SWALLOW_TOL) -> LoewnerChain:
    """Piecewise-constant chain for a driver path.

    Each grid interval carries the left-endpoint value and is split into equal
    sub-steps no longer than ``max_step``; recorded jumps become shifts at
    their exact times.
    """
    if not max_step > 0:
        raise ValueError("max_step must be positive")
    grid, values = path.grid, path.values
    widths = np.diff(grid)
    pieces = np.maximum(1, np.ceil(widths / max_step - 1e-9).astype(int))
    owner = np.repeat(np.arange(widths.size), pieces)
    offset = np.arange(owner.size) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    frac = offset / pieces[owner]
    starts = grid[owner] + frac * widths[owner]
    ends = np.where(offset == pieces[owner] - 1, grid[owner + 1],
                    grid[owner] + (offset + 1) / pieces[owner] * widths[owner])
    drives = values[owner]
    shifts = np.zeros(owner.size)
    if path.jump_times.size:
        jidx = path.jump_indices()  # grid index of each jump; the step ending there takes it
        last_piece = np.cumsum(pieces) - 1
        shifts[last_piece[jidx - 1]] = path.jump_sizes
    return LoewnerChain(starts, ends, drives, shifts, end_value=float(values[-1]), swallow_tol=swallow_tol)


def forward_map_many(chain: LoewnerChain, t: float, z):
    """Vectorised ``g_t`` for an array of points.

    Returns ``(images, zeta)``: images are NaN for swallowed points, zeta is the
    swallow time estimate (inf for points alive at t).
    """
    if not 0 <= t <= chain.total_time + 1e-12:
        raise ValueError("t outside the chain")
    w = np.array(z, dtype=complex, ndmin=1).copy()
    shape = w.shape
    w = w.ravel()
    zeta = np.full(w.size, np.inf)
    alive = np.ones(w.size, dtype=bool)
    tol = chain.swallow_tol
    # zeta(0) = 0 and any point on the initial drive value
    if len(chain):
        hit0 = np.abs(w - chain.drives[0]) <= tol * (1 + abs(chain.drives[0]))
        zeta[hit0] = 0.0
        alive &= ~hit0
    for k in range(len(chain)):
        t0 = chain.starts[k]
        if t0 >= t:
            break
        h = min(chain.durations[k], t - t0)
        u = chain.drives[k]
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = w[idx] - u
        hit, when = _swallow_in_step(s, h, _tol2(u, tol, s, h))
        if hit.any():
            zeta[idx[hit]] = t0 + when[hit]
            alive[idx[hit]] = False
        ok = idx[~hit]
        s_ok = s[~hit]
        w[ok] = u + sqrt_upper(s_ok * s_ok + 4 * h, s_ok.real)
        end = t0 + h
        if t >= chain.ends[k] and chain.shifts[k] != 0:
            end = chain.ends[k]
            # point sitting on the post-jump drive value is also swallowed
            u_next = u + chain.shifts[k]
            on = np.abs(w[ok] - u_next) <= tol * (1 + abs(u_next))
            if on.any():
                zeta[ok[on]] = end
                alive[ok[on]] = False
    w[~alive] = np.nan
    return w.reshape(shape), zeta.reshape(shape)


def forward_map(chain: LoewnerChain, t: float, z: complex) -> SwallowResult:
    """``g_t(z)``, or the swallow time if z is swallowed by time t."""
    z = complex(z)
    if z == 0:
        return SwallowResult("swallowed", None, 0.0, (0.0, 0.0))
    w, zeta = forward_map_many(chain, t, [z])
    if np.isfinite(zeta[0]):
        return SwallowResult("swallowed", None, float(zeta[0]))
    return SwallowResult("alive", complex(w[0]), None)


def swallow_time(chain: LoewnerChain, z: complex, bracket_tol: float = 1e-10) -> SwallowResult:
    """Bracket ``zeta(z)`` to within ``bracket_tol`` by bisection inside the step."""
    z = complex(z)
    if z == 0:
        return SwallowResult("swallowed", None, 0.0, (0.0, 0.0))
    _, zeta = forward_map_many(chain, chain.total_time, [z])
    zeta = float(zeta[0])
    if not math.isfinite(zeta):
        w, _ = forward_map_many(chain, chain.total_time, [z])
        return SwallowResult("alive", complex(w[0]), None)
    if zeta == 0.0:
        return SwallowResult("swallowed", None, 0.0, (0.0, 0.0))
    k = int(chain.step_index(zeta))
    if chain.starts[k] == zeta and k > 0 and chain.ends[k - 1] == zeta:
        k -= 1
    t0 = float(chain.starts[k])
    w0, _ = forward_map_many(chain, t0, [z])
    s = w0[0] - chain.drives[k]
    tol2 = _tol2(chain.drives[k], chain.swallow_tol, s, chain.durations[k])
    lo, hi = 0.0, float(chain.durations[k])
    if not _swallow_in_step(np.complex128(s), 0.0, tol2)[0]:
        while hi - lo > bracket_tol:
            mid = 0.5 * (lo + hi)
            if _swallow_in_step(np.complex128(s), mid, tol2)[0]:
                hi = mid
            else:
                lo = mid
    else:
        hi = 0.0
    return SwallowResult("swallowed", None, t0 + hi, (t0 + lo, t0 + hi))


@dataclass(frozen=True)
class HullGrid:
    xs: np.ndarray
    ys: np.ndarray
    t: float
    swallowed: np.ndarray  # shape (len(ys), len(xs))
    zeta: np.ndarray

    def points(self) -> np.ndarray:
        return self.xs[None, :] + 1j * self.ys[:, None]


def hull_grid(chain: LoewnerChain, t: float, window, resolution: float) -> HullGrid:
    """Swallowed/alive flags at time t on a grid over ``window``.

    ``window = (xmin, xmax, ymin, ymax)``; grid rows start at
    ``max(ymin, resolution)`` so the real axis itself is excluded.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    xmin, xmax, ymin, ymax = window
    nx = int(math.floor((xmax - xmin) / resolution + 1e-9)) + 1
    xs = xmin + resolution * np.arange(nx)
    y0 = max(ymin, resolution)
    ny = int(math.floor((ymax - y0) / resolution + 1e-9)) + 1
    ys = y0 + resolution * np.arange(ny)
    pts = xs[None, :] + 1j * ys[:, None]
    _, zeta = forward_map_many(chain, t, pts)
    return HullGrid(xs, ys, t, zeta <= t, zeta)


class BackwardState(NamedTuple):
    x: float
    y: float
    log_psi: float


@dataclass(frozen=True)
class BackwardTrajectory:
    """Backward flow ``z(t) = g_{-t}(z_hat) - V_{-t}`` at the step boundaries."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    log_psi: np.ndarray
    g: np.ndarray  # g_{-t}(z_hat)
    drive: np.ndarray  # V_{-t}
    log_deriv: np.ndarray  # log |g'_{-t}(z_hat)|

    @property
    def z(self) -> np.ndarray:
        return self.x + 1j * self.y

    def states(self) -> list[BackwardState]:
        return [BackwardState(float(a), float(b), float(c)) for a, b, c in zip(self.x, self.y, self.log_psi)]


def _inverse_steps(w, h, u):
    s = w - u
    q = sqrt_upper(s * s - 4 * h, s.real)
    return u + q, s / q


def backward_flow(path_neg: DriverPath, z_hat: complex, t: float | None = None,
                  max_step: float | None = None) -> BackwardTrajectory:
    """Backward Loewner flow driven by ``path_neg`` (the driver on negative times).

    Each step is an exact inverse slit map, composed in forward time order;
    ``log psi = log(y_hat |g'| / y)`` is accumulated from the exact step
    derivatives.
    """
    z_hat = complex(z_hat)
    if not z_hat.imag > 0:
        raise ValueError("z_hat must lie in H")
    t = path_neg.horizon if t is None else float(t)
    if t > path_neg.horizon + 1e-12:
        raise HorizonError("flow time exceeds the driver horizon")
    chain = build_chain(path_neg, max_step or float(np.max(np.diff(path_neg.grid))))
    n = int(np.searchsorted(chain.ends, t, side="left")) + 1 if t > 0 else 0
    n = min(n, len(chain))
    times = [0.0]
    g = [z_hat]
    drive = [0.0]
    log_d = [0.0]
    w = z_hat
    ld = 0.0
    for k in range(n):
        h = min(chain.durations[k], t - chain.starts[k])
        u = chain.drives[k]
        w, d = _inverse_steps(np.complex128(w), h, u)
        ld += math.log(abs(d))
        end = chain.starts[k] + h
        times.append(end)
        g.append(complex(w))
        drive.append(path_neg.value_at(end))
        log_d.append(ld)
    times = np.array(times)
    g = np.array(g)
    drive = np.array(drive)
    log_d = np.array(log_d)
    zz = g - drive
    log_psi = math.log(z_hat.imag) + log_d - np.log(zz.imag)
    return BackwardTrajectory(times, zz.real, zz.imag, log_psi, g, drive, log_d)


def time_change_Tu(traj: BackwardTrajectory, u: float) -> float:
    """First time the backward-flow height reaches ``e**u`` (linear interpolation)."""
    target = math.exp(u)
    y = traj.y
    if target < y[0] * (1 - 1e-12):
        raise ValueError("e**u is below the initial height")
    if target <= y[0]:
        return 0.0
    i = int(np.searchsorted(y, target, side="left"))
    if i >= y.size:
        raise HorizonError("trajectory ends before reaching height e**u; use a longer horizon")
    y0, y1 = y[i - 1], y[i]
    t0, t1 = traj.times[i - 1], traj.times[i]
    return float(t0 + (target - y0) / (y1 - y0) * (t1 - t0))


# Ensembles.  Many chains are padded to a common step count with zero-length
# steps (the identity map) so one sweep composes all of them at once.

def batch_arrays(chains, t: float):
    """Padded ``(durations, drives)`` of shape (n_chains, n_steps), stopped at time t."""
    rows = []
    for c in chains:
        if t > c.total_time * (1 + 1e-12) + 1e-15:
            raise HorizonError("t exceeds a chain's total time")
        k = int(c.step_index(t)) + 1
        h = np.minimum(c.durations[:k], np.maximum(t - c.starts[:k], 0.0))
        rows.append((h, c.drives[:k]))
    width = max((r[0].size for r in rows), default=0)
    dur = np.zeros((len(rows), width))
    drv = np.zeros((len(rows), width))
    for i, (h, u) in enumerate(rows):
        dur[i, : h.size] = h
        drv[i, : u.size] = u
        if u.size:
            drv[i, u.size:] = u[-1]
    return dur, drv


def compose_inverse_batch(durations, drives, w, reverse: bool, derivative: bool = True):
    """Compose inverse slit steps row-wise.

    ``reverse=False`` applies steps in time order (the backward flow),
    ``reverse=True`` last step first (the inverse map ``f_t``).  Returns the
    images and ``log|d/dw|``.
    """
    w = np.array(w, dtype=complex).copy()
    logd = np.zeros(w.shape)
    cols = range(durations.shape[1] - 1, -1, -1) if reverse else range(durations.shape[1])
    for j in cols:
        h, u = durations[:, j], drives[:, j]
        s = w - u
        q = sqrt_upper(s * s - 4.0 * h, s.real)
        if derivative:
            logd += np.log(np.abs(s)) - np.log(np.abs(q))
        w = u + q
    return w, logd


def backward_flow_batch(paths, z_hat: complex, t: float, max_step: float):
    """``g_{-t}(z_hat)`` and ``log|g_{-t}'(z_hat)|`` for many negative-time drivers.

    Row i agrees with :func:`backward_flow` on ``paths[i]`` up to rounding.
    """
    dur, drv = batch_arrays([build_chain(p, max_step) for p in paths], t)
    return compose_inverse_batch(dur, drv, np.full(dur.shape[0], complex(z_hat)), reverse=False)


class CentredFlowResult(NamedTuple):
    z: np.ndarray          # g - V at the final (or stopping) time
    log_deriv: np.ndarray  # log|g'|
    times: np.ndarray      # final or stopping time per row
    reached: np.ndarray    # stopping height reached
    extensions: int        # horizon chunks beyond the first


def _stable_increments(rng, params, h):
    """Truncated stable increments over per-row durations h (unscaled)."""
    alpha, eps, delta = params.alpha, params.eps_smalljump, params.delta
    rate = (eps ** -alpha - delta ** -alpha) * 2 * params.norm_const / alpha
    counts = rng.poisson(rate * h)
    total = int(counts.sum())
    u = rng.uniform(size=total)
    mags = (eps ** -alpha - u * (eps ** -alpha - delta ** -alpha)) ** (-1.0 / alpha)
    signs = rng.choice(np.array([-1.0, 1.0]), size=total)
    owner = np.repeat(np.arange(h.size), counts)
    jumps = np.bincount(owner, weights=signs * mags, minlength=h.size)
    return jumps + rng.standard_normal(h.size) * np.sqrt(smalljump_variance(alpha, eps) * h)


def centred_backward_ensemble(params, z_hat, n: int, seed: int, t: float | None = None,
                              stop_height: float | None = None, eta: float = 0.01,
                              max_step: float = 0.01, chunk: float = 4.0, max_chunks: int = 64):
    """Backward flow in centred coordinates ``Z = g_{-s}(z_hat) - V_{-s}``.

    The driver is generated along the way with a truncated stable part.
    Step h = min(eta |Z|**2, max_step); over a step Z follows the exact inverse slit map and the
    driver increment is applied at its end.  Run to time ``t``, or until
    ``Im Z`` reaches ``stop_height``; the crossing inside a step is solved
    exactly.  Rows still short of the height after ``chunk`` time keep
    running in further chunks (at most ``max_chunks``), counted in
    ``extensions``.
    """
    if (t is None) == (stop_height is None):
        raise ValueError("give exactly one of t and stop_height")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z = np.full(n, complex(z_hat))
    logd = np.zeros(n)
    time = np.zeros(n)
    active = np.ones(n, dtype=bool)
    reached = np.zeros(n, dtype=bool)
    if stop_height is not None and z_hat.imag >= stop_height:
        return CentredFlowResult(z, logd, time, ~reached, 0)
    sk = math.sqrt(params.kappa)
    scale = params.stable_scale
    extensions = 0
    limit = chunk
    while active.any():
        idx = np.flatnonzero(active)
        zi = z[idx]
        h = np.minimum(eta * np.abs(zi) ** 2, max_step)
        last = np.zeros(idx.size, dtype=bool)
        if t is not None:
            last = h >= t - time[idx]
            h = np.where(last, t - time[idx], h)
        else:
            h = np.minimum(h, limit - time[idx])
        q = sqrt_upper(zi * zi - 4.0 * h, zi.real)
        stop = np.zeros(idx.size, dtype=bool)
        if stop_height is not None:
            stop = q.imag >= stop_height
            if stop.any():
                a, b = zi.real[stop], zi.imag[stop]
                p = a * b / stop_height
                tau = (a * a - b * b - p * p + stop_height ** 2) / 4.0
                h[stop] = np.clip(tau, 0.0, h[stop])
                q[stop] = p + 1j * stop_height
        logd[idx] += np.log(np.abs(zi)) - np.log(np.abs(q))
        time[idx] = np.where(last, t if t is not None else 0.0, time[idx] + h)
        cont = ~stop
        dv = np.zeros(idx.size)
        if params.kappa > 0:
            dv += sk * rng.standard_normal(idx.size) * np.sqrt(h)
        if params.theta > 0:
            dv += scale * _stable_increments(rng, params, h)
        z[idx] = np.where(cont, q - dv, q)
        done = stop | last
        reached[idx[stop]] = True
        active[idx[done]] = False
        if stop_height is not None and active.any() and np.all(time[active] >= limit):
            extensions += 1
            if extensions >= max_chunks:
                raise HorizonError(f"{int(active.sum())} rows did not reach height {stop_height}")
            limit += chunk
    return CentredFlowResult(z, logd, time, reached, extensions)
