"""The trace ``gamma(t) = lim_{y -> 0} f_t(iy + U_t)`` and its path checks.

Inverse maps are evaluated by composing inverse slit steps, last step first.
Many (time, point) pairs are handled in one sweep over the chain: rows are
ordered by the step containing their time, so the rows still active at step i
form a prefix of the array.

Because every elementary map extends continuously to the real line, the trace
of a piecewise-constant chain can also be evaluated exactly at depth zero
(:func:`discrete_trace`).  The depth ladder of :func:`trace_point` is the
general algorithm; the depth-zero evaluation serves as an oracle and as the
fast path inside the checks.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import label
from scipy.spatial import cKDTree

from .levy_driver import DriverPath
from .loewner import LoewnerChain, hull_grid, sqrt_upper
from .reports import VerificationReport

__all__ = [
    "TraceSample",
    "TraceCurve",
    "inverse_map_at",
    "derivative_at",
    "inverse_map_many",
    "discrete_trace",
    "trace_point",
    "trace_curve",
    "cadlag_check",
    "generation_check",
]


class TraceSample(NamedTuple):
    t: float
    point: complex
    depth: float
    deriv_mag: float
    error_est: float
    converged: bool
    side: str = "right"  # "left" for the limit gamma(t-)


def inverse_map_many(chain: LoewnerChain, times, w, derivative: bool = True):
    """``f_t(w)`` and ``f_t'(w)`` for rows of points at their own times.

    ``times`` has shape (m,) and ``w`` shape (m,) or (m, j); row r is mapped by
    the chain stopped at ``times[r]``.
    """
    times = np.asarray(times, dtype=float)
    w = np.array(w, dtype=complex)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[:, None]
    if times.shape != w.shape[:1]:
        raise ValueError("one time per row required")
    if np.any(times < 0) or np.any(times > chain.total_time * (1 + 1e-12) + 1e-15):
        raise ValueError("time outside the chain")
    k = chain.step_index(times)
    order = np.argsort(-k, kind="stable")
    ks = k[order]
    ts = times[order]
    z = w[order]
    d = np.ones_like(z)
    # number of rows with k >= i, for each i
    counts = np.searchsorted(-ks, -np.arange(len(chain)), side="right")
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(int(ks.max(initial=-1)), -1, -1):
            n = counts[i]
            h = np.where(ks[:n] == i, ts[:n] - chain.starts[i], chain.durations[i])[:, None]
            s = z[:n] - chain.drives[i]
            q = sqrt_upper(s * s - 4.0 * h, s.real)
            z[:n] = chain.drives[i] + q
            if derivative:
                d[:n] *= s / q
    out = np.empty_like(z)
    out[order] = z
    dout = np.empty_like(d)
    dout[order] = d
    if squeeze:
        out, dout = out[:, 0], dout[:, 0]
    return out, dout


def inverse_map_at(chain: LoewnerChain, t: float, w):
    """``f_t(w)``, the inverse of ``g_t``, for scalar or array w."""
    arr = np.atleast_1d(np.asarray(w, dtype=complex))
    z, _ = inverse_map_many(chain, np.full(arr.size, float(t)), arr.ravel(), derivative=False)
    return complex(z[0]) if np.ndim(w) == 0 else z.reshape(arr.shape)


def derivative_at(chain: LoewnerChain, t: float, w):
    """``f_t'(w)`` as the product of the elementary step derivatives."""
    arr = np.atleast_1d(np.asarray(w, dtype=complex))
    _, d = inverse_map_many(chain, np.full(arr.size, float(t)), arr.ravel())
    return complex(d[0]) if np.ndim(w) == 0 else d.reshape(arr.shape)


def _drives(chain: LoewnerChain, times, side: str):
    if side == "right":
        return np.array([chain.drive_at(t) for t in times])
    return np.array([chain.drive_left(t) for t in times])


def discrete_trace(chain: LoewnerChain, times, side: str = "right") -> np.ndarray:
    """Exact trace of the piecewise-constant chain, evaluated at depth zero."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    z, _ = inverse_map_many(chain, times, _drives(chain, times, side).astype(complex), derivative=False)
    return z


def _ladder(y_min: float):
    j_max = max(0, int(math.floor(-math.log2(y_min) + 1e-12)))
    return 2.0 ** -np.arange(j_max + 1)


def _trace_rows(chain, times, sides, tol, y_min) -> list[TraceSample]:
    times = np.asarray(times, dtype=float)
    ys = _ladder(y_min)
    drive = np.array([chain.drive_at(t) if s == "right" else chain.drive_left(t)
                      for t, s in zip(times, sides)])
    w = drive[:, None] + 1j * ys[None, :]
    z, d = inverse_map_many(chain, times, w)
    err = np.abs(d) * ys[None, :]
    out = []
    for r in range(times.size):
        ok = np.flatnonzero(err[r] < tol)
        j = int(ok[0]) if ok.size else ys.size - 1
        out.append(TraceSample(float(times[r]), complex(z[r, j]), float(ys[j]), float(abs(d[r, j])),
                               float(err[r, j]), bool(ok.size), sides[r]))
    return out


def trace_point(chain: LoewnerChain, driver: DriverPath | None, t: float, tol: float,
                y_min: float) -> TraceSample:
    """``f_t(iy + U_t)`` along ``y = 2**-j`` until ``|f_t'| y < tol``.

    The sample is flagged unconverged when ``y_min`` is reached first.
    """
    if not (tol > 0 and y_min > 0):
        raise ValueError("tol and y_min must be positive")
    return _trace_rows(chain, [t], ["right"], tol, y_min)[0]


@dataclass
class TraceCurve:
    """Time-ordered trace samples plus left limits at the jump times."""

    samples: list[TraceSample]
    jump_times: np.ndarray
    left_limits: list[TraceSample]
    chain: LoewnerChain = field(repr=False)
    tol: float = 1e-3
    y_min: float = 1e-8
    jump_threshold: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.samples])

    @property
    def converged(self) -> np.ndarray:
        return np.array([s.converged for s in self.samples])

    def left_limit(self, t: float) -> TraceSample:
        for s in self.left_limits:
            if s.t == t:
                return s
        raise KeyError(t)

    def all_samples(self) -> list[TraceSample]:
        """Right samples and left limits in time order, left before right."""
        return sorted(self.samples + self.left_limits, key=lambda s: (s.t, s.side == "right"))


def _chain_jumps(chain: LoewnerChain, threshold: float):
    sel = (chain.shifts != 0) & (np.abs(chain.shifts) > threshold)
    return chain.ends[sel], chain.shifts[sel]


def trace_curve(chain: LoewnerChain, driver: DriverPath | None, grid, tol: float, y_min: float,
                jump_threshold: float | None = None) -> TraceCurve:
    """Trace samples on ``grid`` with the jump times above threshold added.

    At each such jump time T both ``gamma(T)`` and ``gamma(T-)`` are stored; the
    left limit is evaluated with the pre-jump drive.
    """
    if not (tol > 0 and y_min > 0):
        raise ValueError("tol and y_min must be positive")
    if jump_threshold is None:
        jump_threshold = driver.cutoff if driver is not None else 0.0
    grid = np.unique(np.asarray(grid, dtype=float))
    if grid.size == 0 or grid[0] < 0 or grid[-1] > chain.total_time * (1 + 1e-12):
        raise ValueError("grid must lie inside the chain horizon")
    jt, _ = _chain_jumps(chain, jump_threshold)
    jt = jt[(jt >= grid[0]) & (jt <= grid[-1])]
    times = np.union1d(grid, jt)
    rows_t = np.concatenate([times, jt])
    sides = ["right"] * times.size + ["left"] * jt.size
    res = _trace_rows(chain, rows_t, sides, tol, y_min)
    return TraceCurve(res[: times.size], jt, res[times.size:], chain, tol, y_min, jump_threshold)


def _finest_boundary_after(chain, t):
    k = int(np.searchsorted(chain.ends, t, side="right"))
    return float(chain.ends[k]) if k < len(chain) else math.inf


def cadlag_check(curve: TraceCurve, driver: DriverPath | None, osc_tol: float, n_levels: int = 24,
                 jump_threshold: float | None = None) -> VerificationReport:
    """Right-continuity, left limits, and location of the trace discontinuities.

    Offsets are evaluated with the exact depth-zero trace of the chain.

    (0) Every stored sample lies within ``osc_tol`` of the depth-zero value.
    (i) At every right sample before the horizon, ``gamma(t + 2**-j)`` for
    ``n_levels`` dyadic offsets below the distance to the next chain boundary
    must end up within ``osc_tol`` of ``gamma(t)`` (finest third of the levels).
    (ii) At every jump time T, ``gamma(T - 2**-j)`` must be Cauchy to
    ``osc_tol`` on the finest third of the levels and converge to the stored
    ``gamma(T-)``.
    (iii) At every chain boundary s up to the last sample, a gap
    ``|gamma(s) - gamma(s-)| > osc_tol`` must sit at a recorded jump with
    ``|size| > jump_threshold``.
    """
    t0 = _time.perf_counter()
    chain = curve.chain
    thr = curve.jump_threshold if jump_threshold is None else jump_threshold
    T = chain.total_time
    tail = slice(-max(1, n_levels // 3), None)

    # (0) ladder samples against the depth-zero trace
    all_s = curve.all_samples()
    exact = np.empty(len(all_s), dtype=complex)
    for side in ("right", "left"):
        idx = [i for i, s in enumerate(all_s) if s.side == side]
        if idx:
            exact[idx] = discrete_trace(chain, [all_s[i].t for i in idx], side)
    consistency = np.abs(np.array([s.point for s in all_s]) - exact)
    cons_fail = [{"t": s.t, "side": s.side, "deviation": float(v)}
                 for s, v in zip(all_s, consistency) if v > osc_tol]

    # (i) right-continuity
    starts = [s for s in curve.samples if s.t < T]
    rc_fail, rc_max = [], 0.0
    if starts:
        offs = []
        for s in starts:
            gap = min(_finest_boundary_after(chain, s.t), T) - s.t
            j0 = int(math.ceil(-math.log2(gap))) + 1
            offs.append(s.t + 2.0 ** -np.arange(j0, j0 + n_levels))
        offs = np.concatenate(offs)
        pts = discrete_trace(chain, offs, "right").reshape(-1, n_levels)
        base = discrete_trace(chain, [s.t for s in starts], "right")
        dev = np.abs(pts - base[:, None])[:, tail].max(axis=1)
        rc_max = float(dev.max())
        rc_fail = [{"t": s.t, "deviation": float(v)} for s, v in zip(starts, dev) if v > osc_tol]

    # (ii) left limits at jump times
    ll_fail, ll_max = [], 0.0
    if curve.left_limits:
        offs = []
        for s in curve.left_limits:
            k = int(chain.step_index(s.t))
            j0 = int(math.ceil(-math.log2(s.t - chain.starts[k]))) + 1
            offs.append(s.t - 2.0 ** -np.arange(j0, j0 + n_levels))
        pts = discrete_trace(chain, np.concatenate(offs), "right").reshape(-1, n_levels)
        lim = discrete_trace(chain, [s.t for s in curve.left_limits], "left")
        for s, row, g in zip(curve.left_limits, pts, lim):
            dist = float(abs(row[-1] - g))
            cauchy = float(np.abs(np.diff(row[tail])).max()) if n_levels > 3 else 0.0
            ll_max = max(ll_max, dist)
            if dist > osc_tol or cauchy > osc_tol:
                ll_fail.append({"t": s.t, "distance": dist, "cauchy": cauchy})

    # (iii) discontinuities only at recorded jumps above threshold
    t_last = max(s.t for s in curve.samples)
    bnd = chain.ends[(chain.ends <= t_last) & (chain.ends < T)]
    kb = np.searchsorted(chain.ends, bnd)
    gaps = np.abs(discrete_trace(chain, bnd, "right") - discrete_trace(chain, bnd, "left"))
    allowed = (chain.shifts[kb] != 0) & (np.abs(chain.shifts[kb]) > thr)
    detected = gaps > osc_tol
    unexplained = detected & ~allowed
    max_cont = float(gaps[~allowed].max()) if np.any(~allowed) else 0.0
    disc = [{"t": float(t), "size": float(v)} for t, v in zip(bnd[detected], gaps[detected])]
    bad = [{"t": float(t), "size": float(v)} for t, v in zip(bnd[unexplained], gaps[unexplained])]

    passed = not (cons_fail or rc_fail or ll_fail or bad)
    return VerificationReport(
        name="cadlag_check",
        passed=passed,
        target=0.0,
        estimate=max(rc_max, ll_max, max_cont),
        tolerance=osc_tol,
        params={"osc_tol": osc_tol, "jump_threshold": thr, "n_levels": n_levels, "tol": curve.tol},
        details={
            "sample_consistency_failures": cons_fail,
            "right_continuity_failures": rc_fail,
            "left_limit_failures": ll_fail,
            "discontinuities": disc,
            "unexplained_discontinuities": bad,
            "max_sample_deviation": float(consistency.max()),
            "max_right_continuity_tail": rc_max,
            "max_left_limit_distance": ll_max,
            "max_nonjump_boundary_gap": max_cont,
            "boundaries_checked": int(bnd.size),
        },
        wall_time=_time.perf_counter() - t0,
    )


def _dense_trace(chain: LoewnerChain, t: float, gap: float, threshold: float, max_rounds: int = 16):
    """Depth-zero trace on [0, t], refined until consecutive points are closer than gap.

    Inside step k the trace is ``f_{s_k}(u_k + 2i sqrt(tau))`` and runs from
    ``gamma(s_k)`` to ``gamma(e_k-)``.  At an ordinary boundary e_k the two ends
    are joined along ``f_{e_k}([u_k, u_{k+1}])``, which is part of the hull
    boundary already drawn.  Pieces are split at recorded jumps above
    threshold.
    """
    if t <= 0:
        return [np.array([complex(chain.drives[0])])]
    k_last = int(chain.step_index(t))
    # items: (kind, k); "s" = growth inside step k, "a" = arc after step k
    items, breaks = [], []
    for k in range(k_last + 1):
        items.append(("s", k))
        if chain.ends[k] < min(t, chain.total_time) and k < k_last:
            if chain.shifts[k] != 0 and abs(chain.shifts[k]) > threshold:
                breaks.append(len(items))
            elif chain.drives[k + 1] != chain.drives[k]:
                items.append(("a", k))
    hi = np.minimum(chain.ends, t)
    fr = [np.linspace(0.0, 1.0, 5) for _ in items]
    pts_of = [None] * len(items)
    for _ in range(max_rounds):
        tt, ww = [], []
        for (kind, k), f in zip(items, fr):
            if kind == "s":
                tt.append(chain.starts[k] + f * (hi[k] - chain.starts[k]))
                ww.append(np.full(f.size, chain.drives[k], dtype=complex))
            else:
                tt.append(np.full(f.size, chain.ends[k]))
                ww.append((chain.drives[k] + f * (chain.drives[k + 1] - chain.drives[k])).astype(complex))
        pts, _ = inverse_map_many(chain, np.concatenate(tt), np.concatenate(ww), derivative=False)
        done = True
        pos = 0
        for i, f in enumerate(fr):
            p = pts[pos: pos + f.size]
            pos += f.size
            pts_of[i] = p
            big = np.abs(np.diff(p)) > gap
            if big.any() and np.diff(f).min() > 1e-12:
                done = False
                fr[i] = np.sort(np.concatenate([f, 0.5 * (f[:-1] + f[1:])[big]]))
        if done:
            break
    pieces, cur = [], []
    for i, p in enumerate(pts_of):
        if i in breaks:
            pieces.append(np.concatenate(cur))
            cur = []
        cur.append(p)
    pieces.append(np.concatenate(cur))
    return pieces


def _densify_segments(pieces, spacing):
    """Points along every polyline segment at most ``spacing`` apart."""
    out = []
    for p in pieces:
        if p.size == 1:
            out.append(p)
            continue
        a, b = p[:-1], p[1:]
        n = np.maximum(1, np.ceil(np.abs(b - a) / spacing).astype(int))
        owner = np.repeat(np.arange(a.size), n)
        frac = (np.arange(owner.size) - np.repeat(np.cumsum(n) - n, n)) / n[owner]
        out.append(np.concatenate([a[owner] + frac * (b - a)[owner], p[-1:]]))
    return np.concatenate(out)


def _collapse(chain: LoewnerChain, t: float, z: np.ndarray, owner: np.ndarray, n: int) -> np.ndarray:
    """``min_tau max_{z in P} |g_tau(z) - U|`` for every component P; U is the drive before or after tau."""
    w = z.astype(complex).copy()
    best = np.full(n, np.inf)
    for k in range(len(chain)):
        if chain.starts[k] >= t:
            break
        h = min(chain.durations[k], t - chain.starts[k])
        u = chain.drives[k]
        s = w - u
        w = u + sqrt_upper(s * s + 4.0 * h, s.real)
        u_next = chain.drives[k + 1] if k + 1 < len(chain) and t >= chain.ends[k] else u
        for uu in (u, u_next):
            mx = np.zeros(n)
            np.maximum.at(mx, owner, np.abs(w - uu))
            best = np.minimum(best, mx)
    return best


def generation_check(chain: LoewnerChain, curve: TraceCurve | None, t: float, resolution: float,
                     window=None, pad: float = 0.25, seal_tol: float | None = None) -> VerificationReport:
    """Compare the hull at time t with the region enclosed by the trace.

    The trace polyline (curve samples plus a depth-zero densification, broken
    at recorded jumps) blocks every grid node within ``resolution / 2``.  A
    flood fill from the top, left and right window edges through unblocked
    nodes gives the part of the grid connected to infinity.

    A piecewise-constant chain never swallows an open set: where the trace
    pinches off a pocket, the pocket stays attached through a channel far
    below grid scale.  An alive component cut off by the trace is therefore
    accepted as sealed when the flow confirms it: at some time before t its
    whole image lies within ``seal_tol`` (default one slit height,
    ``2 sqrt(max step)``) of the driving value.

    Failures: hull-boundary nodes farther than ``resolution`` from the trace,
    cut-off components that are not confirmed sealed, and swallowed nodes
    still connected to infinity; the last two only count nodes farther than
    ``resolution`` from the trace.
    """
    t0 = _time.perf_counter()
    thr = curve.jump_threshold if curve is not None else 0.0
    if seal_tol is None:
        seal_tol = 2.0 * math.sqrt(float(chain.durations.max())) if len(chain) else 0.0
    pieces = _dense_trace(chain, t, resolution / 4.0, thr)
    pts = _densify_segments(pieces, resolution / 8.0)
    if curve is not None:
        pts = np.concatenate([pts, [s.point for s in curve.all_samples() if s.t <= t]])
    if window is None:
        window = (pts.real.min() - pad, pts.real.max() + pad, 0.0, pts.imag.max() + pad)
    hg = hull_grid(chain, t, window, resolution)
    nodes = hg.points()
    tree = cKDTree(np.column_stack([pts.real, pts.imag]))
    dist, _ = tree.query(np.column_stack([nodes.real.ravel(), nodes.imag.ravel()]))
    dist = dist.reshape(nodes.shape)
    free = dist > resolution / 2.0 + resolution / 16.0
    lab, n_lab = label(free)  # 4-connectivity
    edge = np.concatenate([lab[-1, :], lab[:, 0], lab[:, -1]])
    outside = np.isin(lab, np.unique(edge[edge > 0])) & free
    sw = hg.swallowed
    far = dist > resolution

    # cut-off components of alive nodes, checked for sealing in the g-plane
    cut = free & ~outside & ~sw
    comp_ids = np.unique(lab[cut & far])
    pockets = []
    sealed = np.zeros_like(sw)
    if comp_ids.size:
        masks = [cut & (lab == c) for c in comp_ids]
        z = np.concatenate([nodes[m] for m in masks])
        owner = np.concatenate([np.full(int(m.sum()), i) for i, m in enumerate(masks)])
        coll = _collapse(chain, t, z, owner, comp_ids.size)
        for m, c in zip(masks, coll):
            ok = bool(c <= seal_tol)
            if ok:
                sealed |= m
            pockets.append({"nodes": int(m.sum()), "collapse": float(c), "sealed": ok,
                            "example": complex(nodes[m][0])})

    hull = sw | sealed
    alive = ~hull & free  # blocked nodes belong to the trace itself
    nb_alive = np.zeros_like(hull)
    nb_alive[1:, :] |= alive[:-1, :]
    nb_alive[:-1, :] |= alive[1:, :]
    nb_alive[:, 1:] |= alive[:, :-1]
    nb_alive[:, :-1] |= alive[:, 1:]
    boundary = hull & nb_alive
    fail_boundary = boundary & far
    fail_cut = cut & ~sealed & far
    fail_leak = sw & outside & far

    def locs(mask, limit=50):
        return [complex(z) for z in nodes[mask][:limit]]

    n_fail = int(fail_boundary.sum() + fail_cut.sum() + fail_leak.sum())
    return VerificationReport(
        name="generation_check",
        passed=n_fail == 0,
        target=0.0,
        estimate=float(n_fail),
        tolerance=0.0,
        params={"t": t, "resolution": resolution, "window": list(window), "seal_tol": seal_tol},
        details={
            "grid_shape": list(sw.shape),
            "swallowed_nodes": int(sw.sum()),
            "sealed_pocket_nodes": int(sealed.sum()),
            "pockets": pockets,
            "boundary_nodes": int(boundary.sum()),
            "max_boundary_distance": float(dist[boundary].max()) if boundary.any() else 0.0,
            "boundary_far_from_trace": locs(fail_boundary),
            "alive_cut_off": locs(fail_cut),
            "swallowed_reachable": locs(fail_leak),
            "trace_points": int(pts.size),
        },
        wall_time=_time.perf_counter() - t0,
    )
