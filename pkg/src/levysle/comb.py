"""A cadlag curve on [0, 2] whose image closure is a comb space.

On [0, 1) the curve runs along the base ``[0, 1) x {0}``.  On [1, 2) the
level-n intervals are read off the base-4 digits of ``t - 1``: ``I_{n,k}``
collects the t whose first n - 1 digits lie in {0, 2} and whose n-th digit is
1 or 3, and on it the curve climbs tooth ``x = 1/n`` with slope ``2**n``.
Points of [1, 2) in no interval have all digits in {0, 2}; there the curve
sits on the tooth ``x = 0`` at the height given by the limit of the left
endpoints of the next intervals (a Cantor-function value).

All arithmetic is exact (:class:`fractions.Fraction`).
"""

from __future__ import annotations

import math
import time as _time
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .reports import VerificationReport

__all__ = [
    "NeedsDeeperLevel",
    "CombInterval",
    "CombPoint",
    "MAX_LEVEL",
    "comb_R",
    "locate",
    "comb_xi",
    "comb_xi_left",
    "first_hit_time",
    "distance_to_D",
    "comb_verify",
]

MAX_LEVEL = 20  # resource bound for comb_R: 2**n intervals


class NeedsDeeperLevel(RuntimeError):
    """The evaluation needs a deeper level than allowed."""


class CombInterval(NamedTuple):
    n: int
    k: int            # 1-based index within level n
    t_start: Fraction
    length: Fraction  # 4**-n

    @property
    def t_end(self) -> Fraction:
        return self.t_start + self.length


class CombPoint(NamedTuple):
    x: Fraction
    y: Fraction

    def as_float(self) -> tuple[float, float]:
        return float(self.x), float(self.y)


def comb_R(n: int, max_level: int = MAX_LEVEL) -> list[CombInterval]:
    """The 2**n level-n intervals, sorted increasingly."""
    if n < 1:
        raise ValueError("level must be at least 1")
    if n > max_level:
        raise NeedsDeeperLevel(f"level {n} exceeds the resource bound {max_level}")
    length = Fraction(1, 4 ** n)
    out = []
    for k in range(2 ** n):
        # k = binary digits (e_1 .. e_{n-1}, e_n); digit d_i = 2 e_i for i < n, d_n = 1 + 2 e_n
        j = 0
        for i in range(1, n):
            e = (k >> (n - i)) & 1
            j = 4 * j + 2 * e
        j = 4 * j + 1 + 2 * (k & 1)
        out.append(CombInterval(n, k + 1, 1 + Fraction(j, 4 ** n), length))
    return out


def _as_fraction(t) -> Fraction:
    return t if isinstance(t, Fraction) else Fraction(t)


def locate(t, max_level: int = 64):
    """Level-n interval containing t, or None on the limit set.

    Returns ``(n, k, t_start)`` or ``(None, cantor_height)``.  The digit
    expansion of a rational is eventually periodic, so the descent either
    meets a digit 1 or 3 or detects a repeating tail of {0, 2} digits.
    """
    t = _as_fraction(t)
    if not 1 <= t < 2:
        raise ValueError("locate needs t in [1, 2)")
    r = t - 1
    seen = {}
    height = Fraction(0)
    index = 0
    start = Fraction(1)
    digits = []
    n = 0
    while True:
        n += 1
        if n > max_level:
            raise NeedsDeeperLevel(f"no decision within {max_level} levels at t={t}")
        if r in seen:
            # periodic tail of {0, 2} digits: sum the geometric series exactly
            p0 = seen[r]
            period = digits[p0:]
            L = len(period)
            block = sum(Fraction(d // 2, 2 ** (i + 1)) for i, d in enumerate(period))
            prefix = sum(Fraction(d // 2, 2 ** (i + 1)) for i, d in enumerate(digits[:p0]))
            return None, prefix + block / 2 ** p0 / (1 - Fraction(1, 2 ** L))
        seen[r] = len(digits)
        r4 = 4 * r
        d = int(r4)
        r = r4 - d
        if d in (1, 3):
            k0 = 2 * index + (d - 1) // 2
            start = start + Fraction(d, 4 ** n)
            return n, k0 + 1, start
        digits.append(d)
        index = 2 * index + d // 2
        start = start + Fraction(d, 4 ** n)
        height += Fraction(d // 2, 2 ** n)
        if r == 0:
            return None, height


def comb_xi(t, max_level: int = 64) -> CombPoint:
    """Exact value of the curve at t in [0, 2]."""
    t = _as_fraction(t)
    if not 0 <= t <= 2:
        raise ValueError("t must lie in [0, 2]")
    if t < 1:
        return CombPoint(t, Fraction(0))
    if t == 2:
        return CombPoint(Fraction(0), Fraction(0))
    loc = locate(t, max_level)
    if loc[0] is None:
        return CombPoint(Fraction(0), loc[1])
    n, k, start = loc
    return CombPoint(Fraction(1, n), Fraction(k - 1, 2 ** n) + (t - start) * 2 ** n)


def comb_xi_left(t, depth: int = 64) -> CombPoint:
    """``xi(t - 4**-depth)``, a proxy for the left limit used in reports."""
    t = _as_fraction(t)
    if t <= 0:
        raise ValueError("left limit needs t > 0")
    return comb_xi(t - Fraction(1, 4 ** depth))


def first_hit_time(n: int, y) -> Fraction:
    """``inf{s : (1/n, y) in xi[0, s]}`` for y in [0, 1)."""
    y = _as_fraction(y)
    if not 0 <= y < 1:
        raise ValueError("y must lie in [0, 1)")
    k = int(y * 2 ** n) + 1
    iv = comb_R(n)[k - 1]
    return iv.t_start + (y - Fraction(k - 1, 2 ** n)) / 2 ** n


def distance_to_D(x: float, y: float) -> float:
    """Euclidean distance from (x, y) to the comb ``({0} u {1/n}) x [0, 1]`` plus the base segment."""
    dy = max(0.0, y - 1.0, -y)
    base = math.hypot(max(0.0, x - 1.0, -x), y)
    if x <= 0:
        tooth_dx = -x
    else:
        m = 1.0 / x
        cands = [abs(x)] + [abs(x - 1.0 / j) for j in (math.floor(m), math.ceil(m)) if j >= 1]
        tooth_dx = min(cands)
    return min(base, math.hypot(tooth_dx, dy))


def _structured_times(N: int) -> list[Fraction]:
    """Times whose images cover the base and teeth 1..N at spacing 2**-N."""
    ts = [Fraction(j, 2 ** N) for j in range(2 ** N)]
    for n in range(1, N + 1):
        for iv in comb_R(n):
            step = Fraction(1, 2 ** (N + n))
            ts.extend(iv.t_start + j * step for j in range(2 ** (N - n)))
    ts.append(Fraction(2))
    return sorted(set(ts))


def comb_verify(level_budget: int = 4, sample_density: float = 4096.0, seed: int = 0,
                n_cadlag: int = 100, connectivity_times=None) -> VerificationReport:
    """Finite-resolution checks of the comb curve at resolution ``2**-N``.

    (i) density: grid points of D with x >= 1/N lie within 2**-N of a sample;
    (ii) containment: every sample lies within 2**-N of D;
    (iii) connectivity of ``xi[0, t]`` samples at epsilon ``4 * 2**-N``;
    (iv) right-continuity and left limits at random dyadic times.
    """
    if level_budget < 3:
        raise ValueError("level budget must be at least 3")
    t0 = _time.perf_counter()
    N = level_budget
    res = 2.0 ** -N
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_random = int(sample_density * 2)
    grid_bits = 2 * N + 8
    rand_t = sorted({Fraction(int(v), 2 ** grid_bits) for v in rng.integers(0, 2 * 2 ** grid_bits + 1, n_random)})
    times = sorted(set(_structured_times(N)) | set(rand_t))
    pts = np.array([comb_xi(t).as_float() for t in times])
    tarr = np.array([float(t) for t in times])
    tree = cKDTree(pts)

    # (i) density over D's grid restricted to x >= 1/N
    ys = np.arange(0, 2 ** N + 1) * res
    targets = [(1.0 / n, y) for n in range(1, N + 1) for y in ys]
    targets += [(x, 0.0) for x in np.arange(0, 2 ** N + 1) * res if x >= 1.0 / N]
    targets = np.array(targets)
    dist, _ = tree.query(targets)
    density_fail = targets[dist > res + 1e-15]
    density_ok = density_fail.size == 0

    # (ii) containment
    dD = np.array([distance_to_D(x, y) for x, y in pts])
    contain_ok = bool(np.all(dD <= res))

    # (iii) connectivity of xi[0, t]
    eps = 4 * res
    conn_times = connectivity_times or [0.5, 1.0, 1.3, 1.5, 1.8, 2.0]
    conn = {}
    for ct in conn_times:
        sel = tarr <= ct
        sub = pts[sel]
        pairs = cKDTree(sub).query_pairs(eps, output_type="ndarray")
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(sub.shape[0],) * 2) \
            if len(pairs) else coo_matrix((sub.shape[0],) * 2)
        ncomp, _ = connected_components(g, directed=False)
        conn[str(ct)] = {"samples": int(sub.shape[0]), "components": int(ncomp)}
    conn_ok = all(v["components"] == 1 for v in conn.values())

    # (iv) cadlag spot checks at random dyadic times in (0, 2)
    depth = 2 ** (N + 2)  # x = 1/j decays slowly near the limit set, so go deep
    cad = []
    cad_ok = True
    for v in rng.integers(1, 2 ** grid_bits * 2, n_cadlag):
        t = Fraction(int(v), 2 ** grid_bits)
        here = np.array(comb_xi(t).as_float())
        right = [np.array(comb_xi(t + Fraction(1, 2 ** m)).as_float()) for m in range(depth - 4, depth + 1)]
        left = [np.array(comb_xi(t - Fraction(1, 2 ** m)).as_float()) for m in range(depth - 4, depth + 1)]
        r_err = max(float(np.hypot(*(p - here))) for p in right)
        l_spread = max(float(np.hypot(*(p - left[-1]))) for p in left)
        ok = r_err <= res and l_spread <= res
        cad_ok &= ok
        cad.append({"t": str(t), "right_error": r_err, "left_cauchy_spread": l_spread, "ok": ok})

    jump_at_1 = {"value": comb_xi(1).as_float(), "left_limit": comb_xi_left(1).as_float()}
    passed = density_ok and contain_ok and conn_ok and cad_ok
    return VerificationReport(
        name="comb_verify", passed=bool(passed), target=res, n_samples=len(times), seed=seed,
        params={"level_budget": N, "sample_density": sample_density, "epsilon": eps, "cadlag_depth": depth},
        details={
            "density": {"ok": density_ok, "n_targets": int(targets.shape[0]),
                        "max_distance": float(dist.max()), "failures": density_fail.tolist()},
            "containment": {"ok": contain_ok, "max_distance": float(dD.max())},
            "connectivity": {"ok": conn_ok, "by_time": conn},
            "cadlag": {"ok": bool(cad_ok), "checks": cad},
            "t_equals_1": jump_at_1,
        },
        wall_time=_time.perf_counter() - t0,
    )
