"""Renewal with a growing maximal age.

Individuals age with unit speed, give birth at rate b(a) (no factor two
here and no intrinsic death), and die on reaching the ceiling a(t), which
grows from a(0) to a_inf.  As the ceiling saturates the semigroup becomes
homogeneous: its limit is the same dynamics with the constant ceiling
a_inf, whose stationary age profile is the target of the convergence
checks.

The grid covers [0, a_inf); the moving ceiling is realised as a per-step
active mask, so extension by zero beyond a(t) is just masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import Semigroup
from .measures import Grid, GridFunction, HybridMeasure

__all__ = [
    "MaxAgeSchedule",
    "MaxAgeSemigroup",
    "limit_semigroup",
    "limit_growth_exponent",
    "limit_profile",
    "duhamel_maxage",
    "picard_maxage_trace",
    "gronwall_check",
    "h0_distance",
    "h0_bound",
    "profile_convergence",
]


@dataclass(frozen=True)
class MaxAgeSchedule:
    """Ceiling trajectory t -> a(t), increasing from a0 to a_inf.

    The map t -> t - a(t) must be strictly increasing (the ceiling moves
    slower than the ageing speed), which the constructors validate on a
    probe lattice.
    """

    func: Callable
    a0: float
    a_inf: float
    label: str = "schedule"

    def __call__(self, t):
        return np.asarray(self.func(np.asarray(t, dtype=float)), dtype=float)

    def validate(self, t_max: float, n_probe: int = 2048) -> None:
        ts = np.linspace(0.0, t_max, n_probe)
        a = self(ts)
        if np.any(np.diff(a) < -1e-12):
            raise ValueError("ceiling schedule must be nondecreasing")
        if np.any(np.diff(ts - a) <= 0.0):
            raise ValueError("t - a(t) must be strictly increasing")
        if np.any(a > self.a_inf + 1e-12) or a[0] < self.a0 - 1e-12:
            raise ValueError("schedule must stay within [a0, a_inf]")

    @classmethod
    def saturating_exp(cls, a0: float, a_inf: float, speed: float) -> "MaxAgeSchedule":
        if speed * (a_inf - a0) >= 1.0:
            raise ValueError("schedule would outrun the ageing speed")
        return cls(lambda t: a_inf - (a_inf - a0) * np.exp(-speed * t), a0, a_inf,
                   label=f"saturating(speed={speed:g})")

    @classmethod
    def linear_then_flat(cls, a0: float, a_inf: float, speed: float) -> "MaxAgeSchedule":
        if not 0.0 < speed < 1.0:
            raise ValueError("linear schedule speed must be in (0, 1)")
        return cls(lambda t: np.minimum(a0 + speed * np.asarray(t, dtype=float), a_inf),
                   a0, a_inf, label=f"linear(speed={speed:g})")

    @classmethod
    def constant(cls, a_inf: float) -> "MaxAgeSchedule":
        return cls(lambda t: np.full_like(np.asarray(t, dtype=float), a_inf),
                   a_inf, a_inf, label="constant")


class MaxAgeSemigroup(Semigroup):
    """Discretised max-age semigroup on the fixed grid [0, a_inf)."""

    homogeneous = False

    def __init__(self, schedule: MaxAgeSchedule, b: Callable, b_lower: float,
                 b_upper: float, grid: Grid, dt: float | None = None):
        if dt is None:
            dt = grid.spacing
        if abs(dt - grid.spacing) > 1e-12:
            raise ValueError("max-age discretisation requires dt = spacing")
        if abs(grid.upper - schedule.a_inf) > 1e-9:
            raise ValueError("grid must cover [0, a_inf)")
        self.schedule = schedule
        self.b = b
        self.b_lower = float(b_lower)
        self.b_upper = float(b_upper)
        self.grid = grid
        self.dt = float(dt)
        mids = grid.midpoints()
        self._mids = mids
        self._b_shift = np.asarray(b(mids + 0.5 * dt), dtype=float)
        self._b0 = float(np.asarray(b(mids[0]), dtype=float))
        self._coef_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.homogeneous = schedule.label == "constant"

    def grid_at(self, t: float) -> Grid:
        return self.grid

    def _coefficients(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k not in self._coef_cache:
            ceil_mid = float(self.schedule((k + 0.5) * self.dt))
            ceil_end = float(self.schedule((k + 1.0) * self.dt))
            fertile = (self._mids + 0.5 * self.dt) < ceil_mid
            births = self.dt * self._b_shift * fertile * (1.0 + 0.5 * self._b0 * self.dt)
            survive_to = self._mids < ceil_end  # mask at destination ages
            self._coef_cache[k] = (births, survive_to)
        return self._coef_cache[k]

    def step_measure(self, k: int, weights: np.ndarray) -> np.ndarray:
        births, survive_to = self._coefficients(k)
        out = np.empty_like(weights)
        out[1:] = weights[:-1]
        out[0] = weights @ births
        out[1:] *= survive_to[1:]
        return out

    def step_function(self, k: int, values: np.ndarray) -> np.ndarray:
        births, survive_to = self._coefficients(k)
        out = births * values[0]
        out[:-1] += values[1:] * survive_to[1:]
        return out


def limit_semigroup(sg: MaxAgeSemigroup) -> MaxAgeSemigroup:
    """The homogeneous limit: same dynamics with the ceiling pinned at a_inf."""
    return MaxAgeSemigroup(MaxAgeSchedule.constant(sg.schedule.a_inf), sg.b,
                           sg.b_lower, sg.b_upper, sg.grid, sg.dt)


# --------------------------------------------------------------------------
# Limit eigenelements
# --------------------------------------------------------------------------
def limit_growth_exponent(b: Callable, a_inf: float, spacing: float = 1e-3) -> float:
    """Root of the max-age characteristic equation int_0^{a_inf} b(a) e^{-lam a} da = 1."""
    n = int(math.ceil(a_inf / spacing))
    edges = np.linspace(0.0, a_inf, n + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    bv = np.asarray(b(mids), dtype=float)
    width = edges[1] - edges[0]

    def f(lam):
        if abs(lam) < 1e-12:
            cells = np.full(n, width)
        else:
            cells = (np.exp(-lam * edges[:-1]) - np.exp(-lam * edges[1:])) / lam
        return float(np.sum(bv * cells)) - 1.0

    lo, hi = -1.0, 1.0
    for _ in range(80):
        if f(lo) > 0:
            break
        lo = 2 * lo - 1
    for _ in range(80):
        if f(hi) < 0:
            break
        hi = 2 * hi + 1
    return float(brentq(f, lo, hi, xtol=1e-14))


def limit_profile(b: Callable, a_inf: float, grid: Grid,
                  lam: float | None = None) -> HybridMeasure:
    """Stationary age profile of the limit semigroup: density prop. to e^{-lam a}."""
    if lam is None:
        lam = limit_growth_exponent(b, a_inf)
    edges = grid.edges()
    if abs(lam) < 1e-12:
        masses = np.full(grid.n_cells, grid.spacing)
    else:
        masses = (np.exp(-lam * edges[:-1]) - np.exp(-lam * edges[1:])) / lam
    return HybridMeasure(grid, masses / masses.sum())


# --------------------------------------------------------------------------
# Duhamel right action (backward boundary march)
# --------------------------------------------------------------------------
def _b_masked(sg: MaxAgeSemigroup, t: float, ages: np.ndarray) -> np.ndarray:
    ceil = float(sg.schedule(t))
    return np.asarray(sg.b(ages), dtype=float) * (ages < ceil)


def _trace_pieces(sg: MaxAgeSemigroup, f: GridFunction, s: float, t: float):
    """Source vector and Volterra kernel shared by the marching and Picard solvers.

    kernel[i, m] = b((m-i) dt) masked by the ceiling at time s + m dt.
    """
    dt = sg.dt
    n = int(round((t - s) / dt))
    if abs(s + n * dt - t) > 1e-9:
        raise ValueError("window must be on the time lattice")
    from .renewal import _edge_values
    fvals = _edge_values(f, n, dt)
    offs = dt * np.arange(n + 1)
    ceil_t = float(sg.schedule(t))
    source = np.where(offs[::-1] < ceil_t, fvals[::-1], 0.0)
    source[n] = f.boundary0
    times = s + offs
    ceilings = sg.schedule(times)
    b_off = np.asarray(sg.b(offs), dtype=float)
    i_idx = np.arange(n + 1)[:, None]
    m_idx = np.arange(n + 1)[None, :]
    lag = m_idx - i_idx
    kernel = np.where(lag >= 0, b_off[np.clip(lag, 0, n)], 0.0)
    kernel *= offs[np.clip(lag, 0, n)] < ceilings[None, :]
    kernel *= lag >= 0
    return n, source, kernel


def maxage_boundary_trace(sg: MaxAgeSemigroup, f: GridFunction, s: float,
                          t: float) -> np.ndarray:
    """G[i] = M[s + i dt, t] f(0), marched backward from G(t) = f(0).

    G solves G(u) = f(t-u) 1_{t-u < a(t)} + int_u^t b_v(v-u) G(v) dv with
    trapezoidal quadrature and the implicit endpoint solved per step.
    """
    dt = sg.dt
    n, source, kernel = _trace_pieces(sg, f, s, t)
    g = np.empty(n + 1)
    g[n] = f.boundary0
    for i in range(n - 1, -1, -1):
        row = kernel[i, i:]
        w = np.full(n + 1 - i, dt)
        w[0] = w[-1] = 0.5 * dt
        conv = float(row[1:] @ (w[1:] * g[i + 1:]))
        denom = 1.0 - 0.5 * dt * float(row[0])
        g[i] = (source[i] + conv) / denom
    return g


def duhamel_maxage(sg: MaxAgeSemigroup, f: GridFunction, s: float,
                   t: float) -> GridFunction:
    """Right action M[s,t] f on [0, a_s) via the backward boundary march."""
    dt = sg.dt
    n = int(round((t - s) / dt))
    if abs(s + n * dt - t) > 1e-9:
        raise ValueError("window must be on the time lattice")
    if n == 0:
        return f
    g = maxage_boundary_trace(sg, f, s, t)
    mids = sg.grid.midpoints()
    ext = np.concatenate([mids, mids[-1] + dt * np.arange(1, n + 1)])
    f_ext = np.concatenate([f.values, np.zeros(n)])
    ceil_t = float(sg.schedule(t))
    j = np.arange(sg.grid.n_cells)
    transport = f_ext[j + n] * (ext[j + n] < ceil_t)
    idx = j[:, None] + np.arange(n + 1)[None, :]
    times = s + dt * np.arange(n + 1)
    ceilings = sg.schedule(times)
    b_vals = np.asarray(sg.b(ext), dtype=float)[idx] * (ext[idx] < ceilings[None, :])
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    values = transport + (b_vals * g[None, :]) @ w
    out_of_domain = mids >= float(sg.schedule(s))
    values[out_of_domain] = 0.0
    return GridFunction(sg.grid, values, boundary0=float(g[0]))


def picard_maxage_trace(sg: MaxAgeSemigroup, f: GridFunction, s: float, t: float,
                        tol: float = 1e-12, max_iter: int = 400) -> np.ndarray:
    """Fixed-point oracle for the backward boundary trace (same quadrature)."""
    dt = sg.dt
    n, source, kernel = _trace_pieces(sg, f, s, t)
    weights = np.full((n + 1, n + 1), dt)
    for i in range(n + 1):
        weights[i, :i] = 0.0
        if i < n:
            weights[i, i] = 0.5 * dt
            weights[i, n] = 0.5 * dt
        else:
            weights[i, n] = 0.0
    g = source.copy()
    for _ in range(max_iter):
        g_new = source + (kernel * weights) @ g
        if np.max(np.abs(g_new - g)) < tol:
            return g_new
        g = g_new
    raise RuntimeError("max-age Picard iteration did not converge")


# --------------------------------------------------------------------------
# Checks
# --------------------------------------------------------------------------
def gronwall_check(sg: MaxAgeSemigroup, s: float, t: float, n_samples: int = 100,
                   seed: int = 0) -> dict:
    """sup norm growth bound: ||M[s,t] f|| <= e^{b_upper (t-s)} ||f||."""
    rng = np.random.default_rng(seed)
    bound = math.exp(sg.b_upper * (t - s))
    worst = -math.inf
    for _ in range(n_samples):
        f = rng.uniform(-1.0, 1.0, sg.grid.n_cells)
        f /= max(np.max(np.abs(f)), 1e-30)
        out = sg.apply_to_values(f, s, t)
        worst = max(worst, float(np.max(np.abs(out))))
    return {"max_sup": worst, "bound": bound, "passed": worst <= bound * (1 + 1e-9)}


def h0_bound(b_upper: float, r: float, gap: float) -> float:
    """Asymptotic-homogeneity envelope max(b e^{br}, (b e^{br})^2 r) * gap."""
    be = b_upper * math.exp(b_upper * r)
    return max(be, be * be * r) * gap


def h0_distance(sg: MaxAgeSemigroup, t: float, r: float) -> dict:
    """sup_x TV distance between delta_x M[t, t+r] and delta_x N[r].

    x ranges over the active grid [0, a_t); requires r >= a_inf so the
    envelope from the homogenisation argument applies.
    """
    if r < sg.schedule.a_inf - 1e-9:
        raise ValueError("need r >= a_inf")
    limit = limit_semigroup(sg)
    rows_m = _kernel_rows(sg, t, t + r)
    rows_n = _kernel_rows(limit, 0.0, r)
    active = sg.grid.midpoints() < float(sg.schedule(t))
    dist = np.abs(rows_m - rows_n).sum(axis=1)
    sup_dist = float(dist[active].max())
    gap = sg.schedule.a_inf - float(sg.schedule(t))
    bound = h0_bound(sg.b_upper, r, gap)
    return {"sup_distance": sup_dist, "bound": bound, "gap": gap,
            "passed": sup_dist <= bound * (1 + 1e-9) + 1e-12}


def _kernel_rows(sg: MaxAgeSemigroup, s: float, t: float) -> np.ndarray:
    rows = np.eye(sg.grid.n_cells)
    for k in range(sg.lattice_index(s), sg.lattice_index(t)):
        births, survive_to = sg._coefficients(k)
        newborn = rows @ births
        rows[:, 1:] = rows[:, :-1] * survive_to[1:]
        rows[:, 0] = newborn
    return rows


def profile_convergence(sg: MaxAgeSemigroup, s: float,
                        horizons: Sequence[float]) -> dict:
    """TV gap to the limit profile along a horizon sequence.

    Assembles the window coupling measure (uniform over [0, alpha] with
    alpha half the remaining ceiling gap), extracts h_s from mass ratios,
    and reports gap(t) = sup_x || delta_x M[s,t] / nu(m[s,t]) - h_s(x) gamma ||.
    Refuses when the remaining gap exceeds a_s / 2 (the smallness
    precondition of the homogenisation argument).
    """
    a_s = float(sg.schedule(s))
    delta = sg.schedule.a_inf - a_s
    if delta > a_s / 2 + 1e-12:
        return {"status": "s too small", "delta": delta, "a_s": a_s}
    alpha = delta / 2
    dt = sg.dt
    n_alpha = max(int(round(alpha / dt)), 1)
    nu_w = np.zeros(sg.grid.n_cells)
    nu_w[:n_alpha] = 1.0 / n_alpha
    nu = HybridMeasure(sg.grid, nu_w)

    gamma = limit_profile(sg.b, sg.schedule.a_inf, sg.grid)
    horizons = sorted(horizons)
    t_end = horizons[-1]
    h_vals = sg.mass_values(s, t_end)
    h_vals = h_vals / float(nu_w @ h_vals)

    rows = np.eye(sg.grid.n_cells)
    gaps = []
    hseq = []
    k0 = sg.lattice_index(s)
    targets = {sg.lattice_index(t): t for t in horizons}
    active = sg.grid.midpoints() < a_s
    for k in range(k0, sg.lattice_index(t_end)):
        births, survive_to = sg._coefficients(k)
        newborn = rows @ births
        rows[:, 1:] = rows[:, :-1] * survive_to[1:]
        rows[:, 0] = newborn
        if (k + 1) in targets:
            m = rows.sum(axis=1)
            nu_m = float(nu_w @ m)
            diff = rows / nu_m - h_vals[:, None] * gamma.weights[None, :]
            gap = float(np.abs(diff).sum(axis=1)[active].max())
            gaps.append(gap)
            hseq.append(targets[k + 1])
    strictly_decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    return {
        "status": "ok",
        "horizons": hseq,
        "gaps": gaps,
        "alpha": alpha,
        "delta": delta,
        "h_sup": float(h_vals.max()),
        "strictly_decreasing": strictly_decreasing,
        "final_gap": gaps[-1] if gaps else math.inf,
    }
