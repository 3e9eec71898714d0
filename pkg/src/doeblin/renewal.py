"""Homogeneous renewal semigroup for age-structured binary division.

The model: individuals of age a divide at rate b(a) into two newborns of
age zero.  The semigroup acts on functions through the Duhamel equation

    M_t f(a) = f(a+t) exp(-int_0^t b(a+u) du)
               + 2 int_0^t exp(-int_0^u b(a+.)) b(a+u) M_{t-u} f(0) du

and on measures through transport with survival plus a newborn influx.
The division rate is assumed to dominate a square-wave ("crenel") profile:
b >= b_lower on [a0 + k*p, a0 + k*p + l] for every k, with l in (p/2, p].
That lower bound drives the explicit spectral gap.

Discretisation: ages live on a uniform grid with dt equal to the spacing,
so transport is an exact one-cell shift.  The one-step operator uses the
exact path survival exp(-int b) and a within-step progeny factor that
makes the step exact for constant rates; the Volterra boundary marching
in :func:`duhamel_apply` is the reference solver for the right action.
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
    "DivisionRate",
    "RenewalSemigroup",
    "duhamel_apply",
    "picard_boundary_trace",
    "malthus_lambda",
    "stationary_profile",
    "harmonic_h",
    "spectral_gap_rho",
    "structural_checks",
    "h1_nu_construct",
    "default_a_max",
]


# --------------------------------------------------------------------------
# Division rates
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DivisionRate:
    """Age-dependent division rate with its crenel lower-bound parameters.

    ``func`` and ``integral`` are vectorised callables; ``integral`` is the
    exact cumulative int_0^a b, which keeps path survival factors exact.
    """

    func: Callable
    integral: Callable
    a0: float
    p: float
    l: float
    b_lower: float
    label: str = "rate"

    def __post_init__(self):
        if not (self.p / 2 < self.l <= self.p):
            raise ValueError("crenel width must satisfy p/2 < l <= p")
        if self.b_lower <= 0:
            raise ValueError("crenel lower bound must be positive")

    def __call__(self, a):
        return self.func(np.asarray(a, dtype=float))

    def cumulative(self, a):
        return self.integral(np.asarray(a, dtype=float))

    def sup_on(self, a: float, resolution: int = 4096) -> float:
        """Running supremum of b over [0, a]."""
        if a <= 0:
            return float(self(0.0))
        xs = np.linspace(0.0, a, resolution)
        return float(np.max(self(xs)))

    def node_values(self, a, h: float = 1e-9):
        """Mean of the one-sided limits, for quadrature nodes that may sit
        exactly on a jump of a piecewise rate (keeps the trapezoid rule
        second order across aligned discontinuities)."""
        a = np.asarray(a, dtype=float)
        return 0.5 * (self.func(np.maximum(a - h, 0.0)) + self.func(a + h))

    # ------------------------------------------------------------- builders
    @classmethod
    def constant(cls, value: float) -> "DivisionRate":
        if value <= 0:
            raise ValueError("constant rate must be positive")
        return cls(
            func=lambda a: np.full_like(np.asarray(a, dtype=float), value),
            integral=lambda a: value * np.asarray(a, dtype=float),
            a0=0.0, p=1.0, l=1.0, b_lower=value, label=f"constant({value:g})",
        )

    @classmethod
    def crenel(cls, a0: float, p: float, l: float, b_on: float,
               b_off: float = 0.0) -> "DivisionRate":
        """b = b_on on [a0 + k*p, a0 + k*p + l), b_off elsewhere (and on [0, a0))."""
        if b_on <= 0 or b_off < 0:
            raise ValueError("need b_on > 0 and b_off >= 0")

        def coverage(a):
            # total length of crenel support inside [0, a]
            a = np.asarray(a, dtype=float)
            rel = np.maximum(a - a0, 0.0)
            full = np.floor(rel / p)
            return full * l + np.minimum(rel - full * p, l)

        def func(a):
            a = np.asarray(a, dtype=float)
            rel = a - a0
            on = (rel >= 0) & ((rel % p) < l)
            return np.where(on, b_on, b_off)

        def integral(a):
            a = np.asarray(a, dtype=float)
            return b_off * a + (b_on - b_off) * coverage(a)

        return cls(func, integral, a0, p, l, b_on,
                   label=f"crenel(a0={a0:g},p={p:g},l={l:g},b={b_on:g})")

    @classmethod
    def from_table(cls, ages: Sequence[float], values: Sequence[float],
                   a0: float, p: float, l: float, b_lower: float) -> "DivisionRate":
        """Piecewise-constant rate from samples; constant beyond the last age."""
        ages = np.asarray(ages, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(values < 0):
            raise ValueError("tabulated rates must be nonnegative")
        edges = np.concatenate([ages, [math.inf]])
        cum = np.concatenate([[0.0], np.cumsum(values[:-1] * np.diff(ages))])

        def func(a):
            idx = np.clip(np.searchsorted(edges, np.asarray(a, dtype=float),
                                          side="right") - 1, 0, len(values) - 1)
            return values[idx]

        def integral(a):
            a = np.asarray(a, dtype=float)
            idx = np.clip(np.searchsorted(ages, a, side="right") - 1, 0, len(values) - 1)
            return cum[idx] + values[idx] * (a - ages[idx])

        return cls(func, integral, a0, p, l, b_lower, label="table")


def default_a_max(rate: DivisionRate) -> float:
    """Truncation point: whole periods past a0 covering the 12/b_lower scale."""
    return rate.a0 + rate.p * math.ceil((12.0 / rate.b_lower + rate.l) / rate.p)


def resolve_grid(rate: DivisionRate, spacing: float,
                 a_max: float | None = None, lam: float | None = None):
    """Age grid honouring the profile tail rule.

    Starts from :func:`default_a_max` and extends by whole crenel periods
    until the asymptotic profile keeps less than 1e-12 relative mass
    beyond the grid.  Returns (grid, lam, profile).
    """
    if lam is None:
        lam = malthus_lambda(rate)
    if a_max is None:
        a_max = default_a_max(rate)
    for _ in range(256):
        n = int(round(a_max / spacing))
        if abs(n * spacing - a_max) > 1e-9:
            raise ValueError("a_max must be a multiple of the spacing")
        grid = Grid(0.0, n * spacing, n)
        try:
            profile = stationary_profile(rate, lam, grid)
            return grid, lam, profile
        except RuntimeError:
            a_max += rate.p
    raise RuntimeError("could not satisfy the profile tail rule")


# --------------------------------------------------------------------------
# The semigroup
# --------------------------------------------------------------------------
class RenewalSemigroup(Semigroup):
    """Discretised renewal semigroup on [0, a_max) with dt = spacing.

    One step transports every cell up by one (exact shift, exact survival
    along the path), then deposits 2 * (division mass) * zeta into cell 0,
    where zeta = (1 + exp(b(0+) dt)) / 2 accounts for within-step progeny
    of the newborns.  For a constant rate the step reproduces the exact
    one-step mass flow, so the discrete growth exponent and asymptotic
    profile match the analytic ones to truncation accuracy.
    """

    homogeneous = True

    def __init__(self, rate: DivisionRate, grid: Grid, dt: float | None = None):
        if grid.lower != 0.0:
            raise ValueError("age grid must start at 0")
        if dt is None:
            dt = grid.spacing
        if abs(dt - grid.spacing) > 1e-12:
            raise ValueError("renewal discretisation requires dt = spacing")
        self.rate = rate
        self.grid = grid
        self.dt = float(dt)
        mids = grid.midpoints()
        # exact survival of the cohort starting at each midpoint over one step
        cum = rate.cumulative(np.append(mids, mids[-1] + dt))
        self.survival = np.exp(-(rate.cumulative(mids + dt) - cum[:-1]))
        b0 = float(rate(mids[0]))
        self.progeny_factor = 0.5 * (1.0 + math.exp(b0 * self.dt))
        self.birth_coef = 2.0 * (1.0 - self.survival) * self.progeny_factor
        self._boundary_traces: dict = {}

    def grid_at(self, t: float) -> Grid:
        return self.grid

    def step_measure(self, k: int, weights: np.ndarray) -> np.ndarray:
        out = np.empty_like(weights)
        out[1:] = weights[:-1] * self.survival[:-1]
        out[0] = weights @ self.birth_coef
        return out

    def step_function(self, k: int, values: np.ndarray) -> np.ndarray:
        out = self.birth_coef * values[0]
        out[:-1] += self.survival[:-1] * values[1:]
        return out

    def kernel_matrix(self, s: float, t: float) -> np.ndarray:
        w = np.eye(self.grid.n_cells)
        for k in range(self.lattice_index(s), self.lattice_index(t)):
            w = np.column_stack([w @ self.birth_coef,
                                 w[:, :-1] * self.survival[:-1]])
        return w

    def dirac(self, location: float, weight: float = 1.0) -> HybridMeasure:
        return HybridMeasure.dirac(self.grid, location, weight)


# --------------------------------------------------------------------------
# Duhamel / Volterra right action
# --------------------------------------------------------------------------
def _division_density(rate: DivisionRate, a: np.ndarray) -> np.ndarray:
    """Age-at-division density b(a) exp(-int_0^a b) at quadrature nodes."""
    return rate.node_values(a) * np.exp(-rate.cumulative(a))


def _edge_values(f: GridFunction, n: int, dt: float) -> np.ndarray:
    """f at the lattice edges k*dt, linearly interpolated between midpoint samples.

    Assumes dt equals the grid spacing; beyond the grid f is zero, and the
    origin reads the boundary sample.
    """
    padded = np.concatenate([f.values, np.zeros(max(n + 1 - f.grid.n_cells, 1))])
    vals = 0.5 * (padded[:n] + padded[1:n + 1])
    return np.concatenate([[f.boundary0], vals])


def boundary_trace(rate: DivisionRate, f: GridFunction, t: float,
                   dt: float, a_cap: float | None = None) -> np.ndarray:
    """March g(t) = M_t f(0) on the time lattice.

    g solves the scalar Volterra equation
    g(t) = f(t) exp(-int_0^t b) + 2 int_0^t Phi(u) g(t-u) du
    with Phi the age-at-division density; quadrature is trapezoidal, with
    the implicit endpoint term solved for directly at every step.  With
    ``a_cap`` set, individuals die on reaching that age (the truncated
    model used by the grid semigroup); without it the rate is untruncated.
    """
    n = int(round(t / dt))
    if abs(t - n * dt) > 1e-9:
        raise ValueError("horizon must be a multiple of dt")
    tk = dt * np.arange(n + 1)
    phi = _division_density(rate, tk)
    source = _edge_values(f, n, dt) * np.exp(-rate.cumulative(tk))
    if a_cap is not None:
        alive = tk < a_cap
        phi = phi * alive
        source = source * alive
    denom = 1.0 - dt * phi[0]
    if denom <= 0.0:
        raise ValueError("dt too large for the boundary march: dt * b(0) >= 1")
    g = np.empty(n + 1)
    g[0] = source[0]
    for k in range(1, n + 1):
        conv = dt * float(phi[1:k] @ g[k - 1:0:-1]) if k > 1 else 0.0
        conv += 0.5 * dt * phi[k] * g[0]
        g[k] = (source[k] + 2.0 * conv) / denom
    return g


def duhamel_apply(sg: RenewalSemigroup, f: GridFunction, t: float) -> GridFunction:
    """Right action M_t f via the boundary Volterra march and reconstruction.

    Solves the same truncated model as the grid semigroup: ages are capped
    at the grid's upper edge.
    """
    rate, grid, dt = sg.rate, sg.grid, sg.dt
    n = int(round(t / dt))
    if abs(t - n * dt) > 1e-9:
        raise ValueError("t must be on the time lattice")
    if n == 0:
        return f
    a_cap = grid.upper
    g = boundary_trace(rate, f, t, dt, a_cap=a_cap)

    mids = grid.midpoints()
    # extended midpoint lattice covering a + u for u in [0, t]
    ext = np.concatenate([mids, mids[-1] + dt * np.arange(1, n + 1)])
    f_ext = np.concatenate([f.values, np.zeros(n)])
    cum_ext = rate.cumulative(ext)
    b_ext = rate(ext) * (ext < a_cap)

    j = np.arange(grid.n_cells)
    transport = f_ext[j + n] * np.exp(-(cum_ext[j + n] - cum_ext[j]))
    # trapezoid over u of exp(-int_0^u b(a+.)) b(a+u) g(t-u)
    idx = j[:, None] + np.arange(n + 1)[None, :]
    integrand = (np.exp(-(cum_ext[idx] - cum_ext[j, None]))
                 * b_ext[idx] * g[::-1][None, :])
    weights = np.full(n + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    values = transport + 2.0 * integrand @ weights
    return GridFunction(grid, values, boundary0=float(g[n]))


def picard_boundary_trace(rate: DivisionRate, f: GridFunction, t: float, dt: float,
                          tol: float = 1e-13, max_iter: int = 400) -> np.ndarray:
    """Slow fixed-point oracle for the boundary trace (same lattice and quadrature)."""
    n = int(round(t / dt))
    tk = dt * np.arange(n + 1)
    phi = _division_density(rate, tk)
    source = _edge_values(f, n, dt) * np.exp(-rate.cumulative(tk))
    g = source.copy()
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    for _ in range(max_iter):
        conv = np.array([
            (phi[:k + 1] * g[k::-1]) @ _trap_weights(k, dt) for k in range(n + 1)
        ])
        g_new = source + 2.0 * conv
        if np.max(np.abs(g_new - g)) < tol:
            return g_new
        g = g_new
    raise RuntimeError("Picard iteration did not converge")


def _trap_weights(k: int, dt: float) -> np.ndarray:
    w = np.full(k + 1, dt)
    if k == 0:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * dt
    return w


# --------------------------------------------------------------------------
# Eigen-elements
# --------------------------------------------------------------------------
def _integration_lattice(rate: DivisionRate, a_max: float, spacing: float,
                         tail: float = 40.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells on [0, a_ext] with midpoints and exact cumulative integrals.

    The lattice extends past a_max until the eigen integrands are below
    double-precision resolution, so the explicit formulas are quadratures
    of the untruncated model.
    """
    decay = rate.b_lower * rate.l / rate.p
    a_ext = a_max + rate.p * math.ceil(tail / decay / rate.p)
    n = int(round(a_ext / spacing))
    edges = spacing * np.arange(n + 1)
    mids = edges[:-1] + 0.5 * spacing
    return edges, mids, rate.cumulative(edges)


def _char_function(rate: DivisionRate, lam: float, edges, mids, cum_edges) -> float:
    """F(lam) = 2 int b exp(-int (lam + b)) - 1, cellwise-exact quadrature."""
    spacing = edges[1] - edges[0]
    b = rate(mids)
    expo = lam + b
    safe = np.where(np.abs(expo) > 1e-12, expo, 1.0)
    with np.errstate(over="ignore"):
        head = np.exp(np.minimum(-(lam * edges[:-1] + cum_edges[:-1]), 700.0))
        cell = np.where(np.abs(expo) > 1e-12,
                        -np.expm1(-np.clip(safe * spacing, -700.0, 700.0)) / safe,
                        spacing)
        total = float(np.sum(2.0 * b * head * cell))
    return total - 1.0


def malthus_lambda(rate: DivisionRate, a_max: float | None = None,
                   spacing: float = 1.0 / 256) -> float:
    """Growth exponent: root of the division characteristic equation.

    2 int_0^inf b(a) exp(-int_0^a (lam + b)) da = 1, solved by bracketed
    root finding (the left side is strictly decreasing in lam).
    """
    if a_max is None:
        a_max = default_a_max(rate)
    edges, mids, cum = _integration_lattice(rate, a_max, spacing)
    f = lambda lam: _char_function(rate, lam, edges, mids, cum)
    lo = -rate.sup_on(a_max)
    hi = 2.0 * rate.sup_on(a_max) + 1.0
    for _ in range(60):
        if f(lo) > 0:
            break
        lo = 2 * lo - 1.0
    for _ in range(60):
        if f(hi) < 0:
            break
        hi = 2 * hi + 1.0
    lam = float(brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16))
    if abs(f(lam)) > 1e-10:
        raise RuntimeError("characteristic equation residual too large; "
                           "increase a_max or refine the lattice")
    return lam


def stationary_profile(rate: DivisionRate, lam: float, grid: Grid) -> HybridMeasure:
    """Asymptotic age profile, density proportional to exp(-int_0^a (lam + b)).

    Cell masses are exact integrals of the closed-form density, and the
    relative mass beyond the grid must be below 1e-12 (truncation rule).
    """
    spacing = grid.spacing
    edges, mids, cum = _integration_lattice(rate, grid.upper, spacing)
    b = rate(mids)
    expo = lam + b
    safe = np.where(np.abs(expo) > 1e-12, expo, 1.0)
    head = np.exp(-(lam * edges[:-1] + cum[:-1]))
    cell = np.where(np.abs(expo) > 1e-12, -np.expm1(-safe * spacing) / safe, spacing)
    masses = head * cell
    n = grid.n_cells
    tail = float(masses[n:].sum())
    total = float(masses.sum())
    if tail > 1e-12 * total:
        raise RuntimeError(
            f"profile tail mass {tail/total:.2e} beyond a_max exceeds 1e-12; "
            "enlarge the grid")
    return HybridMeasure(grid, masses[:n] / total)


def harmonic_h(rate: DivisionRate, lam: float, grid: Grid,
               gamma: HybridMeasure | None = None) -> GridFunction:
    """Reproductive value h(a) = 2 h(0) int_a^inf b(a') exp(-int_a^a' (lam+b)) da'.

    Scaled so that the asymptotic profile integrates it to one.
    """
    spacing = grid.spacing
    edges, mids, cum = _integration_lattice(rate, grid.upper, spacing)
    b = rate(mids)
    expo = lam + b
    safe = np.where(np.abs(expo) > 1e-12, expo, 1.0)
    head = np.exp(-(lam * edges[:-1] + cum[:-1]))
    cell = np.where(np.abs(expo) > 1e-12, -np.expm1(-safe * spacing) / safe, spacing)
    full = b * head * cell
    suffix = np.concatenate([np.cumsum(full[::-1])[::-1], [0.0]])  # S at cell edges
    # S at midpoints: half-cell contribution plus the suffix from the next edge
    half = np.where(np.abs(expo) > 1e-12, -np.expm1(-safe * spacing / 2) / safe,
                    spacing / 2)
    cum_mid = rate.cumulative(mids)
    s_mid = b * np.exp(-(lam * mids + cum_mid)) * half + suffix[1:]
    h_mid = 2.0 * np.exp(lam * mids + cum_mid) * s_mid
    h0 = 2.0 * suffix[0]
    n = grid.n_cells
    h = GridFunction(grid, h_mid[:n], boundary0=h0)
    if gamma is not None:
        scale = gamma.pair(h)
        h = GridFunction(grid, h.values / scale, boundary0=h.boundary0 / scale)
    return h


# --------------------------------------------------------------------------
# Explicit spectral gap and structural checks
# --------------------------------------------------------------------------
def spectral_gap_rho(rate: DivisionRate, alpha_window: float | None = None) -> float:
    """Explicit convergence rate for a crenel-dominating division rate.

    With t* = 2 a0 + p + l and the window choice alpha = l - p/2:
    rho = -log(1 - alpha b (1 - e^{-b(2l-p-alpha)}) e^{-2 int_0^{t*} b - 2 t* sup_[0,t*] b}) / t*.
    """
    a0, p, l, bl = rate.a0, rate.p, rate.l, rate.b_lower
    if alpha_window is None:
        alpha_window = l - p / 2
    if 2 * l - p - alpha_window <= 0:
        raise ValueError("window too wide: need alpha < 2l - p (and l > p/2)")
    t_star = 2 * a0 + p + l
    int_b = float(rate.cumulative(t_star))
    b_sup = rate.sup_on(t_star)
    inner = (alpha_window * bl * (1.0 - math.exp(-bl * (2 * l - p - alpha_window)))
             * math.exp(-2.0 * int_b - 2.0 * t_star * b_sup))
    if not 0.0 < inner < 1.0:
        raise RuntimeError("degenerate gap argument; check the crenel parameters")
    return -math.log1p(-inner) / t_star


def mass_at_ages(rate: DivisionRate, ages: np.ndarray, t: float, dt: float,
                 g: np.ndarray | None = None) -> np.ndarray:
    """m_t(a) for arbitrary ages via the Duhamel formula with the analytic rate.

    No age truncation enters: the boundary trace only involves b on [0, t]
    and the reconstruction evaluates b beyond any grid directly.
    """
    n = int(round(t / dt))
    if g is None:
        g = boundary_trace(rate, _one_function(dt, t), t, dt)
    ages = np.asarray(ages, dtype=float)
    u = dt * np.arange(n + 1)
    pts = ages[:, None] + u[None, :]
    cum = rate.cumulative(pts)
    b = rate.node_values(pts)
    surv = np.exp(-(cum - cum[:, :1]))
    transport = surv[:, -1]
    weights = _trap_weights(n, dt)
    return transport + 2.0 * (surv * b * g[::-1][None, :]) @ weights


def _one_function(dt: float, t: float) -> GridFunction:
    # covers [0, t] inclusive so the transported constant reads 1, not 0
    n = max(int(round(t / dt)), 1) + 1
    grid = Grid(0.0, n * dt, n)
    return GridFunction.ones(grid)


def structural_checks(rate: DivisionRate, t_max: float, dt: float,
                      t_step: float = 0.25, ages: Sequence[float] | None = None,
                      rel_tol: float = 1e-8) -> dict:
    """Monotone mass, the factor-2 boundary bound, and the envelope 2 e^{2 t sup b}.

    Checked on a declared (t, age) lattice with the untruncated analytic
    rate; margins are worst signed slacks (nonnegative passes).
    """
    if ages is None:
        ages = np.arange(0.0, 8.0 + 1e-9, 0.25)
    ages = np.asarray(ages, dtype=float)
    n_total = int(round(t_max / dt))
    g = boundary_trace(rate, _one_function(dt, t_max), t_max, dt)
    stride = max(int(round(t_step / dt)), 1)
    ts = [k * dt for k in range(0, n_total + 1, stride)]
    prev = None
    worst_mono = math.inf
    worst_factor2 = math.inf
    worst_envelope = math.inf
    for t in ts:
        k = int(round(t / dt))
        m = mass_at_ages(rate, ages, t, dt, g=g[: k + 1])
        m0 = mass_at_ages(rate, np.array([0.0]), t, dt, g=g[: k + 1])[0]
        if prev is not None:
            worst_mono = min(worst_mono, float(np.min((m - prev) / np.maximum(prev, 1.0))))
        prev = m
        worst_factor2 = min(worst_factor2, float(np.min((2.0 * m0 - m) / m0)))
        envelope = 2.0 * math.exp(2.0 * rate.sup_on(max(t, 1e-9)) * t)
        worst_envelope = min(worst_envelope,
                             (envelope - float(np.max(np.append(m, m0)))) / envelope)
    report = {
        "monotone_mass": (worst_mono >= -rel_tol, worst_mono),
        "factor_two_bound": (worst_factor2 >= -rel_tol, worst_factor2),
        "mass_envelope": (worst_envelope >= -rel_tol, worst_envelope),
    }
    report["passed"] = all(ok for ok, _ in (report["monotone_mass"],
                                            report["factor_two_bound"],
                                            report["mass_envelope"]))
    return report


# --------------------------------------------------------------------------
# Coupling measure construction
# --------------------------------------------------------------------------
def h1_nu_construct(sg: RenewalSemigroup, alpha_window: float,
                    t0: float | None = None) -> tuple[HybridMeasure, float, float]:
    """Coupling measure nu(f) = int_0^alpha M_u f(0) du / int_0^alpha m_u(0) du
    and the analytic Doeblin constant at the two-division horizon t0.

    Returns (nu, c, t0).  The horizon defaults to a0 + n*p + l with n the
    smallest integer making n*p > a0.
    """
    rate = sg.rate
    a0, p, l, bl = rate.a0, rate.p, rate.l, rate.b_lower
    if not 0.0 < alpha_window < 2 * l - p:
        raise ValueError("window must lie in (0, 2l - p)")
    if t0 is None:
        n_per = math.floor(a0 / p) + 1
        t0 = a0 + n_per * p + l
    dt = sg.dt
    n_alpha = int(round(alpha_window / dt))
    if abs(n_alpha * dt - alpha_window) > 1e-9:
        raise ValueError("alpha window must be on the time lattice")

    # time-average of delta_0 M_u over u in [0, alpha], trapezoid weights
    w = np.zeros(sg.grid.n_cells)
    w[0] = 1.0
    acc = 0.5 * w.copy()
    for k in range(1, n_alpha + 1):
        w = sg.step_measure(k - 1, w)
        acc += (0.5 if k == n_alpha else 1.0) * w
    nu = HybridMeasure(sg.grid, acc / acc.sum())

    # analytic constant: 4 (int_0^alpha m_u(0) du / sup m_t0) * b (1 - e^{-b(2l-p-alpha)}) e^{-2 int_0^t0 b}
    g = boundary_trace(rate, _one_function(dt, t0), t0, dt)
    n0 = int(round(alpha_window / dt))
    int_m0 = float(_trap_weights(n0, dt) @ g[: n0 + 1])
    ages = np.arange(0.0, float(sg.grid.upper) + 1e-9, dt * 4)
    sup_m = float(np.max(mass_at_ages(rate, ages, t0, dt, g=g)))
    c = (4.0 * int_m0 / sup_m * bl
         * (1.0 - math.exp(-bl * (2 * l - p - alpha_window)))
         * math.exp(-2.0 * float(rate.cumulative(t0))))
    return nu, c, t0
