"""Coupling machinery for positive two-parameter semigroups.

A semigroup here is a family M[s,t] of positive linear operators acting
rightward on grid functions and leftward on hybrid measures, discretised
on a time lattice of step dt.  This module provides:

* the conservative auxiliary semigroup P(t)[s,u]f = M[s,u](f m[u,t]) / m[s,t],
* Doeblin-type coupling certificates: subdivision times with constants
  (c_i, d_i), measures nu_i, and envelope constants alpha, beta,
* the coupling capacity -sum log(1 - c_i d_i) accumulated by a certificate,
* numerical checks of the contraction and mass-ratio inequalities the
  certificates guarantee, and of the resulting ergodic gap bound,
* extraction of the harmonic profile h_s as the limit of mass ratios.

Concrete models (renewal, diffusion, periodic, max-age) subclass
:class:`Semigroup`; random matrix chains for property testing live in
:class:`MatrixChainSemigroup`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import Grid, GridFunction, HybridMeasure

__all__ = [
    "Semigroup",
    "MatrixChainSemigroup",
    "CouplingCertificate",
    "HarmonicProfile",
    "AdmissibilityReport",
    "ContractionReport",
    "StrongPositivityError",
    "CapacityNotDiverged",
    "mass",
    "auxiliary_apply",
    "doeblin_constant",
    "mass_domination",
    "brute_force_certificate",
    "certify_admissible",
    "capacity",
    "contraction_check",
    "harmonic_extract",
    "ergodic_gap",
    "rate_fit",
]


class StrongPositivityError(RuntimeError):
    """The mass function hit a nonpositive value: broken kernel or grid too coarse."""


class CapacityNotDiverged(RuntimeError):
    """Mass ratios failed the Cauchy test at the requested horizon."""


# --------------------------------------------------------------------------
# Semigroup interface
# --------------------------------------------------------------------------
class Semigroup:
    """Positive operator family on a time lattice of step ``dt``.

    Subclasses implement the one-step actions; composition over [s,t] is
    the product of the steps, so the semigroup property holds exactly
    (up to float rounding) and left/right actions are exact transposes.
    """

    dt: float
    homogeneous: bool = False

    # -- lattice helpers ----------------------------------------------------
    def lattice_index(self, t: float) -> int:
        k = round(t / self.dt)
        if abs(t - k * self.dt) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not on the dt={self.dt} lattice")
        return k

    def grid_at(self, t: float) -> Grid:
        raise NotImplementedError

    # -- one-step actions, to be provided by subclasses ---------------------
    def step_measure(self, k: int, weights: np.ndarray) -> np.ndarray:
        """Left action of the step from lattice time k to k+1 on cell masses."""
        raise NotImplementedError

    def step_function(self, k: int, values: np.ndarray) -> np.ndarray:
        """Right action (transpose of step_measure) on midpoint samples."""
        raise NotImplementedError

    # -- composed actions ----------------------------------------------------
    def apply_to_weights(self, weights: np.ndarray, s: float, t: float) -> np.ndarray:
        w = np.asarray(weights, dtype=float)
        for k in range(self.lattice_index(s), self.lattice_index(t)):
            w = self.step_measure(k, w)
        return w

    def apply_to_measure(self, mu: HybridMeasure, s: float, t: float) -> HybridMeasure:
        w = self.apply_to_weights(mu.project_atoms().weights, s, t)
        return HybridMeasure(self.grid_at(t), w)

    def apply_to_values(self, values: np.ndarray, s: float, t: float) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        for k in range(self.lattice_index(t) - 1, self.lattice_index(s) - 1, -1):
            v = self.step_function(k, v)
        return v

    def apply_to_function(self, f: GridFunction, s: float, t: float) -> GridFunction:
        v = self.apply_to_values(f.values, s, t)
        return GridFunction(self.grid_at(s), v)

    def mass_values(self, s: float, t: float) -> np.ndarray:
        return self.apply_to_values(np.ones(self.grid_at(t).n_cells), s, t)

    def kernel_matrix(self, s: float, t: float) -> np.ndarray:
        """Rows: the measure delta_x M[s,t] by cell, for x at every source midpoint."""
        w = np.eye(self.grid_at(s).n_cells)
        for k in range(self.lattice_index(s), self.lattice_index(t)):
            w = np.apply_along_axis(lambda row: self.step_measure(k, row), 1, w)
        return w


class MatrixChainSemigroup(Semigroup):
    """Semigroup given by explicit per-step positive matrices (testing workhorse).

    ``matrices[k]`` maps lattice time k to k+1; entry (i, j) is the mass
    sent from cell i to cell j.  A single matrix repeated gives a
    homogeneous semigroup.
    """

    def __init__(self, matrices: Sequence[np.ndarray], dt: float = 1.0,
                 grid: Grid | None = None, homogeneous: bool | None = None):
        mats = [np.asarray(m, dtype=float) for m in matrices]
        n = mats[0].shape[0]
        for m in mats:
            if m.shape != (n, n):
                raise ValueError("all step matrices must share one square shape")
            if np.any(m < 0):
                raise ValueError("step matrices must be nonnegative")
        self.matrices = mats
        self.dt = dt
        self._grid = grid if grid is not None else Grid(0.0, float(n), n)
        self.homogeneous = (len(mats) == 1) if homogeneous is None else homogeneous

    def grid_at(self, t: float) -> Grid:
        return self._grid

    def _mat(self, k: int) -> np.ndarray:
        if self.homogeneous:
            return self.matrices[k % len(self.matrices)]
        if k >= len(self.matrices):
            raise IndexError(f"chain has no step matrix for lattice time {k}")
        return self.matrices[k]

    def step_measure(self, k: int, weights: np.ndarray) -> np.ndarray:
        return weights @ self._mat(k)

    def step_function(self, k: int, values: np.ndarray) -> np.ndarray:
        return self._mat(k) @ values

    def kernel_matrix(self, s: float, t: float) -> np.ndarray:
        out = np.eye(self._grid.n_cells)
        for k in range(self.lattice_index(s), self.lattice_index(t)):
            out = out @ self._mat(k)
        return out


# --------------------------------------------------------------------------
# Mass function and auxiliary semigroup
# --------------------------------------------------------------------------
def mass(sg: Semigroup, s: float, t: float) -> GridFunction:
    """The mass function m[s,t] = M[s,t] 1, strictly positive by assumption."""
    values = sg.mass_values(s, t)
    if np.any(values <= 0.0):
        raise StrongPositivityError(
            f"mass function m[{s},{t}] has nonpositive values (min {values.min():g})")
    f = GridFunction(sg.grid_at(s), values)
    return f


def auxiliary_apply(sg: Semigroup, t_final: float, s: float, u: float,
                    f: GridFunction) -> GridFunction:
    """Apply the conservative auxiliary operator P(t_final)[s,u] to f.

    P(t)[s,u] f = M[s,u](f * m[u,t]) / m[s,t]; applying it to the constant 1
    returns 1 exactly up to rounding.
    """
    if not (s <= u <= t_final):
        raise ValueError("need s <= u <= t_final")
    m_ut = sg.mass_values(u, t_final)
    m_st = sg.apply_to_values(f.values * m_ut, s, u)
    denom = sg.apply_to_values(m_ut, s, u)
    if np.any(denom <= 0.0):
        raise StrongPositivityError("auxiliary semigroup hit a nonpositive mass")
    return GridFunction(sg.grid_at(s), m_st / denom)


def auxiliary_measure_at_tfinal(sg: Semigroup, s: float, tau: float,
                                weights: np.ndarray) -> np.ndarray:
    """Left action mu P(tau)[s,tau]: each point mass is pushed and renormalised."""
    rows = sg.kernel_matrix(s, tau)
    m = rows.sum(axis=1)
    if np.any(m <= 0.0):
        raise StrongPositivityError("kernel rows with nonpositive mass")
    return (np.asarray(weights, dtype=float) / m) @ rows


# --------------------------------------------------------------------------
# Coupling certificates
# --------------------------------------------------------------------------
@dataclass
class CouplingCertificate:
    """Subdivision times with coupling constants and envelope constants.

    ``times`` holds t_0 <= ... <= t_N; pair i (1-based) spans
    (times[i-1], times[i]) with lower-bound constant c[i-1], mass constant
    d[i-1] and coupling measure nus[i-1] on the grid at times[i].
    """

    times: list
    c: np.ndarray
    d: np.ndarray
    nus: list[HybridMeasure]
    alpha: float
    beta: float
    nu: HybridMeasure
    s0: float = None  # type: ignore[assignment]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        n = len(self.times) - 1
        if not (len(self.c) == len(self.d) == len(self.nus) == n):
            raise ValueError("certificate needs one (c, d, nu) triple per interval")
        if self.s0 is None:
            self.s0 = self.times[0]

    @property
    def n_pairs(self) -> int:
        return len(self.c)

    def contraction_factor(self) -> float:
        return float(np.prod(1.0 - self.c * self.d))

    def to_jsonable(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "c": [float(x) for x in self.c],
            "d": [float(x) for x in self.d],
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "s0": float(self.s0),
            "capacity": capacity(self),
            "meta": self.meta,
        }


def capacity(cert: CouplingCertificate | None) -> float:
    """Coupling capacity -sum_i log(1 - c_i d_i); empty certificate scores 0."""
    if cert is None or cert.n_pairs == 0:
        return 0.0
    cd = cert.c * cert.d
    if np.any(cd >= 1.0):
        return math.inf
    return float(-np.sum(np.log1p(-cd)))


def doeblin_constant(sg: Semigroup, s: float, t: float, nu: HybridMeasure) -> float:
    """Largest c with delta_x M[s,t] >= c * m[s,t](x) * nu cellwise for all grid x.

    Returns 0 when no positive constant works; atoms of nu are projected
    to their cells so domination is a finite vector inequality.
    """
    rows = sg.kernel_matrix(s, t)
    m = rows.sum(axis=1)
    if np.any(m <= 0.0):
        raise StrongPositivityError("kernel rows with nonpositive mass")
    nu_w = nu.project_atoms().weights
    support = nu_w > 0.0
    if not np.any(support):
        return 0.0
    ratios = rows[:, support] / (m[:, None] * nu_w[None, support])
    return float(max(0.0, min(1.0, ratios.min())))


def mass_domination(sg: Semigroup, nu: HybridMeasure, s: float,
                    horizon_times: Sequence[float]) -> float:
    """Largest d with d * sup m[s,tau] <= nu(m[s,tau]) over the tested horizons."""
    if len(horizon_times) == 0:
        raise ValueError("need at least one test horizon")
    nu_w = nu.project_atoms().weights
    best = math.inf
    for tau in horizon_times:
        if tau < s:
            raise ValueError("horizons must be >= s")
        m = sg.mass_values(s, tau)
        best = min(best, float(nu_w @ m) / float(m.max()))
    return float(min(1.0, best))


def brute_force_certificate(sg: Semigroup, times: Sequence[float],
                            nus: Sequence[HybridMeasure], nu: HybridMeasure,
                            horizons: Sequence[float]) -> CouplingCertificate:
    """Certificate with all constants computed by direct grid minimisation."""
    times = list(times)
    n = len(times) - 1
    c = np.zeros(n)
    d = np.zeros(n)
    for i in range(1, n + 1):
        c[i - 1] = doeblin_constant(sg, times[i - 1], times[i], nus[i - 1])
        d[i - 1] = mass_domination(sg, nus[i - 1], times[i], horizons)
    # Tightest valid envelopes over the tested horizons, floored at 1.
    t_last = times[-1]
    alpha = 1.0
    beta = 1.0
    nu_last = nus[-1].project_atoms().weights
    nu_w = nu.project_atoms().weights
    for tau in horizons:
        m_last = sg.mass_values(t_last, tau)
        m_s = sg.mass_values(times[0], tau)
        alpha = max(alpha, float(m_last.max()) / (c[-1] * float(nu_last @ m_last)))
        beta = max(beta, float(m_s.max()) / float(nu_w @ m_s))
    return CouplingCertificate(times, c, d, list(nus), alpha, beta, nu)


@dataclass
class AdmissibilityReport:
    conditions: dict
    passed: bool

    def worst_margin(self) -> float:
        return min(m for _, m in self.conditions.values())


def certify_admissible(sg: Semigroup, cert: CouplingCertificate, s: float, t: float,
                       horizons: Sequence[float] | None = None,
                       slack: float = 1e-9) -> AdmissibilityReport:
    """Check the four coupling inequalities on the grid over sampled horizons.

    The quantifier over all tau >= t_N is discharged analytically by the
    concrete models; numerically this is a sampled-tau regression guard.
    Margins are signed slacks, nonnegative means the condition holds.
    """
    times = cert.times
    if not (s <= times[0] and times[-1] <= t):
        raise ValueError("certificate times must lie within [s, t]")
    if horizons is None:
        horizons = [t]
    conditions: dict[str, tuple[bool, float]] = {}

    # envelope constants must be at least 1
    conditions["alpha_beta_at_least_one"] = (
        cert.alpha >= 1.0 and cert.beta >= 1.0,
        min(cert.alpha - 1.0, cert.beta - 1.0),
    )

    # lower bound of each step kernel by c_i * m * nu_i
    worst = math.inf
    for i in range(1, cert.n_pairs + 1):
        rows = sg.kernel_matrix(times[i - 1], times[i])
        m = rows.sum(axis=1)
        nu_w = cert.nus[i - 1].project_atoms().weights
        margin = rows - cert.c[i - 1] * m[:, None] * nu_w[None, :]
        worst = min(worst, float(margin.min() / max(m.max(), 1.0)))
    conditions["doeblin_lower_bound"] = (worst >= -slack, worst)

    # mass domination for the interior measures
    worst = math.inf
    for i in range(1, cert.n_pairs):
        nu_w = cert.nus[i - 1].project_atoms().weights
        for tau in horizons:
            m = sg.mass_values(times[i], tau)
            worst = min(worst, (float(nu_w @ m) - cert.d[i - 1] * float(m.max()))
                        / float(m.max()))
    conditions["mass_domination"] = (worst >= -slack, 0.0 if math.isinf(worst) else worst)

    # envelope at the last subdivision time
    worst = math.inf
    nu_last = cert.nus[-1].project_atoms().weights
    for tau in horizons:
        m = sg.mass_values(times[-1], tau)
        worst = min(worst, (cert.alpha * cert.c[-1] * float(nu_last @ m) - float(m.max()))
                    / float(m.max()))
    conditions["alpha_envelope"] = (worst >= -slack, worst)

    # envelope from the initial time
    worst = math.inf
    nu_w = cert.nu.project_atoms().weights
    for tau in horizons:
        m = sg.mass_values(times[0], tau)
        worst = min(worst, (cert.beta * float(nu_w @ m) - float(m.max())) / float(m.max()))
    conditions["beta_envelope"] = (worst >= -slack, worst)

    passed = all(ok for ok, _ in conditions.values())
    return AdmissibilityReport(conditions, passed)


# --------------------------------------------------------------------------
# Contraction and mass-ratio checks
# --------------------------------------------------------------------------
@dataclass
class ContractionReport:
    lhs_auxiliary: float
    rhs_auxiliary: float
    lhs_normalized: float
    rhs_normalized: float
    mass_ratio_lower: float
    alpha_inverse: float
    passed: bool


def contraction_check(sg: Semigroup, cert: CouplingCertificate,
                      mu: HybridMeasure, mu_tilde: HybridMeasure, tau: float,
                      tol: float = 1e-6) -> ContractionReport:
    """Check the two coupling contraction inequalities and the mass-ratio bound.

    The auxiliary-semigroup contraction compares measures of equal total
    mass (probabilities in the test suites); the normalized-image bound
    applies to any nonzero nonnegative pair.
    """
    if tau < cert.times[-1]:
        raise ValueError("tau must be >= the last subdivision time")
    factor = cert.contraction_factor()
    s = cert.times[0]

    w = mu.project_atoms().weights
    w_t = mu_tilde.project_atoms().weights

    # auxiliary semigroup at its own final time
    push = auxiliary_measure_at_tfinal(sg, s, tau, w)
    push_t = auxiliary_measure_at_tfinal(sg, s, tau, w_t)
    lhs_aux = float(np.abs(push - push_t).sum())
    rhs_aux = factor * float(np.abs(w - w_t).sum())

    # normalized images of the original semigroup
    if mu.mass() <= 0 or mu_tilde.mass() <= 0:
        raise ValueError("normalized-image check needs nonzero nonnegative measures")
    m_s = sg.mass_values(s, tau)
    a = sg.apply_to_weights(w, s, tau)
    b = sg.apply_to_weights(w_t, s, tau)
    lhs_norm = float(np.abs(a / (w @ m_s) - b / (w_t @ m_s)).sum())
    rhs_norm = 2.0 * factor

    # nondegenerate mass ratio at the last subdivision time
    t_last = cert.times[-1]
    m_tail = sg.mass_values(t_last, tau)
    mu_at_last = sg.apply_to_weights(w, s, t_last)
    ratio = float((mu_at_last @ m_tail) / (mu_at_last.sum() * m_tail.max()))

    passed = (lhs_aux <= rhs_aux * (1.0 + tol) + 1e-15
              and lhs_norm <= rhs_norm * (1.0 + tol)
              and ratio >= (1.0 / cert.alpha) * (1.0 - tol))
    return ContractionReport(lhs_aux, rhs_aux, lhs_norm, rhs_norm,
                             ratio, 1.0 / cert.alpha, passed)


# --------------------------------------------------------------------------
# Harmonic profile and ergodic gap
# --------------------------------------------------------------------------
@dataclass
class HarmonicProfile:
    s: float
    h: GridFunction
    nu: HybridMeasure
    horizon: float
    increments: list


def harmonic_extract(sg: Semigroup, s: float, nu: HybridMeasure, horizon: float,
                     step: float | None = None, tol: float = 1e-7,
                     beta: float | None = None) -> HarmonicProfile:
    """Extract h_s as the limit of m[s,tau] / nu(m[s,tau]) over growing tau.

    Raises :class:`CapacityNotDiverged` when the ratios are not Cauchy at
    the requested horizon.
    """
    if step is None:
        step = sg.dt
    nu_w = nu.project_atoms().weights
    n_steps = int(round((horizon - s) / step))
    if n_steps < 2:
        raise ValueError("horizon too close to s for a Cauchy check")
    prev = None
    increments = []
    ratio = None
    for k in range(1, n_steps + 1):
        tau = s + k * step
        m = sg.mass_values(s, tau)
        denom = float(nu_w @ m)
        if denom <= 0.0:
            raise StrongPositivityError("nu(m) nonpositive in harmonic extraction")
        ratio = m / denom
        if prev is not None:
            increments.append(float(np.max(np.abs(ratio - prev))))
        prev = ratio
    if increments[-1] >= tol:
        raise CapacityNotDiverged(
            f"mass ratios not Cauchy at horizon {horizon}: last increment "
            f"{increments[-1]:.3e} >= tol {tol:.1e}")
    h = GridFunction(sg.grid_at(s), ratio)
    if beta is not None and float(ratio.max()) > beta * (1.0 + 1e-9):
        raise RuntimeError("harmonic profile exceeds its beta envelope")
    return HarmonicProfile(s, h, nu, horizon, increments)


def ergodic_gap(sg: Semigroup, s: float, t: float, mu: HybridMeasure,
                cert: CouplingCertificate, h: HarmonicProfile,
                gamma_ref: HybridMeasure, s0: float | None = None) -> dict:
    """Both sides of the quantitative ergodicity bound at horizon t.

    Uses the sharp constant 8(2+alpha)|mu|(h_s) once the capacity exceeds
    log(4 alpha), and the all-times constant 2(2+alpha) beta ||mu||_TV
    otherwise.
    """
    if s0 is None:
        s0 = cert.s0
    nu_w = cert.nu.project_atoms().weights
    m_st = sg.mass_values(s, t)
    nu_m = float(nu_w @ m_st)

    mu_push = sg.apply_to_weights(mu.project_atoms().weights, s, t)
    ref_push = sg.apply_to_weights(gamma_ref.project_atoms().weights, s0, t)
    ref_mass = float(ref_push.sum())
    mu_h = mu.pair(h.h)
    lhs_vec = mu_push - mu_h * nu_m * ref_push / ref_mass
    lhs = float(np.abs(lhs_vec).sum())

    cap = capacity(cert)
    plus, minus = mu.jordan()
    abs_mu_h = plus.pair(h.h) + minus.pair(h.h)
    if cap >= math.log(4.0 * cert.alpha):
        rhs = 8.0 * (2.0 + cert.alpha) * abs_mu_h * nu_m * math.exp(-cap)
        bound = "sharp"
    else:
        rhs = 2.0 * (2.0 + cert.alpha) * cert.beta * mu.tv_norm() * nu_m * math.exp(-cap)
        bound = "all_times"
    return {"lhs": lhs, "rhs": rhs, "capacity": cap, "bound": bound,
            "passed": lhs <= rhs * (1.0 + 1e-6)}


# --------------------------------------------------------------------------
# Rate fitting
# --------------------------------------------------------------------------
@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_used: int
    dropped: int


def rate_fit(times: Sequence[float], errors: Sequence[float],
             drop_fraction: float = 0.2) -> RateFit:
    """Least-squares slope of log(error) against time.

    The first ``drop_fraction`` of the samples is discarded as transient;
    nonpositive errors are dropped with a warning counter in the result.
    """
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(times) < 5:
        raise ValueError("need at least 5 samples to fit a rate")
    keep = errors > 0.0
    dropped_nonpos = int(np.sum(~keep))
    times, errors = times[keep], errors[keep]
    start = int(math.floor(drop_fraction * len(times)))
    times, errors = times[start:], errors[start:]
    if len(times) < 2:
        raise ValueError("not enough positive samples after transient drop")
    y = np.log(errors)
    coeffs, res, _, _ = np.linalg.lstsq(
        np.column_stack([times, np.ones_like(times)]), y, rcond=None)
    residual = float(np.sqrt(res[0] / len(times))) if len(res) else 0.0
    return RateFit(float(coeffs[0]), float(coeffs[1]), residual, len(times), dropped_nonpos)
