"""Experiment runners: wire configs to the model modules, execute the
verification suites, and emit CSV artifacts plus a pass/fail report.

Every runner takes a validated config dict and an output directory and
returns a report dict with named checks.  Outputs are deterministic for a
fixed config and seed: floats are serialised with repr and all randomness
flows from numpy generators seeded by the config.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import branching as br
from . import core, diffusion, maxage, periodic, renewal
from .measures import Grid, GridFunction, HybridMeasure

__all__ = ["ConfigError", "validate_config", "run_experiment", "compare_reports",
           "EXPERIMENTS"]


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the offending path."""


# --------------------------------------------------------------------------
# Config validation
# --------------------------------------------------------------------------
_TOP_KEYS = {"experiment", "seed", "params", "tolerances", "label"}

_PARAM_KEYS = {
    "renewal": {"b", "spacing", "a_max", "horizon", "fit_start", "fit_end",
                "sample_step", "expected_lambda", "lambda_tol", "closed_form_tol",
                "structural_t_max", "decay_bound", "coarse_spacing", "slope_range"},
    "diffusion": {"n_cells", "scales", "sigma0", "r0", "tau", "horizon",
                  "variance_convention", "mu_cell", "sigma_onoff"},
    "periodic": {"b_time", "period", "spacing", "a_max", "n_periods",
                 "lambda_tol", "slope_range", "monotone_check"},
    "maxage": {"a0", "a_inf", "schedule_speed", "b0", "b_amplitude", "n_cells",
               "gronwall_t", "gronwall_samples", "h0_times", "h0_r", "start",
               "horizons", "gap_floor"},
    "branching": {"b", "x0", "t", "n_runs", "ks_n", "ks_rate", "many_to_one"},
    "verify-core": {"n_trials", "max_cells", "gap_horizon", "gap_cells"},
}

_B_KEYS = {"kind", "value", "a0", "p", "l", "b_on", "b_off"}


def _check_keys(d: dict, allowed: set, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key {path}{k!r}")


def validate_config(config: dict) -> dict:
    """Reject unknown keys and missing essentials; returns the config."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(config, _TOP_KEYS, "")
    exp = config.get("experiment")
    if exp not in _PARAM_KEYS:
        raise ConfigError(f"experiment must be one of {sorted(_PARAM_KEYS)}, got {exp!r}")
    seed = config.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    params = config.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping")
    _check_keys(params, set(_PARAM_KEYS[exp]), "params.")
    if "b" in params:
        if not isinstance(params["b"], dict):
            raise ConfigError("params.b must be a mapping")
        _check_keys(params["b"], _B_KEYS, "params.b.")
    if exp == "branching":
        n_runs = params.get("n_runs", 0)
        if not isinstance(n_runs, int) or n_runs < 1:
            raise ConfigError("params.n_runs must be a positive integer")
    return config


def _rate_from_config(spec: dict) -> renewal.DivisionRate:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return renewal.DivisionRate.constant(float(spec.get("value", 1.0)))
    if kind == "crenel":
        return renewal.DivisionRate.crenel(
            float(spec["a0"]), float(spec["p"]), float(spec["l"]),
            float(spec["b_on"]), float(spec.get("b_off", 0.0)))
    raise ConfigError(f"unknown rate kind {kind!r}")


# --------------------------------------------------------------------------
# Report plumbing
# --------------------------------------------------------------------------
def _check(name: str, passed, value: float, bound: float | None = None) -> dict:
    out = {"name": name, "passed": bool(passed), "value": float(value)}
    if bound is not None:
        out["bound"] = float(bound)
    return out


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (int, float, np.floating))
                             else str(x) for x in row])


def _finish(experiment: str, config: dict, checks: list, files: list,
            started: float, extra: dict | None = None) -> dict:
    report = {
        "experiment": experiment,
        "config": config,
        "checks": checks,
        "files": sorted(str(f) for f in files),
        "passed": all(c["passed"] for c in checks),
        "wall_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        report["data"] = extra
    return report


# --------------------------------------------------------------------------
# Renewal
# --------------------------------------------------------------------------
def run_renewal(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    rate = _rate_from_config(p.get("b", {"kind": "constant", "value": 1.0}))
    spacing = float(p.get("spacing", 1.0 / 128))
    horizon = float(p.get("horizon", 8.0))
    fit_start = float(p.get("fit_start", 2.0))
    fit_end = float(p.get("fit_end", horizon))
    sample_step = float(p.get("sample_step", 0.25))

    grid, lam, gamma = renewal.resolve_grid(rate, spacing,
                                            a_max=p.get("a_max"))
    sg = renewal.RenewalSemigroup(rate, grid)
    h = renewal.harmonic_h(rate, lam, grid, gamma)
    checks = []

    residual = abs(renewal._char_function(
        rate, lam, *renewal._integration_lattice(rate, grid.upper, spacing)))
    checks.append(_check("malthus_residual", residual < 1e-10, residual, 1e-10))
    if "expected_lambda" in p:
        tol = float(p.get("lambda_tol", 1e-8))
        checks.append(_check("malthus_matches_reference",
                             abs(lam - p["expected_lambda"]) <= tol,
                             abs(lam - p["expected_lambda"]), tol))

    # closed forms for a constant rate: gamma density (lam+b) e^{-(lam+b)a}, h = 1
    if rate.label.startswith("constant"):
        tol = float(p.get("closed_form_tol", 2e-3))
        b0 = float(rate(0.0))
        mids = grid.midpoints()
        dens = gamma.weights / grid.spacing
        gamma_dev = float(np.max(np.abs(dens - (lam + b0) * np.exp(-(lam + b0) * mids))))
        h_dev = max(float(np.max(np.abs(h.values - 1.0))), abs(h.boundary0 - 1.0))
        checks.append(_check("gamma_closed_form_sup", gamma_dev <= tol, gamma_dev, tol))
        checks.append(_check("h_constant_sup", h_dev <= tol, h_dev, tol))

    # eigen residuals through the chain at t = 1 (interior band for h)
    t_eig = 1.0
    push = sg.apply_to_weights(gamma.weights, 0.0, t_eig)
    gam_res = float(np.abs(push * math.exp(-lam * t_eig) - gamma.weights).sum())
    tol_eig = 20.0 * (sg.dt + grid.spacing)
    checks.append(_check("gamma_eigen_residual", gam_res <= tol_eig, gam_res, tol_eig))
    hv = sg.apply_to_values(h.values, 0.0, t_eig) * math.exp(-lam * t_eig)
    interior = grid.midpoints() <= grid.upper - t_eig - 6.0 / rate.b_lower
    h_res = float(np.max(np.abs((hv - h.values))[interior]))
    checks.append(_check("h_eigen_residual", h_res <= tol_eig, h_res, tol_eig))

    # decay of the normalised point-mass orbit
    w = np.zeros(grid.n_cells)
    w[0] = 1.0
    stride = max(int(round(sample_step / sg.dt)), 1)
    n_steps = int(round(horizon / sg.dt))
    ts, errs = [0.0], [float(np.abs(w - h.boundary0 * gamma.weights).sum())]
    for k in range(1, n_steps + 1):
        w = sg.step_measure(k - 1, w)
        if k % stride == 0:
            t = k * sg.dt
            ts.append(t)
            errs.append(float(np.abs(math.exp(-lam * t) * w
                                     - h.boundary0 * gamma.weights).sum()))
    ts = np.array(ts)
    errs = np.array(errs)
    window = (ts >= fit_start) & (ts <= fit_end)
    fit = core.rate_fit(ts[window], errs[window])
    if "slope_range" in p:
        lo, hi = p["slope_range"]
        checks.append(_check("decay_slope_low", fit.slope >= lo, fit.slope, lo))
        checks.append(_check("decay_slope_high", fit.slope <= hi, fit.slope, hi))

    # crenel rate bound, constant fitted at the two-division horizon
    rho = renewal.spectral_gap_rho(rate)
    if bool(p.get("decay_bound", True)):
        n_per = math.floor(rate.a0 / rate.p) + 1
        t0 = rate.a0 + n_per * rate.p + rate.l
        k0 = int(np.searchsorted(ts, t0 - 1e-9))
        c_fit = errs[k0] * math.exp(rho * ts[k0])
        bound_series = c_fit * np.exp(-rho * ts)
        viol = float(np.max(errs[k0:] - bound_series[k0:] * (1 + 1e-9)))
        checks.append(_check("decay_rate_bound", viol <= 0.0, viol, 0.0))
    else:
        bound_series = np.exp(fit.intercept + fit.slope * ts)

    _write_csv(outdir / "decay.csv", ["t", "tv_error", "bound"],
               zip(ts, errs, bound_series))
    _write_csv(outdir / "eigen.csv", ["a", "gamma_density", "h"],
               zip(grid.midpoints(), gamma.weights / grid.spacing, h.values))

    # structural lattice checks with the untruncated rate
    t_struct = float(p.get("structural_t_max", min(horizon, 8.0)))
    struct = renewal.structural_checks(rate, t_struct, sg.dt)
    for name in ("monotone_mass", "factor_two_bound", "mass_envelope"):
        ok, margin = struct[name]
        checks.append(_check(f"structural_{name}", ok, margin, 0.0))

    # analytic coupling constant versus the grid minimisation, coarse replica
    coarse = float(p.get("coarse_spacing", 1.0 / 32))
    cg = Grid(0.0, grid.upper, int(round(grid.upper / coarse)))
    sgc = renewal.RenewalSemigroup(rate, cg)
    alpha_w = rate.l - rate.p / 2
    nu, c_analytic, t0 = renewal.h1_nu_construct(sgc, alpha_w)
    c_grid = core.doeblin_constant(sgc, 0.0, _snap(t0, sgc.dt), nu)
    checks.append(_check("doeblin_constant_dominates_analytic",
                         c_grid >= c_analytic * (1 - 1e-6), c_grid, c_analytic))

    extra = {"lambda": lam, "rho": rho, "slope": fit.slope, "a_max": grid.upper,
             "doeblin_c_grid": c_grid, "doeblin_c_analytic": c_analytic}
    return _finish("renewal", config, checks,
                   [outdir / "decay.csv", outdir / "eigen.csv"], started, extra)


def _snap(t: float, dt: float) -> float:
    return round(t / dt) * dt


# --------------------------------------------------------------------------
# Core verification
# --------------------------------------------------------------------------
def _random_chain(rng: np.random.Generator, max_cells: int = 20):
    n = int(rng.integers(2, max_cells + 1))
    n_steps = int(rng.integers(1, 4))
    extra = 2   # horizon steps past the last subdivision time
    mats = [rng.uniform(0.05, 1.0, (n, n)) * math.exp(rng.normal(0.0, 0.5))
            for _ in range(n_steps + extra)]
    return core.MatrixChainSemigroup(mats, dt=1.0), n, n_steps, extra


def _random_probability(rng: np.random.Generator, grid: Grid) -> HybridMeasure:
    w = rng.uniform(0.0, 1.0, grid.n_cells)
    return HybridMeasure(grid, w / w.sum())


def run_verify_core(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    n_trials = int(p.get("n_trials", 200))
    max_cells = int(p.get("max_cells", 20))
    seed = int(config.get("seed", 0))

    worst = {"auxiliary": 0.0, "normalized": 0.0, "mass_ratio": 0.0,
             "conservativity": 0.0}
    failures = 0
    for trial in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
        sg, n, n_steps, extra = _random_chain(rng, max_cells)
        grid = sg.grid_at(0.0)
        times = list(range(n_steps + 1))
        horizons = [float(n_steps + k) for k in range(extra + 1)]
        nus = [_random_probability(rng, grid) for _ in range(n_steps)]
        nu = _random_probability(rng, grid)
        cert = core.brute_force_certificate(sg, times, nus, nu, horizons)
        mu = _random_probability(rng, grid)
        mu_t = _random_probability(rng, grid)
        ok_trial = True
        for tau in horizons:
            rep = core.contraction_check(sg, cert, mu, mu_t, tau)
            worst["auxiliary"] = max(worst["auxiliary"],
                                     rep.lhs_auxiliary - rep.rhs_auxiliary)
            worst["normalized"] = max(worst["normalized"],
                                      rep.lhs_normalized - rep.rhs_normalized)
            worst["mass_ratio"] = max(worst["mass_ratio"],
                                      rep.alpha_inverse - rep.mass_ratio_lower)
            ok_trial = ok_trial and rep.passed
        f = GridFunction.ones(grid)
        for u in range(n_steps + 1):
            out = core.auxiliary_apply(sg, float(n_steps), 0.0, float(u), f)
            worst["conservativity"] = max(worst["conservativity"],
                                          float(np.max(np.abs(out.values - 1.0))))
        if not ok_trial or worst["conservativity"] > 1e-12:
            failures += 1

    checks = [
        _check("contraction_auxiliary", worst["auxiliary"] <= 1e-6,
               worst["auxiliary"], 1e-6),
        _check("contraction_normalized", worst["normalized"] <= 1e-6,
               worst["normalized"], 1e-6),
        _check("mass_ratio_lower_bound", worst["mass_ratio"] <= 1e-6,
               worst["mass_ratio"], 1e-6),
        _check("auxiliary_conservative", worst["conservativity"] <= 1e-12,
               worst["conservativity"], 1e-12),
        _check("all_trials_passed", failures == 0, failures, 0),
    ]

    # ergodic gap series on one homogeneous random kernel
    rng = np.random.default_rng(np.random.SeedSequence([seed, 987654]))
    cells = int(p.get("gap_cells", 12))
    mat = rng.uniform(0.05, 1.0, (cells, cells))
    sg = core.MatrixChainSemigroup([mat], dt=1.0)
    grid = sg.grid_at(0.0)
    nu = _random_probability(rng, grid)
    horizon = int(p.get("gap_horizon", 25))
    rows = []
    gap_ok = True
    mu = _random_probability(rng, grid)
    gamma_ref = _random_probability(rng, grid)
    profile = core.harmonic_extract(sg, 0.0, nu, float(horizon), step=1.0, tol=1e-6)
    for t in range(1, horizon + 1):
        times = list(range(t + 1))
        nus = [nu] * t
        cert = core.brute_force_certificate(sg, times, nus, nu,
                                            [float(t), float(t + 1)])
        res = core.ergodic_gap(sg, 0.0, float(t), mu, cert, profile, gamma_ref, 0.0)
        rows.append((float(t), res["lhs"], res["rhs"], res["capacity"]))
        gap_ok = gap_ok and res["passed"]
    caps = [r[3] for r in rows]
    checks.append(_check("ergodic_gap_bounded", gap_ok, 0.0 if gap_ok else 1.0, 0.0))
    checks.append(_check("capacity_nondecreasing",
                         all(b >= a - 1e-12 for a, b in zip(caps, caps[1:])),
                         min(np.diff(caps)), 0.0))
    _write_csv(outdir / "gap_series.csv", ["t", "lhs", "rhs", "capacity"], rows)
    return _finish("verify-core", config, checks, [outdir / "gap_series.csv"],
                   started, {"worst": worst, "n_trials": n_trials})


# --------------------------------------------------------------------------
# Diffusion
# --------------------------------------------------------------------------
def run_diffusion(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    n_cells = int(p.get("n_cells", 256))
    scales = [float(s) for s in p.get("scales", [5.0, 10.0, 20.0])]
    convention = p.get("variance_convention", "paper")
    grid = Grid(0.0, 1.0, n_cells)
    mids = grid.midpoints()
    checks = []
    rows = []
    worst_rowsum = 0.0
    worst_sandwich = math.inf
    for scale in scales:
        variance = scale if convention == "paper" else scale ** 2 / (2 * math.pi)
        q = diffusion.reflected_density(mids[:, None], mids[None, :], variance)
        kernel = diffusion.reflected_kernel(grid, variance)
        rowsum_err = float(np.max(np.abs(kernel.sum(axis=1) - 1.0)))
        worst_rowsum = max(worst_rowsum, rowsum_err)
        c_env = diffusion.density_bound_constant(variance)
        lower = max(c_env - 4.0 / scale, 0.0)
        margin = min(float(q.min() - lower), float(c_env - q.max()))
        worst_sandwich = min(worst_sandwich, margin)
        rows.append((scale, rowsum_err, c_env, lower, float(q.min()), float(q.max())))
    checks.append(_check("kernel_row_sums", worst_rowsum <= 1e-10, worst_rowsum, 1e-10))
    checks.append(_check("density_sandwich", worst_sandwich >= -1e-12,
                         worst_sandwich, 0.0))
    _write_csv(outdir / "kernelcheck.csv",
               ["scale", "rowsum_err", "c_upper", "lower", "density_min",
                "density_max"], rows)

    # mass sandwich on one window for a probability measure
    env = diffusion.DiffusionEnv.constant(float(p.get("sigma0", 2.0)),
                                          float(p.get("r0", 0.1)))
    acc = diffusion.SigmaAccumulator(env, 10.0)
    dt_w = 1.0
    scale_w = acc.scale(0.0, dt_w)
    variance_w = scale_w if convention == "paper" else acc.variance(0.0, dt_w)
    kernel = diffusion.reflected_kernel(grid, variance_w)
    growth = np.exp(np.asarray(env.growth(mids)) * dt_w)
    rng = np.random.default_rng(config.get("seed", 0))
    mu = _random_probability(rng, grid)
    m_vals = (kernel * growth[None, :]).sum(axis=1)
    mu_m = float(mu.weights @ m_vals)
    c_env = diffusion.density_bound_constant(variance_w)
    sbar = max(1.0 - 4.0 / scale_w, 0.0)
    lo = sbar * c_env * math.exp(env.r_lower * dt_w)
    hi = c_env * math.exp(env.r_upper * dt_w)
    checks.append(_check("mass_window_sandwich", lo - 1e-9 <= mu_m <= hi + 1e-9,
                         mu_m, hi))

    # quantitative bound along the block subdivision (constant coefficients)
    tau = float(p.get("tau",
                      1.02 * 100.0 / (2.0 * math.pi * float(p.get("sigma0", 2.0)) ** 2)))
    horizon = float(p.get("horizon", 120.0))
    sub = diffusion.subdivision_build(env, 0.0, tau, horizon)
    pts = sub["points"]
    mats = []
    kcache: dict[float, np.ndarray] = {}
    acc2 = diffusion.SigmaAccumulator(env, horizon + tau)
    for a, b in zip(pts[:-1], pts[1:]):
        var = acc2.scale(a, b) if convention == "paper" else acc2.variance(a, b)
        key = round(var, 12)
        if key not in kcache:
            kcache[key] = diffusion.reflected_kernel(grid, var)
        mats.append(kcache[key] * math.exp(float(p.get("r0", 0.1)) * (b - a)))
    chain = core.MatrixChainSemigroup(mats, dt=1.0, grid=grid)
    lebesgue = HybridMeasure(grid, np.full(n_cells, grid.spacing))
    profile = core.harmonic_extract(chain, 0.0, lebesgue, float(len(mats)),
                                    step=1.0, tol=1e-6)
    mu0 = HybridMeasure.dirac(grid, 0.1).project_atoms()
    gamma_tau = 5.0 * math.exp(env.r_span * tau)
    alpha_t = gamma_tau ** 2
    threshold = 2.0 * math.log(2.0) + 2.0 * math.log(gamma_tau)
    rows = []
    dominated = True
    reached = False
    block_ends = [blk[2] for blk in sub["blocks"]]
    for idx in range(1, len(pts)):
        t = pts[idx]
        if t not in block_ends:
            continue
        score = diffusion.capacity_diffusion(env, 0.0, t, tau, sub)
        mu_push = chain.apply_to_weights(mu0.weights, 0.0, float(idx))
        leb_push = chain.apply_to_weights(lebesgue.weights, 0.0, float(idx))
        m_vals = chain.mass_values(0.0, float(idx))
        leb_m = float(lebesgue.weights @ m_vals)
        gap = float(np.abs(mu_push - mu0.pair(profile.h) * leb_m
                           * leb_push / leb_push.sum()).sum())
        mu_abs_h = mu0.pair(profile.h)
        bound = 8.0 * (2.0 + alpha_t) * mu_abs_h * leb_m * math.exp(-score.value)
        rows.append((t, score.value, gap, bound))
        if score.value >= threshold:
            reached = True
            if gap > bound * (1 + 1e-9):
                dominated = False
    checks.append(_check("capacity_reaches_threshold", reached,
                         rows[-1][1] if rows else 0.0, threshold))
    checks.append(_check("ergodic_bound_dominates", dominated and reached,
                         0.0 if dominated else 1.0, 0.0))
    _write_csv(outdir / "capacity.csv", ["t", "capacity", "tv_gap", "bound"], rows)

    # degenerate windows: on-off sigma neither crashes nor breaks positivity
    onoff = p.get("sigma_onoff", {"on": 2.0, "period": 2.0})
    env2 = diffusion.DiffusionEnv.from_profiles(
        lambda t: float(onoff["on"]) * (np.asarray(t) % float(onoff["period"])
                                        < 0.5 * float(onoff["period"])),
        lambda x: 0.1 * np.cos(np.asarray(x) * math.pi))
    mu2 = diffusion.fk_propagate(env2, mu, 0.0, 4.0, 0.5, convention=convention)
    checks.append(_check("degenerate_window_positivity",
                         float(mu2.weights.min()) >= 0.0,
                         float(mu2.weights.min()), 0.0))
    extra = {"capacity_final": rows[-1][1] if rows else 0.0,
             "threshold": threshold, "n_blocks": len(sub["blocks"])}
    return _finish("diffusion", config, checks,
                   [outdir / "kernelcheck.csv", outdir / "capacity.csv"],
                   started, extra)


# --------------------------------------------------------------------------
# Periodic
# --------------------------------------------------------------------------
def run_periodic(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    period = float(p.get("period", 1.0))
    spec = p.get("b_time", {"kind": "one_plus_sin"})
    if spec.get("kind") == "one_plus_sin":
        b_time = lambda t: 1.0 + math.sin(2.0 * math.pi * t / period)
        expected_lambda = 1.0
    elif spec.get("kind") == "constant":
        b0 = float(spec.get("value", 1.0))
        b_time = lambda t: b0
        expected_lambda = b0
    else:
        raise ConfigError(f"unknown b_time kind {spec.get('kind')!r}")
    spacing = float(p.get("spacing", 1.0 / 128))
    a_max = float(p.get("a_max", 16.0))
    n_periods = int(p.get("n_periods", 10))
    lam_tol = float(p.get("lambda_tol", 1e-6))

    rate = periodic.PeriodicRate.from_time_profile(b_time, period)
    grid = Grid(0.0, a_max, int(round(a_max / spacing)))
    sg = periodic.PeriodicRenewalSemigroup(rate, grid)
    checks = []

    lam_formula = periodic.floquet_lambda_time_only(b_time, period)
    nu = HybridMeasure.uniform(grid)
    mono = periodic.monodromy_eigen(sg, 0.0, nu, tol=1e-11)
    lamF = mono.lambda_floquet
    checks.append(_check("lambda_formula", abs(lam_formula - expected_lambda) <= lam_tol,
                         abs(lam_formula - expected_lambda), lam_tol))
    checks.append(_check("lambda_monodromy", abs(lamF - expected_lambda) <= lam_tol,
                         abs(lamF - expected_lambda), lam_tol))
    mono_half = periodic.monodromy_eigen(sg, _snap(period / 2, sg.dt), nu, tol=1e-11)
    checks.append(_check("growth_factor_offset_independent",
                         abs(mono.lambda_big - mono_half.lambda_big) <= 1e-8,
                         abs(mono.lambda_big - mono_half.lambda_big), 1e-8))

    fam = periodic.floquet_family_build(sg, mono.gamma, lamF, 0.0)
    res_tol = 10.0 * (sg.dt + grid.spacing)
    checks.append(_check("floquet_periodicity_residual",
                         fam.periodicity_residual < res_tol,
                         fam.periodicity_residual, res_tol))
    checks.append(_check("floquet_eigen_residual", fam.eigen_residual < res_tol,
                         fam.eigen_residual, res_tol))

    # uniqueness probe: a different start converges to the same profile
    nu2 = HybridMeasure.from_density(grid, lambda a: np.exp(-0.5 * a), normalize=True)
    mono2 = periodic.monodromy_eigen(sg, 0.0, nu2, tol=1e-11)
    uniq = float(np.abs(mono.gamma.weights - mono2.gamma.weights).sum())
    checks.append(_check("fixed_point_unique", uniq <= 1e-7, uniq, 1e-7))

    # decay slope against the accumulated rate integral
    h0 = fam.h_start.boundary0
    gam = mono.gamma.weights
    w = np.zeros(grid.n_cells)
    w[0] = 1.0
    steps_per = sg.steps_per_period
    rows = []
    ints, errs = [], []
    for k in range(n_periods * steps_per):
        w = sg.step_measure(k, w)
        if (k + 1) % steps_per == 0:
            t = (k + 1) * sg.dt
            int_b = periodic.rate_sharp_time_only(b_time, 0.0, t) / 2.0
            err = float(np.abs(math.exp(-lamF * t) * w - h0 * gam).sum())
            ints.append(int_b)
            errs.append(err)
            rows.append((t, int_b, err))
    fit = core.rate_fit(ints, errs, drop_fraction=0.0)
    lo, hi = p.get("slope_range", [-2.3, -1.7])
    checks.append(_check("decay_slope_low", fit.slope >= lo, fit.slope, lo))
    checks.append(_check("decay_slope_high", fit.slope <= hi, fit.slope, hi))
    _write_csv(outdir / "decay.csv", ["t", "int_b", "tv_error"], rows)
    _write_csv(outdir / "floquet.csv", ["s", "t", "lambda_F", "residual"],
               [(0.0, off, lamF, fam.periodicity_residual) for off in fam.lattice])

    if bool(p.get("monotone_check", True)):
        mono_rep = periodic.periodic_mass_monotone_check(sg, 3.0 * period,
                                                         stride_steps=max(steps_per // 4, 1))
        checks.append(_check("mass_monotone_in_t", mono_rep["monotone_in_t"][0],
                             mono_rep["monotone_in_t"][1], 0.0))
        checks.append(_check("mass_period_shift", mono_rep["period_shift"][0],
                             mono_rep["period_shift"][1], 0.0))

    extra = {"lambda_formula": lam_formula, "lambda_monodromy": lamF,
             "slope": fit.slope, "iterations": mono.iterations}
    return _finish("periodic", config, checks,
                   [outdir / "decay.csv", outdir / "floquet.csv"], started, extra)


# --------------------------------------------------------------------------
# Max-age
# --------------------------------------------------------------------------
def run_maxage(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    a0 = float(p.get("a0", 1.0))
    a_inf = float(p.get("a_inf", 2.0))
    speed = float(p.get("schedule_speed", 0.7))
    b0 = float(p.get("b0", 1.0))
    amp = float(p.get("b_amplitude", 0.0))
    n_cells = int(p.get("n_cells", 256))
    seed = int(config.get("seed", 0))

    sched = maxage.MaxAgeSchedule.saturating_exp(a0, a_inf, speed)
    sched.validate(float(max(p.get("h0_times", [6.0]))) + float(p.get("h0_r", a_inf)))
    grid = Grid(0.0, a_inf, n_cells)
    if amp == 0.0:
        b = lambda a: np.full_like(np.asarray(a, dtype=float), b0)
        b_lo, b_hi = b0, b0
    else:
        b = lambda a: b0 + amp * np.sin(np.asarray(a, dtype=float))
        b_lo, b_hi = b0 - amp, b0 + amp
    sg = maxage.MaxAgeSemigroup(sched, b, b_lo, b_hi, grid)
    checks = []

    gr = maxage.gronwall_check(sg, 0.0, float(p.get("gronwall_t", 3.0)),
                               n_samples=int(p.get("gronwall_samples", 100)),
                               seed=seed)
    checks.append(_check("gronwall_sup_bound", gr["passed"], gr["max_sup"],
                         gr["bound"]))

    r = float(p.get("h0_r", a_inf))
    rows = []
    h0_ok = True
    prev = math.inf
    monotone = True
    for t in p.get("h0_times", [1.0, 2.0, 4.0, 6.0]):
        res = maxage.h0_distance(sg, _snap(float(t), sg.dt), r)
        rows.append((t, res["sup_distance"], res["bound"]))
        h0_ok = h0_ok and res["passed"]
        monotone = monotone and res["sup_distance"] <= prev + 1e-12
        prev = res["sup_distance"]
    checks.append(_check("h0_distance_bounded", h0_ok, rows[-1][1], rows[-1][2]))
    checks.append(_check("h0_distance_decreasing", monotone,
                         0.0 if monotone else 1.0, 0.0))
    _write_csv(outdir / "h0.csv", ["t", "sup_distance", "bound"], rows)

    start = _snap(float(p.get("start", 1.0)), sg.dt)
    horizons = [_snap(float(t), sg.dt) for t in p.get("horizons",
                                                      [2.0, 3.0, 4.0, 5.0, 6.0])]
    prof = maxage.profile_convergence(sg, start, horizons)
    if prof["status"] != "ok":
        checks.append(_check("profile_window_precondition", False, prof["delta"],
                             prof["a_s"] / 2))
    else:
        floor = float(p.get("gap_floor", 0.05))
        checks.append(_check("profile_gap_decreasing", prof["strictly_decreasing"],
                             0.0 if prof["strictly_decreasing"] else 1.0, 0.0))
        checks.append(_check("profile_gap_floor", prof["final_gap"] < floor,
                             prof["final_gap"], floor))
        _write_csv(outdir / "profile.csv", ["t", "tv_gap"],
                   zip(prof["horizons"], prof["gaps"]))

    # marching versus Picard oracle on a short window
    f = GridFunction.from_callable(grid, lambda a: np.cos(3.0 * a) ** 2)
    g_m = maxage.maxage_boundary_trace(sg, f, 0.5, _snap(1.5, sg.dt))
    g_p = maxage.picard_maxage_trace(sg, f, 0.5, _snap(1.5, sg.dt))
    dev = float(np.max(np.abs(g_m - g_p)))
    checks.append(_check("duhamel_picard_agreement", dev <= 1e-8, dev, 1e-8))

    extra = {"final_gap": prof.get("final_gap"), "delta": prof.get("delta")}
    return _finish("maxage", config, checks,
                   [outdir / "h0.csv", outdir / "profile.csv"], started, extra)


# --------------------------------------------------------------------------
# Branching
# --------------------------------------------------------------------------
def run_branching(config: dict, outdir: Path) -> dict:
    started = time.perf_counter()
    p = config.get("params", {})
    rate = _rate_from_config(p.get("b", {"kind": "constant", "value": 1.0}))
    x0 = float(p.get("x0", 0.0))
    t = float(p.get("t", 5.0))
    n_runs = int(p.get("n_runs", 2000))
    seed = int(config.get("seed", 0))
    checks = []

    pop = br.population_check(rate, x0, t, n_runs, seed)
    checks.append(_check("population_mean_3sigma", pop["passed"],
                         abs(pop["mc_mean"] - pop["deterministic"]),
                         3.0 * pop["se"]))

    ks_rate = float(p.get("ks_rate", 1.0))
    ks_n = int(p.get("ks_n", 10000))
    waits = br.first_division_ages(renewal.DivisionRate.constant(ks_rate),
                                   ks_rate, 0.0, ks_n, seed + 1)
    ks = stats.kstest(waits, "expon", args=(0.0, 1.0 / ks_rate))
    checks.append(_check("thinning_exponential_ks", ks.pvalue > 0.01,
                         float(ks.pvalue), 0.01))

    m21 = p.get("many_to_one", {})
    if m21:
        f_cut = float(m21.get("cutoff", 1.0))
        f = lambda a: (np.asarray(a) <= f_cut).astype(float)
        ref = m21.get("reference")
        res = br.many_to_one_check(rate, x0, f, float(m21.get("t", t)),
                                   int(m21.get("n_runs", 200)), seed + 2,
                                   reference=ref)
        checks.append(_check("many_to_one_3sigma", res["passed"],
                             abs(res.get("ratio", math.inf)
                                 - res.get("reference", math.inf)),
                             3.0 * res.get("se", 0.0)))

    sim = br.simulate_batch(rate, [x0], t, n_runs, seed)
    pops = sim.populations()
    _write_csv(outdir / "mc.csv", ["run", "population", "estimate"],
               [(i, pops[i], pops[i]) for i in range(n_runs)])
    summary = {"mean": pop["mc_mean"], "se": pop["se"],
               "deterministic": pop["deterministic"], "pass": pop["passed"]}
    with open(outdir / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return _finish("branching", config, checks,
                   [outdir / "mc.csv", outdir / "summary.json"], started,
                   {"population": summary})


EXPERIMENTS = {
    "renewal": run_renewal,
    "verify-core": run_verify_core,
    "diffusion": run_diffusion,
    "periodic": run_periodic,
    "maxage": run_maxage,
    "branching": run_branching,
}


def run_experiment(config: dict, outdir) -> dict:
    """Validate, dispatch, write report.json, and return the report."""
    config = validate_config(config)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report = EXPERIMENTS[config["experiment"]](config, outdir)
    with open(outdir / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=1, default=str)
    return report


# --------------------------------------------------------------------------
# Report comparison
# --------------------------------------------------------------------------
def compare_reports(a: dict, b: dict, rel_tol: float = 1e-12) -> list:
    """Field-wise numeric diff of two reports of the same experiment type.

    Returns a list of (path, value_a, value_b) for leaves whose relative
    difference exceeds the threshold; an empty list means no differences.
    """
    if a.get("experiment") != b.get("experiment"):
        raise ValueError("cannot compare reports of different experiment types")
    diffs: list = []

    def walk(x, y, path):
        if isinstance(x, dict) and isinstance(y, dict):
            for k in sorted(set(x) | set(y)):
                if k in ("wall_seconds",):
                    continue
                walk(x.get(k), y.get(k), f"{path}.{k}" if path else k)
        elif isinstance(x, list) and isinstance(y, list):
            if len(x) != len(y):
                diffs.append((path + ".length", len(x), len(y)))
                return
            for i, (xi, yi) in enumerate(zip(x, y)):
                walk(xi, yi, f"{path}[{i}]")
        elif isinstance(x, (int, float)) and isinstance(y, (int, float)) \
                and not isinstance(x, bool) and not isinstance(y, bool):
            scale = max(abs(x), abs(y), 1e-300)
            if abs(x - y) > rel_tol * scale:
                diffs.append((path, x, y))
        elif x != y:
            diffs.append((path, x, y))

    walk(a, b, "")
    return diffs
