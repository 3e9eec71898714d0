import math

import numpy as np
import pytest

from doeblin import core
from doeblin.core import (
    CapacityNotDiverged, CouplingCertificate, MatrixChainSemigroup,
    auxiliary_apply, brute_force_certificate, capacity, certify_admissible,
    contraction_check, doeblin_constant, ergodic_gap, harmonic_extract,
    mass, mass_domination, rate_fit,
)
from doeblin.measures import Grid, GridFunction, HybridMeasure


def chain(rng, n=8, steps=3, extra=2):
    mats = [rng.uniform(0.05, 1.0, (n, n)) for _ in range(steps + extra)]
    return MatrixChainSemigroup(mats, dt=1.0)


def probability(rng, grid):
    w = rng.uniform(0.0, 1.0, grid.n_cells)
    return HybridMeasure(grid, w / w.sum())


def test_mass_identity_at_equal_times():
    sg = chain(np.random.default_rng(0))
    m = mass(sg, 1.0, 1.0)
    assert np.all(m.values == 1.0)


def test_mass_rejects_nonpositive():
    mats = [np.zeros((3, 3))]
    sg = MatrixChainSemigroup([np.eye(3)], dt=1.0)
    sg.matrices[0][0, :] = 0.0  # row of zeros kills strong positivity
    with pytest.raises(core.StrongPositivityError):
        mass(sg, 0.0, 1.0)


def test_auxiliary_conservative_and_composes():
    rng = np.random.default_rng(1)
    sg = chain(rng)
    grid = sg.grid_at(0.0)
    ones = GridFunction.ones(grid)
    for u in (0.0, 1.0, 2.0, 3.0):
        out = auxiliary_apply(sg, 3.0, 0.0, u, ones)
        assert np.max(np.abs(out.values - 1.0)) < 1e-12
    f = GridFunction(grid, rng.normal(size=grid.n_cells))
    inner = auxiliary_apply(sg, 3.0, 1.0, 2.0, f)
    two_step = auxiliary_apply(sg, 3.0, 0.0, 1.0, inner)
    direct = auxiliary_apply(sg, 3.0, 0.0, 2.0, f)
    assert np.max(np.abs(two_step.values - direct.values)) < 1e-10


def test_auxiliary_point_mass_is_normalised_row():
    rng = np.random.default_rng(2)
    sg = chain(rng)
    grid = sg.grid_at(0.0)
    rows = sg.kernel_matrix(0.0, 3.0)
    w = np.zeros(grid.n_cells)
    w[4] = 1.0
    push = core.auxiliary_measure_at_tfinal(sg, 0.0, 3.0, w)
    assert np.allclose(push, rows[4] / rows[4].sum())


def test_doeblin_constant_rank_one_and_identity():
    grid = Grid(0.0, 4.0, 4)
    nu = HybridMeasure(grid, np.array([0.1, 0.2, 0.3, 0.4]))
    rank_one = MatrixChainSemigroup([np.tile(nu.weights, (4, 1))], dt=1.0, grid=grid)
    assert doeblin_constant(rank_one, 0.0, 1.0, nu) == pytest.approx(1.0)
    ident = MatrixChainSemigroup([np.eye(4)], dt=1.0, grid=grid)
    assert doeblin_constant(ident, 0.0, 1.0, nu) == 0.0


def test_mass_domination_examples():
    rng = np.random.default_rng(3)
    grid = Grid(0.0, 4.0, 4)
    # spatially constant mass: sup equals the average, d = 1
    row = np.array([0.5, 0.25, 0.15, 0.10])
    sg = MatrixChainSemigroup([np.tile(row, (4, 1))], dt=1.0, grid=grid)
    nu = probability(rng, grid)
    assert mass_domination(sg, nu, 0.0, [1.0, 2.0]) == pytest.approx(1.0)
    # generic kernel: matches a direct enumeration
    sg = MatrixChainSemigroup([rng.uniform(0.1, 1.0, (10, 10))], dt=1.0)
    grid10 = sg.grid_at(0.0)
    nu = HybridMeasure(grid10, np.full(10, 0.1))
    d = mass_domination(sg, nu, 0.0, [1.0, 2.0, 3.0])
    expected = min(
        float(nu.weights @ sg.mass_values(0.0, tau)) / float(sg.mass_values(0.0, tau).max())
        for tau in (1.0, 2.0, 3.0))
    assert d == pytest.approx(expected)


def test_certify_homogeneous_regular_subdivision():
    rng = np.random.default_rng(4)
    mat = rng.uniform(0.1, 1.0, (8, 8))
    sg = MatrixChainSemigroup([mat], dt=1.0)
    grid = sg.grid_at(0.0)
    nu = probability(rng, grid)
    horizons = [3.0, 4.0, 5.0]
    c = doeblin_constant(sg, 0.0, 1.0, nu)
    d = mass_domination(sg, nu, 1.0, horizons)
    times = [0.0, 1.0, 2.0, 3.0]
    cert = CouplingCertificate(times, [c] * 3, [d] * 3, [nu] * 3,
                               alpha=1.0 / (c * d), beta=1.0 / d, nu=nu)
    report = certify_admissible(sg, cert, 0.0, 3.0, horizons)
    assert report.passed, report.conditions
    # envelope constants below one are rejected outright
    bad = CouplingCertificate(times, [c] * 3, [d] * 3, [nu] * 3,
                              alpha=0.5, beta=1.0 / d, nu=nu)
    assert not certify_admissible(sg, bad, 0.0, 3.0, horizons).passed
    # inflating the lower-bound constant breaks the kernel domination
    inflated = CouplingCertificate(times, [min(1.0, c * 3)] * 3, [d] * 3, [nu] * 3,
                                   alpha=1.0 / (c * d), beta=1.0 / d, nu=nu)
    rep = certify_admissible(sg, inflated, 0.0, 3.0, horizons)
    assert not rep.conditions["doeblin_lower_bound"][0]
    assert rep.conditions["doeblin_lower_bound"][1] < 0


def test_capacity_values():
    assert capacity(None) == 0.0
    grid = Grid(0.0, 1.0, 2)
    nu = HybridMeasure.uniform(grid)
    cert = CouplingCertificate([0.0, 1.0, 2.0], [0.5, 0.5], [0.4, 0.4],
                               [nu, nu], 5.0, 2.5, nu)
    assert capacity(cert) == pytest.approx(-2 * math.log(1 - 0.2))
    cert_one = CouplingCertificate([0.0, 1.0], [1.0], [1.0], [nu], 1.0, 1.0, nu)
    assert capacity(cert_one) == math.inf


def test_capacity_homogeneous_lower_bound():
    rng = np.random.default_rng(7)
    mat = rng.uniform(0.1, 1.0, (6, 6))
    sg = MatrixChainSemigroup([mat], dt=1.0)
    nu = probability(rng, sg.grid_at(0.0))
    r = 1.0
    t = 6.0
    c = doeblin_constant(sg, 0.0, r, nu)
    d = mass_domination(sg, nu, 1.0, [t, t + 1])
    n = int(t / r)
    times = [i * r for i in range(n + 1)]
    cert = CouplingCertificate(times, [c] * n, [d] * n, [nu] * n,
                               1.0 / (c * d), 1.0 / d, nu)
    floor = math.floor((t - r) / r) * (-math.log(1 - c * d))
    assert capacity(cert) >= floor - 1e-12


def test_contraction_trivial_and_rank_one():
    rng = np.random.default_rng(8)
    sg = chain(rng, n=6, steps=2)
    grid = sg.grid_at(0.0)
    nu = probability(rng, grid)
    cert = brute_force_certificate(sg, [0.0, 1.0, 2.0], [nu, nu], nu, [2.0, 3.0])
    mu = probability(rng, grid)
    rep = contraction_check(sg, cert, mu, mu, 2.0)
    assert rep.lhs_auxiliary == 0.0
    assert rep.passed
    # one-step rank-one kernel: both normalised images collapse onto nu
    grid4 = Grid(0.0, 4.0, 4)
    nu4 = HybridMeasure(grid4, np.array([0.4, 0.3, 0.2, 0.1]))
    rank_one = MatrixChainSemigroup([np.tile(nu4.weights, (4, 1))] * 2,
                                    dt=1.0, grid=grid4, homogeneous=True)
    cert1 = brute_force_certificate(rank_one, [0.0, 1.0], [nu4], nu4, [1.0, 2.0])
    assert cert1.c[0] == pytest.approx(1.0)
    assert cert1.d[0] == pytest.approx(1.0)
    mu_a = probability(rng, grid4)
    mu_b = probability(rng, grid4)
    rep = contraction_check(rank_one, cert1, mu_a, mu_b, 1.0)
    assert rep.lhs_normalized < 1e-14
    assert rep.passed


def test_harmonic_extract_constant_mass_and_failure():
    # equal row sums make the mass flat, so the profile is identically one
    grid = Grid(0.0, 3.0, 3)
    mat = np.array([[0.2, 0.3, 0.5], [0.5, 0.2, 0.3], [0.3, 0.5, 0.2]])
    sg = MatrixChainSemigroup([2.0 * mat], dt=1.0, grid=grid)
    nu = HybridMeasure.uniform(grid)
    prof = harmonic_extract(sg, 0.0, nu, 10.0, step=1.0, tol=1e-9)
    assert np.max(np.abs(prof.h.values - 1.0)) < 1e-12
    assert nu.pair(prof.h) == pytest.approx(1.0, abs=1e-8)
    # two non-communicating growth classes: ratios drift too slowly
    slow = MatrixChainSemigroup([np.diag([2.0, 1.9])], dt=1.0)
    nu2 = HybridMeasure.uniform(slow.grid_at(0.0))
    with pytest.raises(CapacityNotDiverged):
        harmonic_extract(slow, 0.0, nu2, 6.0, step=1.0, tol=1e-9)


def test_ergodic_gap_bounds_and_degenerate_horizon():
    rng = np.random.default_rng(9)
    mat = rng.uniform(0.1, 1.0, (10, 10))
    sg = MatrixChainSemigroup([mat], dt=1.0)
    grid = sg.grid_at(0.0)
    nu = probability(rng, grid)
    prof = harmonic_extract(sg, 0.0, nu, 20.0, step=1.0, tol=1e-8)
    mu = probability(rng, grid)
    gamma_ref = probability(rng, grid)
    for t in (1, 3, 6, 10):
        times = list(range(t + 1))
        cert = brute_force_certificate(sg, times, [nu] * t, nu, [float(t), t + 1.0])
        res = ergodic_gap(sg, 0.0, float(t), mu, cert, prof, gamma_ref, 0.0)
        assert res["passed"], (t, res)
    # degenerate horizon: all-times bound with an empty-interval certificate
    cert0 = brute_force_certificate(sg, [0.0, 1.0], [nu], nu, [1.0, 2.0])
    res = ergodic_gap(sg, 0.0, 1.0, nu, cert0, prof, gamma_ref, 0.0)
    assert res["lhs"] <= res["rhs"] * (1 + 1e-6)


def test_rate_fit():
    ts = np.linspace(0.0, 10.0, 21)
    fit = rate_fit(ts, np.exp(-2.0 * ts))
    assert fit.slope == pytest.approx(-2.0, abs=1e-12)
    flat = rate_fit(ts, np.ones_like(ts))
    assert flat.slope == pytest.approx(0.0, abs=1e-12)
    errs = np.exp(-ts)
    errs[3] = 0.0
    fit = rate_fit(ts, errs)
    assert fit.dropped == 1
    with pytest.raises(ValueError):
        rate_fit([1.0, 2.0], [0.1, 0.2])


def test_lattice_guard():
    sg = chain(np.random.default_rng(0))
    with pytest.raises(ValueError):
        sg.lattice_index(0.5)
