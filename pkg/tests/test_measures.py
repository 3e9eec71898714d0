import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doeblin.measures import (
    Grid, GridFunction, HybridMeasure, GridMismatchError,
    jordan, pair, tv_norm,
    measure_from_csv, measure_to_csv, function_from_csv, function_to_csv,
)


GRID = Grid(0.0, 1.0, 16)


def random_measure(rng, atoms=True):
    w = rng.normal(size=GRID.n_cells)
    ats = tuple((float(rng.uniform(0, 1 - 1e-9)), float(rng.normal()))
                for _ in range(rng.integers(0, 3))) if atoms else ()
    return HybridMeasure(GRID, w, ats)


def test_grid_invariants():
    assert GRID.spacing == pytest.approx(1 / 16)
    mids = GRID.midpoints()
    assert np.all((mids > GRID.lower) & (mids < GRID.upper))
    with pytest.raises(ValueError):
        Grid(1.0, 0.0, 4)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 0)


def test_tv_trivial_cases():
    assert tv_norm(HybridMeasure.zero(GRID)) == 0.0
    # two distinct point masses are at distance 2
    mu = HybridMeasure.dirac(GRID, 0.1) - HybridMeasure.dirac(GRID, 0.7)
    assert tv_norm(mu) == pytest.approx(2.0)
    # any probability measure has norm 1
    prob = HybridMeasure.uniform(GRID)
    assert tv_norm(prob) == pytest.approx(1.0)
    # atoms at one location merge before the norm is taken
    mu = HybridMeasure(GRID, np.zeros(16), ((0.3, 1.0), (0.3, -1.0)))
    assert tv_norm(mu) == 0.0


def test_pair_basics():
    f = GridFunction.ones(GRID)
    assert pair(HybridMeasure.uniform(GRID), f) == pytest.approx(1.0)
    g = GridFunction.from_callable(GRID, lambda a: np.asarray(a) ** 2)
    delta0 = HybridMeasure.dirac(GRID, 0.0)
    assert pair(delta0, g) == g.boundary0 == 0.0
    with pytest.raises(GridMismatchError):
        pair(HybridMeasure.uniform(GRID), GridFunction.ones(Grid(0.0, 1.0, 8)))


def test_pair_zero_mass_half_bound():
    rng = np.random.default_rng(5)
    for _ in range(50):
        mu = random_measure(rng)
        mu = mu - HybridMeasure(GRID, np.full(16, mu.mass() / 16))
        assert abs(mu.mass()) < 1e-12
        f = GridFunction(GRID, rng.uniform(0.0, 1.0, 16))
        assert abs(pair(mu, f)) <= 0.5 * tv_norm(mu) * f.sup_norm() + 1e-12


def test_jordan_trivial_and_identity():
    pos = HybridMeasure.uniform(GRID)
    plus, minus = jordan(pos)
    assert tv_norm(minus) == 0.0
    assert np.allclose(plus.weights, pos.weights)
    plus, minus = jordan(pos.scaled(-1.0))
    assert tv_norm(plus) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(25):
        mu = random_measure(rng)
        plus, minus = jordan(mu)
        assert np.all(plus.weights >= 0) and np.all(minus.weights >= 0)
        diff = plus - minus
        assert np.allclose(diff.weights, mu.weights)
        # minimality: no cell carries both positive and negative mass
        assert np.all(np.minimum(plus.weights, minus.weights) == 0.0)
        assert tv_norm(mu) == pytest.approx(plus.mass() + minus.mass())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_tv_is_a_norm(seed):
    rng = np.random.default_rng(seed)
    mu, nu = random_measure(rng, atoms=False), random_measure(rng, atoms=False)
    c = float(rng.normal())
    assert tv_norm(mu + nu) <= tv_norm(mu) + tv_norm(nu) + 1e-12
    assert tv_norm(mu.scaled(c)) == pytest.approx(abs(c) * tv_norm(mu))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pair_dominated_by_tv(seed):
    rng = np.random.default_rng(seed)
    mu = random_measure(rng)
    f = GridFunction(GRID, rng.normal(size=16))
    assert abs(pair(mu, f)) <= tv_norm(mu) * f.sup_norm() + 1e-12


def test_atom_projection_preserves_mass():
    mu = HybridMeasure(GRID, np.ones(16) / 32, ((0.25, 0.25), (0.99, 0.25)))
    flat = mu.project_atoms()
    assert not flat.atoms
    assert flat.mass() == pytest.approx(mu.mass())


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    mu = random_measure(rng)
    measure_to_csv(mu, tmp_path / "m.csv")
    back = measure_from_csv(GRID, tmp_path / "m.csv")
    assert np.array_equal(back.weights, mu.weights)
    assert back.atoms == mu.atoms
    f = GridFunction(GRID, rng.normal(size=16), boundary0=2.5)
    function_to_csv(f, tmp_path / "f.csv")
    back_f = function_from_csv(GRID, tmp_path / "f.csv")
    assert np.array_equal(back_f.values, f.values)
    assert back_f.boundary0 == f.boundary0
