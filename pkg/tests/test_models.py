import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rande_prmf._fastsolve import solve_coupled_fast
from rande_prmf.models import (
    InitialCondition,
    PhenotypeNode,
    Tolerances,
    aggregate,
    solve_coupled_array,
    solve_coupled_competition,
    solve_fisher_kpp,
    solve_phenotype_vs_data,
    solve_phenotypes_vs_data_array,
)
from rande_prmf.numerics import DomainError, ShapeError, SpaceTimeField, SpatialGrid, TimeGrid

SG = SpatialGrid(0.0, 2.0, 101)
TG = TimeGrid(0.0, 1.4, 51)
TOL = Tolerances()


def const_ic(value, grid=SG):
    return InitialCondition.from_samples(np.full(grid.n_points, value))


def logistic(u0, rho, t):
    e = np.exp(rho * t)
    return u0 * e / (1 + u0 * (e - 1))


def test_node_validation():
    with pytest.raises(DomainError):
        PhenotypeNode(-1e-3, 1.0)
    with pytest.raises(DomainError):
        PhenotypeNode(0.01, 1.0, alpha=0.0)


def test_initial_condition_kinds():
    x = SG.nodes
    np.testing.assert_allclose(InitialCondition().evaluate(SG), 0.1 * np.exp(-x ** 2 / 0.01))
    step = InitialCondition("step", amplitude=0.5, width=0.2).evaluate(SG)
    assert step[x <= 0.2].min() == 0.5 and step[x > 0.2].max() == 0.0
    with pytest.raises(DomainError):
        InitialCondition.from_samples([0.1, 1.5, 0.2])
    with pytest.raises(ShapeError):
        InitialCondition.from_samples([0.1, 0.2]).evaluate(SG)


def test_no_growth_keeps_constant():
    out = solve_fisher_kpp(PhenotypeNode(0.05, 0.0), const_ic(0.3), SG, TG)
    np.testing.assert_allclose(out.values, 0.3, atol=1e-9)


def test_pure_reaction_matches_logistic():
    tg = TimeGrid(0.0, 0.2, 5)
    out = solve_fisher_kpp(PhenotypeNode(0.0, 10.0), const_ic(0.1), SG, tg)
    # 0.1 e^2 / (1 + 0.1 (e^2 - 1))
    assert np.max(np.abs(out.values[-1] - 0.4508531)) < 1e-4
    np.testing.assert_allclose(out.values[:, 0], logistic(0.1, 10.0, tg.nodes), atol=1e-6)


def test_single_phenotype_reduction():
    node = PhenotypeNode(0.02, 6.0)
    ic = InitialCondition()
    single = solve_fisher_kpp(node, ic, SG, TG)
    coupled = solve_coupled_competition([node], [1.0], ic, SG, TG)
    assert np.max(np.abs(single.values - coupled.aggregate.values)) <= 10 * TOL.rel


def test_identical_nodes_symmetric():
    node = PhenotypeNode(0.03, 4.0)
    sol = solve_coupled_competition([node, node], [0.5, 0.5], InitialCondition(), SG, TG)
    np.testing.assert_allclose(sol.per_node[0].values, sol.per_node[1].values, atol=1e-12)
    np.testing.assert_allclose(sol.aggregate.values, sol.per_node[0].values, atol=1e-12)


def test_two_phenotype_aggregate_bounded_by_logistic_envelope():
    ic = InitialCondition()
    sol = solve_coupled_competition([PhenotypeNode(0.01, 10), PhenotypeNode(0.1, 1)], [0.5, 0.5],
                                    ic, SG, TG)
    u = sol.aggregate.values
    env = logistic(ic.evaluate(SG).max(), 10.0, TG.nodes)
    assert u.min() >= -1e-6
    assert np.all(u <= env[:, None] + 1e-6)
    assert u.max() <= 1 + 1e-6


def test_aggregate_consistency_and_nonnegativity():
    nodes = [PhenotypeNode(0.005, 11), PhenotypeNode(0.05, 5), PhenotypeNode(0.11, 0.5)]
    w = [0.2, 0.3, 0.5]
    sol = solve_coupled_competition(nodes, w, InitialCondition(), SG, TG)
    again = aggregate(w, sol.per_node)
    np.testing.assert_allclose(again.values, sol.aggregate.values, rtol=1e-10, atol=1e-14)
    assert sol.stacked().min() >= -1e-6


def test_coupled_rejects_bad_inputs():
    with pytest.raises(DomainError):
        solve_coupled_competition([], [], InitialCondition(), SG, TG)
    with pytest.raises(ShapeError):
        solve_coupled_competition([PhenotypeNode(0.01, 1)], [0.5, 0.5], InitialCondition(), SG, TG)
    with pytest.raises(DomainError):
        solve_coupled_competition([PhenotypeNode(0.01, 1)] * 2, [0.7, 0.7], InitialCondition(),
                                  SG, TG)


def test_grid_refinement_second_order():
    tg = TimeGrid(0.0, 0.5, 6)
    ic = InitialCondition(width=0.3)
    node = PhenotypeNode(0.02, 3.0)
    tol = Tolerances(1e-10, 1e-12)
    sols = [solve_fisher_kpp(node, ic, SpatialGrid(0, 2, n), tg, tol).values for n in (41, 81, 161)]
    e1 = np.max(np.abs(sols[0] - sols[1][:, ::2]))
    e2 = np.max(np.abs(sols[1] - sols[2][:, ::2]))
    assert 3.0 < e1 / e2 < 5.0


def test_data_driven_saturated_conserves_mass():
    u_obs = SpaceTimeField(np.ones((TG.n_points, SG.n_points)), TG, SG)
    c0 = InitialCondition().evaluate(SG)
    out = solve_phenotype_vs_data(PhenotypeNode(0.05, 8.0), u_obs, c0)
    w = SG.trapezoid_weights()
    mass = out.values @ w
    assert np.max(np.abs(mass / mass[0] - 1)) <= 1e-6


def test_data_driven_no_growth_is_diffusion():
    rng = np.random.default_rng(0)
    u_obs = SpaceTimeField(rng.uniform(0, 1, (TG.n_points, SG.n_points)), TG, SG)
    c0 = InitialCondition().evaluate(SG)
    out = solve_phenotype_vs_data(PhenotypeNode(0.03, 0.0), u_obs, c0)
    ref = solve_fisher_kpp(PhenotypeNode(0.03, 0.0), InitialCondition(), SG, TG)
    np.testing.assert_allclose(out.values, ref.values, atol=1e-8)


def test_data_driven_exponential_growth():
    tg = TimeGrid(0.0, 1.0, 11)
    u_obs = SpaceTimeField(np.zeros((tg.n_points, SG.n_points)), tg, SG)
    out = solve_phenotype_vs_data(PhenotypeNode(0.0, 1.0), u_obs, np.full(SG.n_points, 0.1))
    assert np.max(np.abs(out.values[-1] - 0.1 * np.e)) < 1e-4


def test_data_driven_rejects_uncovered_interval():
    u_obs = SpaceTimeField(np.zeros((TG.n_points, SG.n_points)), TG, SG)
    with pytest.raises(DomainError):
        solve_phenotype_vs_data(PhenotypeNode(0.0, 1.0), u_obs, np.zeros(SG.n_points),
                                tgrid=TimeGrid(0.0, 2.0, 11))


def test_data_driven_self_consistency():
    """A single phenotype driven by its own clean aggregate reproduces it."""
    node = PhenotypeNode(0.04, 6.0)
    tg = TimeGrid(0.0, 1.0, 401)
    clean = solve_fisher_kpp(node, InitialCondition(), SG, tg, Tolerances(1e-9, 1e-12))
    out = solve_phenotype_vs_data(node, clean, clean.values[0], Tolerances(1e-9, 1e-12))
    assert np.max(np.abs(out.values - clean.values)) < 1e-4


def test_batched_data_driven_matches_single():
    u_obs = solve_fisher_kpp(PhenotypeNode(0.03, 5.0), InitialCondition(), SG, TG)
    c0 = u_obs.values[0]
    D, rho = np.array([0.0, 0.05, 0.12]), np.array([12.0, 3.0, 0.0])
    batch = solve_phenotypes_vs_data_array(D, rho, u_obs, c0)
    tight = Tolerances(1e-10, 1e-13)
    for i in range(3):
        ref = solve_phenotype_vs_data(PhenotypeNode(D[i], rho[i]), u_obs, c0, tight).values
        # global error grows with exponential growth, hence the 100x margin
        assert np.max(np.abs(batch[:, i] - ref)) <= 100 * TOL.rel * np.max(np.abs(ref))


def test_aggregate_examples():
    f = lambda v: SpaceTimeField(np.full((2, 3), v), TimeGrid(0, 1, 2), SpatialGrid(0, 1, 3))
    np.testing.assert_allclose(aggregate([0.25, 0.75], [f(0.2), f(0.6)]).values, 0.5)
    np.testing.assert_array_equal(aggregate([1.0], [f(0.3)]).values, f(0.3).values)
    with pytest.raises(ShapeError):
        aggregate([0.5, 0.5], [f(0.1), SpaceTimeField(np.zeros((3, 3)), TimeGrid(0, 1, 3),
                                                      SpatialGrid(0, 1, 3))])


@given(w=st.floats(0.0, 1.0))
def test_aggregate_of_equal_fields_is_that_field(w):
    v = np.linspace(0, 1, 6).reshape(2, 3)
    f = SpaceTimeField(v, TimeGrid(0, 1, 2), SpatialGrid(0, 1, 3))
    np.testing.assert_allclose(aggregate([w, 1 - w], [f, f]).values, v, atol=1e-15)


@pytest.mark.parametrize("M", [1, 3])
def test_compiled_solver_matches_reference(M):
    rng = np.random.default_rng(M)
    D = rng.uniform(0, 0.12, M)
    rho = rng.uniform(0, 12, M)
    w = rng.dirichlet(np.ones(M))
    c0 = InitialCondition().evaluate(SG)
    ref = solve_coupled_array(D, rho, w, c0, SG, TG.nodes, TOL)
    fast, status, _ = solve_coupled_fast(D, rho, w, c0, SG.dx, TG.nodes, TOL.rel, TOL.abs)
    assert status == 0
    assert np.max(np.abs(fast - ref)) <= 10 * TOL.rel
