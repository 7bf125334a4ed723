import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import small_spec
from helpers import as_fit_view
from rande_prmf.basis import build_basis_library, subsample_library
from rande_prmf.distributions import OMEGA_D, OMEGA_RHO, build_mesh, random_simplex
from rande_prmf.models import InitialCondition, PhenotypeNode, solve_fisher_kpp
from rande_prmf.numerics import DomainError, ShapeError, SpaceTimeField
from rande_prmf.prmf import (
    PrmfFitConfig,
    PrmfFitResult,
    SimplexLeastSquares,
    compute_aic,
    fit_candidates,
    fit_prmf,
    predict_rande,
    select_model,
)
from rande_prmf.synthdata import generate_dataset


def slsqp_oracle(A, b):
    m = A.shape[1]
    res = minimize(lambda w: np.sum((A @ w - b) ** 2), np.full(m, 1 / m),
                   jac=lambda w: 2 * A.T @ (A @ w - b), method="SLSQP",
                   bounds=[(0, 1)] * m,
                   constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1,
                                 "jac": lambda w: np.ones(m)}],
                   options={"ftol": 1e-15, "maxiter": 1000})
    return res.x


@pytest.fixture(scope="module")
def library(small_views):
    fit, _ = small_views
    return build_basis_library(fit, build_mesh(OMEGA_D, 20, OMEGA_RHO, 20))


def _solve(A, b):
    prob = SimplexLeastSquares(A, b)
    w, _, _ = prob.fista(random_simplex(A.shape[1], 0), 1e-12, 5000)
    w, _ = prob.active_set(w)
    return prob, w


@given(seed=st.integers(0, 10_000), m=st.integers(2, 8), n=st.integers(3, 30))
def test_simplex_ls_matches_slsqp_and_beats_spot_checks(seed, m, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, m))
    b = rng.normal(size=n)
    prob, w = _solve(A, b)
    assert w.min() >= 0 and abs(w.sum() - 1) < 1e-12
    f = prob.sse(w)
    ref = slsqp_oracle(A, b)
    f_ref = np.sum((A @ ref - b) ** 2)
    assert f <= f_ref + 1e-8 * max(1.0, f_ref)
    vertices = [np.sum((A[:, i] - b) ** 2) for i in range(m)]
    randoms = [np.sum((A @ random_simplex(m, (seed, k)) - b) ** 2) for k in range(100)]
    assert f <= min(vertices + randoms) + 1e-12 * max(1.0, f)


def test_qr_reduction_keeps_sse():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(200, 6))
    b = rng.normal(size=200)
    prob = SimplexLeastSquares(A, b)
    w = random_simplex(6, 1)
    assert prob.sse(w) == pytest.approx(np.sum((A @ w - b) ** 2), rel=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        SimplexLeastSquares(np.ones((4, 2)), np.ones(5))


def test_manufactured_on_mesh_data_is_recovered(library):
    sub = subsample_library(library, 5, 5)
    w_true = np.zeros(25)
    w_true[[3, 17, 21]] = [0.2, 0.5, 0.3]
    data = SpaceTimeField(sub.predict(w_true), sub.time_grid, sub.spatial_grid)
    res = fit_prmf(sub, as_fit_view(data), PrmfFitConfig(n_starts=3))
    assert res.sse_fit <= 1e-12 * np.sum(data.values ** 2)
    assert np.max(np.abs(sub.predict(res.weights) - data.values)) <= 1e-6
    D, rho = sub.mesh.flat()
    assert abs(res.weights @ D - w_true @ D) <= sub.mesh.spacing()[0]
    assert abs(res.weights @ rho - w_true @ rho) <= sub.mesh.spacing()[1]


def test_single_node_library(library, small_views):
    fit, _ = small_views
    sub = subsample_library(library, 1, 1)
    res = fit_prmf(sub, fit)
    assert res.weights.tolist() == [1.0]
    assert res.sse_fit == pytest.approx(np.sum((sub.predict([1.0]) - fit.u_obs.values) ** 2))


def test_zero_data_no_worse_than_vertices(library, small_views):
    fit, _ = small_views
    sub = subsample_library(library, 2, 2)
    zero = SpaceTimeField(np.zeros_like(fit.u_obs.values), sub.time_grid, sub.spatial_grid)
    res = fit_prmf(sub, as_fit_view(zero), PrmfFitConfig(n_starts=4))
    for i in range(4):
        assert res.sse_fit <= np.sum(sub.solutions[:, i] ** 2) * (1 + 1e-12)


def test_fit_on_noisy_data_is_globally_optimal(library, small_views):
    fit, _ = small_views
    sub = subsample_library(library, 5, 5)
    res = fit_prmf(sub, fit, PrmfFitConfig(n_starts=5))
    A, b = sub.design_matrix(), fit.u_obs.values.ravel()
    # every start lands on the same optimum
    assert max(res.start_sse) - min(res.start_sse) <= 1e-9 * res.sse_fit
    ref = slsqp_oracle(A, b)
    assert res.sse_fit <= np.sum((A @ ref - b) ** 2) * (1 + 1e-9)
    for i in range(25):
        assert res.sse_fit <= np.sum((A[:, i] - b) ** 2)


def test_fit_is_deterministic(library, small_views):
    fit, _ = small_views
    sub = subsample_library(library, 10, 5)
    a = fit_prmf(sub, fit, PrmfFitConfig(n_starts=3, seed=11))
    b = fit_prmf(sub, fit, PrmfFitConfig(n_starts=3, seed=11))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert a.start_sse == b.start_sse


def test_grid_mismatch_rejected(library, small_views):
    fit, _ = small_views
    short = fit.rows(0, 5)
    with pytest.raises(ShapeError):
        fit_prmf(library, short)


def test_candidates_cover_grid(library, small_views):
    fit, _ = small_views
    res = fit_candidates(library, fit, PrmfFitConfig(n_starts=2))
    assert [r.dims for r in res] == [(a, b) for a in (5, 10, 20) for b in (5, 10, 20)]
    for r in res:
        assert r.aic == pytest.approx(compute_aic(r.sse_fit, r.n_obs, r.n_params), rel=1e-14)


def test_aic_examples():
    assert compute_aic(1.0, 100, 25) == pytest.approx(100 * math.log(0.01) + 52, abs=1e-3)
    assert compute_aic(1.0, 100, 25) == pytest.approx(-408.517, abs=1e-3)
    assert compute_aic(0.7, 500, 50) - compute_aic(0.7, 500, 25) == pytest.approx(50.0)
    assert compute_aic(0.5, 100, 10) < compute_aic(0.6, 100, 10)
    with pytest.warns(RuntimeWarning):
        assert compute_aic(0.0, 100, 10) == -math.inf
    with pytest.raises(DomainError):
        compute_aic(1.0, 10, 10)


@given(sse=st.floats(1e-8, 1e3), n=st.integers(50, 10_000), p=st.integers(1, 40))
def test_aic_independent_recomputation(sse, n, p):
    assert compute_aic(sse, n, p) == pytest.approx(n * np.log(sse / n) + 2 * (p + 1), rel=1e-12,
                                                   abs=1e-9)


def _result(dims, sse, n_obs=1000):
    m = dims[0] * dims[1]
    return PrmfFitResult(dims, np.full(m, 1 / m), sse, compute_aic(sse, n_obs, m), n_obs)


def test_select_model_rules():
    only = _result((5, 5), 1.0)
    assert select_model([only]) is only
    a = PrmfFitResult((5, 5), np.full(25, 0.04), 1.0, -10.0, 1000)
    b = PrmfFitResult((10, 10), np.full(100, 0.01), 0.5, -10.0, 1000)
    assert select_model([b, a]) is a
    # the larger mesh gains less than its penalty
    small, large = _result((5, 5), 1.0), _result((20, 20), 0.9)
    assert select_model([large, small]) is small
    with pytest.raises(DomainError):
        select_model([])


def test_predict_reproduces_generating_model():
    spec = small_spec(sigma=0.0)
    data = generate_dataset(spec)
    pred = predict_rande(spec.generation_weights(), spec.generation_mesh(), spec.ic,
                         spec.time_grid, spec.spatial_grid)
    assert np.max(np.abs(pred.values - data.u_clean.values)) <= 10 * spec.rel_tol


def test_predict_single_atom_is_fisher_kpp():
    spec = small_spec()
    mesh = build_mesh(OMEGA_D, 3, OMEGA_RHO, 3)
    w = np.zeros(9)
    w[4] = 1.0
    pred = predict_rande(w, mesh, InitialCondition(), spec.time_grid, spec.spatial_grid)
    ref = solve_fisher_kpp(PhenotypeNode(0.06, 6.0), InitialCondition(), spec.spatial_grid,
                           spec.time_grid)
    assert np.max(np.abs(pred.values - ref.values)) <= 10 * spec.rel_tol


def test_predict_rejects_off_simplex():
    spec = small_spec()
    with pytest.raises(DomainError):
        predict_rande(np.full(4, 0.3), build_mesh(OMEGA_D, 2, OMEGA_RHO, 2), InitialCondition(),
                      spec.time_grid, spec.spatial_grid)
