import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import as_fit_view
from rande_prmf.models import InitialCondition, PhenotypeNode, solve_fisher_kpp
from rande_prmf.numerics import DomainError, SpaceTimeField, SpatialGrid, TimeGrid
from rande_prmf.pointwise import (
    PointwiseFitConfig,
    PointwiseFitResult,
    decode,
    encode,
    fit_pointwise,
    fit_pointwise_sequence,
    pad_solution,
    simulate_pointwise,
)

SG = SpatialGrid(0.0, 2.0, 41)
TG = TimeGrid(0.0, 1.0, 21)


def model_data(D, rho, w):
    c0 = InitialCondition().evaluate(SG)
    return SpaceTimeField(simulate_pointwise(D, rho, w, c0, SG, TG.nodes), TG, SG)


@pytest.fixture(scope="module")
def two_phenotype_data():
    return as_fit_view(model_data([0.01, 0.1], [10.0, 1.0], [0.5, 0.5]))


def test_config_validation():
    with pytest.raises(DomainError):
        PointwiseFitConfig(M=0)
    with pytest.raises(DomainError):
        PointwiseFitConfig(D_bounds=(0.0, 0.5))
    with pytest.raises(DomainError):
        PointwiseFitConfig(rho_bounds=(5.0, 5.0))


@given(z=st.lists(st.floats(-20, 20), min_size=6, max_size=6))
def test_decode_stays_admissible(z):
    cfg = PointwiseFitConfig(M=2)
    D, rho, w = decode(np.array(z), cfg)
    assert np.all((0 <= D) & (D <= 0.12)) and np.all((0 <= rho) & (rho <= 12))
    assert abs(w.sum() - 1) < 1e-12 and w.min() >= 0


@given(D=st.lists(st.floats(1e-3, 0.119), min_size=3, max_size=3),
       rho=st.lists(st.floats(0.1, 11.9), min_size=3, max_size=3),
       w=st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
def test_encode_decode_round_trip(D, rho, w):
    cfg = PointwiseFitConfig(M=3)
    w = np.array(w) / np.sum(w)
    D2, rho2, w2 = decode(encode(D, rho, w, cfg), cfg)
    np.testing.assert_allclose(D2, D, rtol=1e-9)
    np.testing.assert_allclose(rho2, rho, rtol=1e-9)
    np.testing.assert_allclose(w2, w, rtol=1e-9)


def test_engines_agree():
    c0 = InitialCondition().evaluate(SG)
    args = ([0.01, 0.08], [9.0, 2.0], [0.3, 0.7], c0, SG, TG.nodes)
    a = simulate_pointwise(*args, engine="compiled")
    b = simulate_pointwise(*args, engine="numpy")
    assert np.max(np.abs(a - b)) <= 1e-5


def test_single_population_recovered():
    data = as_fit_view(model_data([0.03], [6.0], [1.0]))
    res = fit_pointwise(data, PointwiseFitConfig(M=1, n_starts=3, seed=1))
    assert res.weights.tolist() == [1.0]
    assert res.D[0] == pytest.approx(0.03, rel=0.02)
    assert res.rho[0] == pytest.approx(6.0, rel=0.02)


def test_sequence_nests_and_permutation_symmetry(two_phenotype_data):
    r1, r2 = fit_pointwise_sequence(two_phenotype_data, Ms=(1, 2), n_starts=2, seed=0)
    assert r2.sse_fit <= r1.sse_fit + 1e-12
    c0 = np.clip(two_phenotype_data.u_obs.values[0], 0, 1)
    u = two_phenotype_data.u_obs.values
    a = simulate_pointwise(r2.D, r2.rho, r2.weights, c0, SG, TG.nodes)
    b = simulate_pointwise(r2.D[::-1], r2.rho[::-1], r2.weights[::-1], c0, SG, TG.nodes)
    assert np.sum((a - u) ** 2) == pytest.approx(np.sum((b - u) ** 2), rel=1e-9, abs=1e-15)
    assert np.sum((a - u) ** 2) == pytest.approx(r2.sse_fit, rel=1e-9, abs=1e-15)


def test_padding_preserves_the_aggregate():
    res = PointwiseFitResult(np.array([0.02, 0.09]), np.array([8.0, 1.5]), np.array([0.7, 0.3]),
                             0.0)
    D, rho, w = pad_solution(res, 5)
    assert len(D) == 5 and w.sum() == pytest.approx(1.0)
    c0 = InitialCondition().evaluate(SG)
    a = simulate_pointwise(res.D, res.rho, res.weights, c0, SG, TG.nodes)
    b = simulate_pointwise(D, rho, w, c0, SG, TG.nodes)
    assert np.max(np.abs(a - b)) <= 1e-5
    with pytest.raises(DomainError):
        pad_solution(res, 1)


def test_fit_is_deterministic_and_parallel_safe(two_phenotype_data):
    cfg = PointwiseFitConfig(M=2, n_starts=3, seed=5, max_evals=150)
    a = fit_pointwise(two_phenotype_data, cfg)
    b = fit_pointwise(two_phenotype_data, cfg, workers=3)
    np.testing.assert_array_equal(a.q, b.q)
    assert a.start_sse == b.start_sse and a.n_evals == b.n_evals


def test_result_round_trip():
    res = PointwiseFitResult(np.array([0.01]), np.array([3.0]), np.array([1.0]), 0.25, [0.25], 9)
    back = PointwiseFitResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(back.q, res.q)
    assert back.sse_fit == res.sse_fit and back.M == 1
