import numpy as np
import pytest

from core.errors import NonContractive, ShapeError, TooLarge
from core.models import EquilibriumState, Params, SolveOptions
from equilibrium import solve_forward
from model import feature_map
from spectral import gram_matrix, operator_norm, smallest_singular_value


def _instance(N=3, d=4, m=6, gamma0=0.5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    A = rng.standard_normal((m, m))
    params = Params(
        W=rng.standard_normal((d, m)),
        A=A,
        b=rng.standard_normal(m),
        gamma=gamma0 / np.linalg.norm(A, 2),
    ).validate()
    return params, X


def test_operator_norm_matches_largest_singular_value():
    M = np.random.default_rng(1).standard_normal((7, 5))
    assert operator_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-8)


def test_operator_norm_of_zero_matrix_is_zero():
    assert operator_norm(np.zeros((4, 4))) == 0.0


def test_operator_norm_of_scaled_identity():
    assert operator_norm(3.0 * np.eye(10)) == pytest.approx(3.0, rel=1e-10)


def test_smallest_singular_value_requires_wide_matrix():
    with pytest.raises(ShapeError):
        smallest_singular_value(np.ones((5, 3)))


def test_smallest_singular_value_matches_svd():
    M = np.random.default_rng(2).standard_normal((3, 8))
    expected = np.linalg.svd(M, compute_uv=False)[-1]
    assert smallest_singular_value(M) == pytest.approx(expected, rel=1e-10)


def test_gram_matrix_dominates_zzt():
    params, X = _instance()
    state = solve_forward(params, feature_map(X, params.W), SolveOptions.tight())
    diagnostics = gram_matrix(state, params, X)

    np.testing.assert_allclose(diagnostics.H, diagnostics.H.T)
    assert diagnostics.H.shape == (3, 3)
    assert diagnostics.lambda_min_H >= diagnostics.sigma_min_Z**2 * (1.0 - 1e-8) - 1e-12
    assert set(diagnostics.components) == {"ZZT", "MMT", "PiPiT"}
    assert diagnostics.components["MMT"] >= -1e-10


def test_gram_matrix_rejects_noncontractive_parameters():
    params, X = _instance()
    state = solve_forward(params, feature_map(X, params.W), SolveOptions.tight())
    loud = params.with_gamma(0.99)
    loud.A = params.A * (2.0 / (0.99 * np.linalg.norm(params.A, 2)))
    with pytest.raises(NonContractive):
        gram_matrix(state, loud, X)


def test_gram_matrix_refuses_large_systems():
    state = EquilibriumState(
        Z=np.zeros((100, 50)),
        D_mask=np.zeros((100, 50)),
        E_mask=np.zeros((100, 50)),
        iterations=1,
        residual=0.0,
        converged=True,
        tolerance=1e-10,
    )
    params = Params(W=np.zeros((2, 50)), A=np.zeros((50, 50)), b=np.zeros(50), gamma=0.5)
    with pytest.raises(TooLarge):
        gram_matrix(state, params, np.zeros((100, 2)))


@pytest.mark.parametrize("scale", [-2.5, 0.1, 7.0])
def test_smallest_singular_value_scales_with_the_matrix(scale):
    M = np.random.default_rng(3).standard_normal((3, 8))
    assert smallest_singular_value(scale * M) == pytest.approx(abs(scale) * smallest_singular_value(M), rel=1e-10)


def test_operator_norm_bounds_every_witness_ratio():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((9, 6))
    estimate = operator_norm(M)
    witnesses = list(rng.standard_normal((50, 6)))
    witnesses.append(np.linalg.svd(M)[2][0])
    for v in witnesses:
        assert estimate >= np.linalg.norm(M @ v) / np.linalg.norm(v) * (1.0 - 1e-8)


def test_gram_matrix_without_output_weights_is_zzt():
    params, X = _instance()
    params.b = np.zeros(params.m)
    state = solve_forward(params, feature_map(X, params.W), SolveOptions.tight())
    diagnostics = gram_matrix(state, params, X)
    np.testing.assert_allclose(diagnostics.H, state.Z @ state.Z.T, rtol=1e-12, atol=1e-14)


def test_gram_matrix_without_coupling_or_output_weights_is_phi_phit():
    params, X = _instance()
    params.A = np.zeros_like(params.A)
    params.b = np.zeros(params.m)
    Phi = feature_map(X, params.W)
    state = solve_forward(params, Phi, SolveOptions.tight())
    diagnostics = gram_matrix(state, params, X)
    np.testing.assert_allclose(diagnostics.H, Phi @ Phi.T, rtol=1e-12, atol=1e-14)
