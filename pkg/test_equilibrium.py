import logging

import numpy as np
import pytest

from core.errors import ContractViolation, NegativeEntries, NonContractive, NotConverged
from core.models import Params, SolveOptions
from equilibrium import (
    closed_form_equilibrium,
    contraction_diagnostics,
    equilibrium_for,
    lemma4_gap,
    solve_forward,
)
from model import feature_map, relu


def _params(d=4, m=8, gamma0=0.5, seed=0, nonnegative=False):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    if nonnegative:
        A = np.abs(A)
    return Params(
        W=rng.standard_normal((d, m)),
        A=A,
        b=rng.standard_normal(m),
        gamma=gamma0 / np.linalg.norm(A, 2),
    ).validate()


def _inputs(N=5, d=4, seed=1):
    X = np.random.default_rng(seed).standard_normal((N, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def test_forward_solution_is_a_fixed_point():
    params = _params()
    Phi = feature_map(_inputs(), params.W)
    state = solve_forward(params, Phi)
    assert state.converged
    gap = np.linalg.norm(relu(params.gamma * state.Z @ params.A + Phi) - state.Z)
    assert gap <= 1e-8
    assert np.all(state.Z >= 0.0)
    np.testing.assert_array_equal(state.E_mask, (Phi > 0).astype(float))


def test_zero_coupling_converges_in_two_sweeps():
    params = _params()
    params.A = np.zeros_like(params.A)
    Phi = feature_map(_inputs(), params.W)
    state = solve_forward(params, Phi)
    assert state.iterations == 2
    np.testing.assert_allclose(state.Z, Phi)


def test_zero_features_converge_immediately():
    params = _params()
    state = solve_forward(params, np.zeros((5, params.m)))
    assert state.iterations == 1
    assert state.converged
    assert not state.Z.any()


def test_closed_form_matches_picard_for_nonnegative_coupling():
    params = _params(nonnegative=True)
    Phi = feature_map(_inputs(), params.W)
    picard = solve_forward(params, Phi, SolveOptions.tight())
    closed = closed_form_equilibrium(Phi, params.A, params.gamma)
    np.testing.assert_allclose(picard.Z, closed, atol=1e-10)


def test_closed_form_rejects_negative_coupling():
    params = _params()
    Phi = feature_map(_inputs(), params.W)
    with pytest.raises(NegativeEntries):
        closed_form_equilibrium(Phi, params.A, params.gamma)


def test_unconverged_solve_is_flagged_and_logged(caplog):
    params = _params(gamma0=0.9)
    Phi = feature_map(_inputs(), params.W)
    caplog.set_level(logging.WARNING)
    state = solve_forward(params, Phi, SolveOptions(max_iter=2))
    assert not state.converged
    assert state.iterations == 2
    assert "forward solve stopped" in caplog.text


def test_unconverged_solve_can_raise_with_state():
    params = _params(gamma0=0.9)
    Phi = feature_map(_inputs(), params.W)
    with pytest.raises(NotConverged) as excinfo:
        solve_forward(params, Phi, SolveOptions(max_iter=2), raise_unconverged=True)
    assert excinfo.value.state.iterations == 2


def test_contraction_check_rejects_large_gamma():
    params = _params()
    params.A = params.A * (1.5 / (params.gamma * np.linalg.norm(params.A, 2)))
    with pytest.raises(NonContractive) as excinfo:
        solve_forward(params, np.ones((2, params.m)), SolveOptions(check_contraction=True))
    assert excinfo.value.gamma_norm == pytest.approx(1.5, rel=1e-6)


def test_warm_start_from_the_equilibrium_stops_after_one_sweep():
    params = _params()
    Phi = feature_map(_inputs(), params.W)
    cold = solve_forward(params, Phi)
    warm = solve_forward(params, Phi, SolveOptions(warm_start=True), Z0=cold.Z)
    assert warm.iterations == 1
    assert cold.iterations > 1


def test_equilibrium_for_applies_the_feature_map():
    params = _params()
    X = _inputs()
    np.testing.assert_allclose(
        equilibrium_for(params, X).Z,
        solve_forward(params, feature_map(X, params.W)).Z,
    )


def test_residual_ratios_respect_the_contraction_factor():
    params = _params(gamma0=0.6)
    state = solve_forward(params, feature_map(_inputs(), params.W))
    ratios = contraction_diagnostics(state.residual_trace)
    assert len(ratios) == len(state.residual_trace) - 1
    assert max(ratios) <= 0.6 * (1.0 + 1e-6)


def test_contraction_diagnostics_needs_two_residuals():
    with pytest.raises(ContractViolation):
        contraction_diagnostics([1.0])


def test_equilibrium_perturbation_stays_within_bound():
    rng = np.random.default_rng(3)
    params = _params()
    X = _inputs()
    Wb = params.W + 1e-2 * rng.standard_normal(params.W.shape)
    Ab = params.A + 1e-2 * rng.standard_normal(params.A.shape)
    gap = lemma4_gap(params.W, params.A, Wb, Ab, X, params.gamma * 0.9)
    assert gap["gamma0"] < 1.0
    assert gap["actual"] <= gap["bound"] + gap["tolerance"]
    assert gap["actual"] > 0.0
