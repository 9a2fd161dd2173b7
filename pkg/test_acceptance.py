"""End-to-end property suites at the sizes the published experiments use (reduced where noted)."""

import numpy as np
import pytest

from core.artifacts import render_csv
from core.models import CSV_COLUMNS, Params, SolveOptions, TrainConfig
from data import synthetic
from equilibrium import closed_form_equilibrium, contraction_diagnostics, lemma4_gap, solve_forward
from implicit_grad import loss_and_gradients
from initialization import deterministic_init, estimate_lambda_star, identity_init, scale_to_satisfy
from model import feature_map
from trainer import gamma_sweep, train, verify_theorem2
from verify import (
    compare_gradients,
    dense_lemma2_gradients,
    finite_diff_gradients,
    sample_mask_stable_instance,
    unrolled_gradients,
)


def _unit_rows(rng, N, d):
    X = rng.standard_normal((N, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


@pytest.mark.parametrize("seed", range(50))
def test_picard_matches_closed_form_for_nonnegative_coupling(seed):
    rng = np.random.default_rng(seed)
    N, d, m = 6, 4, 8
    A = np.abs(rng.standard_normal((m, m)))
    params = Params(W=rng.standard_normal((d, m)), A=A, b=np.zeros(m), gamma=0.5 / np.linalg.norm(A, 2)).validate()
    Phi = feature_map(_unit_rows(rng, N, d), params.W)

    state = solve_forward(params, Phi)
    closed = closed_form_equilibrium(Phi, params.A, params.gamma)
    assert np.linalg.norm(state.Z - closed) <= 1e-8
    assert np.linalg.norm(state.Z) <= np.linalg.norm(Phi) / 0.5 + 1e-9
    assert max(contraction_diagnostics(state.residual_trace)) <= 0.5 + 1e-9


@pytest.mark.parametrize("seed", range(50))
def test_equilibrium_gap_never_exceeds_its_bound(seed):
    rng = np.random.default_rng(1000 + seed)
    N, d, m = 3, 2, 4
    Wa, Wb = rng.standard_normal((d, m)), rng.standard_normal((d, m))
    Aa, Ab = rng.standard_normal((m, m)), rng.standard_normal((m, m))
    gamma = 0.5 / max(np.linalg.norm(Aa, 2), np.linalg.norm(Ab, 2))
    gap = lemma4_gap(Wa, Aa, Wb, Ab, _unit_rows(rng, N, d), gamma)
    assert gap["actual"] <= gap["bound"] + 10.0 * gap["tolerance"]


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_gradients_agree_with_every_oracle(seed):
    params, data = sample_mask_stable_instance(N=4, d=3, m=5, gamma0=0.5, seed=seed)
    implicit = loss_and_gradients(params, data, SolveOptions.tight()).grads
    assert max(compare_gradients(implicit, dense_lemma2_gradients(params, data)).values()) <= 1e-9
    assert max(compare_gradients(implicit, unrolled_gradients(params, data, 300)).values()) <= 1e-7
    assert max(compare_gradients(implicit, finite_diff_gradients(params, data)).values()) <= 1e-5


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_certified_training_holds_every_monitor(seed):
    data = synthetic(N=50, d=10, seed=seed)
    scaled = scale_to_satisfy(deterministic_init(data.X, m=100, seed=seed), data)
    config = TrainConfig(eta=scaled.report.eta_max, epochs=2000)
    result = train(scaled.params, data, config, report=scaled.report)
    assert verify_theorem2(result.log, scaled.report) == []


@pytest.mark.parametrize(
    "N, m, epochs",
    [(5, 20, 10), pytest.param(50, 100, 2000, marks=pytest.mark.slow)],
)
def test_certified_log_is_reproducible(N, m, epochs):
    data = synthetic(N=N, d=10, seed=0)
    scaled = scale_to_satisfy(deterministic_init(data.X, m=m, seed=0), data)
    config = TrainConfig(eta=scaled.report.eta_max, epochs=epochs)

    def rendered():
        log = train(scaled.params, data, config, report=scaled.report).log
        return render_csv(CSV_COLUMNS, (row.csv_values() for row in log.rows))

    assert rendered() == rendered()


@pytest.mark.slow
def test_forward_cost_grows_with_gamma():
    # The shared step has to stay below the output-layer curvature of the
    # largest gamma, about N / (2 pi (1 - gamma)^2).
    data = synthetic(N=200, d=20, seed=0, label_mode="teacher")
    config = TrainConfig(eta=5e-5, epochs=10, monitor_spectral=False)
    summaries = gamma_sweep(data, m=200, gammas=[0.1, 0.3, 0.5, 0.8], config=config)
    assert [summary.status for summary in summaries] == ["ok"] * 4
    for summary in summaries:
        losses = np.array([row.train_loss for row in summary.log.rows])
        assert np.all(np.isfinite(losses))
        assert losses[-1] < losses[0]
        assert summary.max_gammaA_opnorm < 1.0
    iterations = [summary.avg_forward_iters for summary in summaries]
    assert all(later > earlier for earlier, later in zip(iterations, iterations[1:]))


@pytest.mark.slow
def test_step_size_controls_monotonicity():
    data = synthetic(N=200, d=20, seed=0, label_mode="teacher")
    params = identity_init(d=20, m=200, gamma=0.1, seed=0)
    losses = {}
    for eta in (1e-1, 1.0 / data.N):
        config = TrainConfig(eta=eta, epochs=50, mode="experiment", monitor_spectral=False)
        losses[eta] = [row.train_loss for row in train(params, data, config).log.rows]
    large = np.diff(losses[1e-1])
    small = np.diff(losses[1.0 / data.N])
    assert np.any(large > 0.0) or not np.all(np.isfinite(losses[1e-1]))
    assert np.all(small <= 0.0)


def test_lambda_star_single_sample_is_one_half():
    x = np.array([[0.6, 0.8]])
    estimate = estimate_lambda_star(x, samples=100_000, seed=0)
    assert abs(estimate.value - 0.5) <= 3.0 * estimate.standard_error


def test_lambda_star_for_unit_rows_stays_below_one():
    X = _unit_rows(np.random.default_rng(0), 4, 3)
    estimate = estimate_lambda_star(X, samples=20_000, seed=1)
    assert estimate.value <= 1.0 + 3.0 * estimate.standard_error
