import math

import numpy as np
import pytest

from core.errors import ContractViolation, DegenerateFeatures, GammaTooLarge, WidthTooSmall
from core.models import Dataset, SolveOptions
from data import normalize_rows, synthetic
from equilibrium import closed_form_equilibrium, solve_forward
from initialization import (
    check_conditions,
    deterministic_init,
    estimate_lambda_star,
    identity_init,
    linear_width_conditions,
    random_init,
    scale_to_satisfy,
    select_step_size,
)
from model import feature_map
from spectral import operator_norm


@pytest.fixture(scope="module")
def desk_data():
    return synthetic(N=5, d=10, seed=0)


@pytest.fixture(scope="module")
def scaled(desk_data):
    params = deterministic_init(desk_data.X, m=20, seed=1)
    return scale_to_satisfy(params, desk_data)


def test_deterministic_init_layout():
    X = synthetic(N=4, d=6, seed=0).X
    params = deterministic_init(X, m=12, beta=2.0, seed=3, gamma0=0.5, C2=1.0)
    w_norm = np.linalg.norm(params.W, 2)
    np.testing.assert_allclose(params.A, w_norm * np.eye(12), rtol=1e-8)
    assert not params.b.any()
    # gamma * (||A(0)|| + C2) = gamma0
    assert params.gamma * (w_norm + 1.0) == pytest.approx(0.5, rel=1e-8)


def test_deterministic_init_needs_width_at_least_n():
    X = synthetic(N=8, d=3, seed=0).X
    with pytest.raises(WidthTooSmall):
        deterministic_init(X, m=5)


def test_deterministic_init_rejects_gamma0_of_one():
    X = synthetic(N=4, d=3, seed=0).X
    with pytest.raises(GammaTooLarge):
        deterministic_init(X, m=8, gamma0=1.0)


def test_random_init_hits_target_contraction():
    params = random_init(d=5, m=30, seed=2, gamma0=0.4)
    assert np.all(params.A >= 0.0)
    assert params.gamma * np.linalg.norm(params.A, 2) == pytest.approx(0.4, rel=1e-8)


def test_identity_init_keeps_raw_gamma():
    params = identity_init(d=5, m=7, gamma=0.2, beta=3.0, seed=0)
    np.testing.assert_allclose(params.A, 3.0 * np.eye(7))
    assert params.gamma == 0.2
    assert not params.b.any()


def test_check_conditions_constants(desk_data):
    params = deterministic_init(desk_data.X, m=20, seed=1)
    report = check_conditions(params, desk_data, C1=1.0, C2=2.0, C3=3.0)
    assert report.lambda1 == pytest.approx(np.linalg.norm(params.W, 2) + 1.0, rel=1e-8)
    assert report.lambda2 == pytest.approx(np.linalg.norm(params.A, 2) + 2.0, rel=1e-8)
    assert report.lambda3 == pytest.approx(3.0)
    assert report.gamma0 == pytest.approx(params.gamma * report.lambda2)
    assert report.eta_max <= 4.0 / report.alpha0**2
    # b(0) = 0, so the initial residual is ||y||
    assert report.initial_residual_norm == pytest.approx(np.linalg.norm(desk_data.y))
    assert report.alpha0 >= report.alpha0_lower_bound * (1.0 - 1e-9)


def test_check_conditions_rejects_large_gamma(desk_data):
    params = identity_init(d=desk_data.d, m=20, gamma=0.6)
    with pytest.raises(GammaTooLarge):
        check_conditions(params, desk_data)


def test_scaling_satisfies_both_condition_sets(scaled):
    assert scaled.beta >= 1.0
    assert math.log2(scaled.beta).is_integer()
    assert scaled.report.gd_passed
    assert scaled.report.gf_passed
    assert scaled.report.gamma0 == pytest.approx(0.5, rel=1e-8)


def test_report_roundtrips_through_dict(scaled):
    payload = scaled.report.to_dict()
    assert payload["gd_conditions"] == [True, True, True]
    assert type(scaled.report).from_dict(payload) == scaled.report


def test_scaling_rejects_degenerate_features():
    X = normalize_rows(np.abs(np.random.default_rng(0).standard_normal((3, 4))))
    data = Dataset(X=X, y=np.ones(3)).validate()
    params = deterministic_init(X, m=6, seed=0)
    params.W = -np.abs(params.W)
    with pytest.raises(DegenerateFeatures):
        scale_to_satisfy(params, data)


def test_linear_width_conditions_match_a_hand_evaluation(desk_data):
    for beta in (1.0, 2.0**6, 2.0**12):
        params = deterministic_init(desk_data.X, m=20, beta=beta, seed=1)
        Phi = np.maximum(desk_data.X @ params.W, 0.0)
        lower = 2.0 / 3.0 * np.linalg.svd(Phi, compute_uv=False)[-1]
        lambda1 = np.linalg.norm(params.W, 2) + 1.0
        x_fro = np.linalg.norm(desk_data.X)
        y_norm = np.linalg.norm(desk_data.y)
        expected = (
            lower**2 >= 16.0 * lambda1 * x_fro * y_norm,
            lower**3 >= 128.0 * x_fro**2 * y_norm,
            lower**2 >= 128.0 * x_fro**2,
        )
        assert linear_width_conditions(params, desk_data) == expected
    assert linear_width_conditions(deterministic_init(desk_data.X, m=20, seed=1), desk_data) == (False, False, False)


def test_step_size_rules(desk_data, scaled):
    assert select_step_size("inverse_n", desk_data) == pytest.approx(1.0 / desk_data.N)
    assert select_step_size("certified", desk_data, scaled.report) == pytest.approx(0.99 * scaled.report.eta_max)
    assert select_step_size(0.25, desk_data) == 0.25
    with pytest.raises(ContractViolation):
        select_step_size("certified", desk_data)
    with pytest.raises(ContractViolation):
        select_step_size("largest", desk_data)


def test_lambda_star_estimate_is_reproducible():
    X = synthetic(N=4, d=3, seed=0).X
    first = estimate_lambda_star(X, samples=2000, seed=5)
    second = estimate_lambda_star(X, samples=2000, seed=5)
    assert first == second
    assert first.value >= 0.0
    assert first.standard_error >= 0.0
    assert first.samples == 2000


def test_lambda_star_needs_samples():
    with pytest.raises(ContractViolation):
        estimate_lambda_star(np.ones((2, 2)), samples=0)


def test_deterministic_init_scales_linearly_in_beta():
    X = synthetic(N=4, d=6, seed=0).X
    unit = deterministic_init(X, m=12, beta=1.0, seed=3)
    doubled = deterministic_init(X, m=12, beta=2.0, seed=3)
    np.testing.assert_array_equal(doubled.W, 2.0 * unit.W)
    np.testing.assert_array_equal(doubled.A, 2.0 * unit.A)
    np.testing.assert_array_equal(doubled.b, 2.0 * unit.b)


def test_deterministic_init_starts_at_the_closed_form_equilibrium():
    X = synthetic(N=10, d=5, seed=0).X
    params = deterministic_init(X, m=20, seed=0)
    Phi = feature_map(X, params.W)
    state = solve_forward(params, Phi, SolveOptions.tight())
    np.testing.assert_allclose(state.Z, closed_form_equilibrium(Phi, params.A, params.gamma), rtol=0, atol=1e-8)


@pytest.mark.parametrize("m", [64, 128])
def test_random_init_coupling_norm_grows_linearly_in_width(m):
    # half-normal entries: ||A|| >= mean(A) * m, so the norm tracks sqrt(2/pi) * m
    for seed in range(20):
        params = random_init(d=5, m=m, seed=seed)
        assert 0.7 <= np.linalg.norm(params.A, 2) / m <= 0.95


def test_random_init_is_seeded():
    first, second = random_init(d=5, m=30, seed=7), random_init(d=5, m=30, seed=7)
    for name in ("W", "A", "b"):
        np.testing.assert_array_equal(getattr(first, name), getattr(second, name))
    assert first.gamma == second.gamma
    assert not np.array_equal(first.W, random_init(d=5, m=30, seed=8).W)


def test_scaling_returns_the_first_passing_power_of_two():
    data = synthetic(N=20, d=10, seed=0)
    base = deterministic_init(data.X, m=40, seed=0)
    result = scale_to_satisfy(base, data)
    assert result.beta > 1.0
    assert result.report.gd_passed

    half = result.beta / 2.0
    a_norm = operator_norm(base.A)
    previous = base.scaled(half).with_gamma(0.5 / (half * a_norm + 1.0))
    assert not check_conditions(previous, data).gd_passed


def test_gradient_descent_conditions_imply_gradient_flow_ones():
    reports = []
    for seed in range(25):
        data = synthetic(N=4, d=3, seed=seed)
        base = deterministic_init(data.X, m=8, seed=seed)
        a_norm = operator_norm(base.A)
        for exponent in (0, 8, 16, 24):
            beta = 2.0**exponent
            reports.append(check_conditions(base.scaled(beta).with_gamma(0.5 / (beta * a_norm + 1.0)), data))
    assert len(reports) == 100
    assert any(report.gd_passed for report in reports)
    for report in reports:
        assert report.gd_conditions[0] <= report.gf_conditions[0]
        assert report.gd_conditions[1] <= report.gf_conditions[1]
        assert report.gf_passed or not report.gd_passed


def test_lambda_star_vanishes_for_duplicated_rows():
    X = synthetic(N=3, d=4, seed=0).X
    X = np.vstack([X, X[:1]])
    estimate = estimate_lambda_star(X, samples=5000, seed=0)
    assert estimate.value <= 1e-10


def test_report_is_usable_only_with_full_rank_features():
    data = synthetic(N=4, d=3, seed=0)
    params = deterministic_init(data.X, m=8, seed=0)
    assert check_conditions(params, data).usable

    duplicated = Dataset(X=np.vstack([data.X[:3], data.X[:1]]), y=data.y).validate()
    report = check_conditions(deterministic_init(duplicated.X, m=8, seed=0), duplicated)
    assert not report.usable
    with pytest.raises(ContractViolation):
        select_step_size("certified", duplicated, report)
