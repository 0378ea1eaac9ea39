"""Posterior evaluation, the sampler, the optimiser, and chain tables."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odemodes.defects import DefectSpec, find_roots, single_step_poly
from odemodes.inference import (
    ACCEPT_HI,
    ACCEPT_LO,
    LBFGS,
    MCMC,
    ChainResult,
    FitConfig,
    Normal,
    Posterior,
    chain_columns,
    default_priors,
    natural_estimates,
    params_to_theta,
    read_chains,
    run_lbfgs,
    run_mcmc,
    theta_to_params,
    write_chains,
)
from odemodes.integrators import analytic_config, rk4_config, rk45_config
from odemodes.models import AFFINE, CANHAM, AffineParams, CanhamParams
from odemodes.simulate import make_series

TRUTH = AffineParams(10.0, 1.0)
BAD_RATE = max(find_roots(DefectSpec(h=0.5, beta1_true=1.0, alpha=10.0)).roots)
BAD = AffineParams(10.0 * BAD_RATE, BAD_RATE)


def test_default_priors_values():
    affine = default_priors(AFFINE)
    assert affine["beta_c"] == Normal(1.0, 2.0)
    assert affine["log_beta1"] == Normal(0.0, 2.0)
    canham = default_priors(CANHAM)
    assert canham["log_g_max"] == Normal(math.log(0.8), 1.0)
    assert canham["log_y_max"] == Normal(math.log(8.0), 1.0)
    assert canham["log_k"] == Normal(0.0, 1.0)
    with pytest.raises(ValueError):
        default_priors("gompertz")


def test_normal_validation_and_density():
    with pytest.raises(ValueError):
        Normal(0.0, 0.0)
    n = Normal(2.0, 0.5)
    assert n.pdf(2.0) == pytest.approx(1.0 / (0.5 * math.sqrt(2.0 * math.pi)))
    assert n.logpdf(2.5) == pytest.approx(math.log(n.pdf(2.5)))


def test_normal_draw_statistics():
    rng = np.random.default_rng(7)
    n = Normal(1.0, 0.5)
    draws = np.array([n.draw(rng) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(1.0, abs=0.02)
    assert draws.std() == pytest.approx(0.5, abs=0.02)
    tight = Normal(1.0, 0.001)
    tight_draws = [tight.draw(rng) for _ in range(1000)]
    assert all(abs(x - 1.0) < 0.005 for x in tight_draws)


@settings(max_examples=200, deadline=None)
@given(
    beta0=st.floats(min_value=-50.0, max_value=200.0),
    beta1=st.floats(min_value=0.05, max_value=30.0),
    y_bar=st.floats(min_value=0.0, max_value=20.0),
)
def test_affine_theta_round_trip(beta0, beta1, y_bar):
    theta = params_to_theta(AFFINE, AffineParams(beta0, beta1), y_bar)
    back = theta_to_params(AFFINE, theta, y_bar)
    assert back.beta1 == pytest.approx(beta1, rel=1e-12)
    assert back.beta0 == pytest.approx(beta0, abs=1e-9 * (1.0 + abs(beta0)))


def test_canham_theta_round_trip():
    params = CanhamParams(0.8, 8.0, 1.0)
    theta = params_to_theta(CANHAM, params, y_bar=12.3)
    assert theta == pytest.approx((math.log(0.8), math.log(8.0), 0.0))
    back = theta_to_params(CANHAM, theta, y_bar=12.3)
    assert back.g_max == pytest.approx(0.8)
    assert back.y_max == pytest.approx(8.0)
    assert back.k == pytest.approx(1.0)


def test_natural_estimates_names():
    est = natural_estimates(AFFINE, (1.43, 0.0), y_bar=8.57)
    assert set(est) == {"beta0", "beta1"}
    assert est["beta0"] == pytest.approx(10.0)
    assert est["beta1"] == 1.0
    est_c = natural_estimates(CANHAM, (0.0, 0.0, 0.0), y_bar=0.0)
    assert set(est_c) == {"g_max", "y_max", "k"}


def test_params_to_theta_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        params_to_theta(AFFINE, AffineParams(10.0, -1.0), y_bar=8.57)


def test_posterior_validation(master_series):
    with pytest.raises(ValueError):
        Posterior("gompertz", master_series, analytic_config())
    with pytest.raises(ValueError):
        Posterior(AFFINE, master_series, analytic_config(), error_sd=0.0)
    with pytest.raises(ValueError):
        Posterior(CANHAM, master_series, analytic_config())
    with pytest.raises(ValueError):
        Posterior(
            AFFINE, master_series, analytic_config(),
            priors={"beta_c": Normal(1.0, 2.0)},
        )
    # Observation gaps of 1.0 are not whole multiples of h = 0.3.
    with pytest.raises(ValueError):
        Posterior(AFFINE, master_series, rk4_config(0.3))
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    assert post.coords == ("beta_c", "log_beta1")
    assert post.dim == 2


def test_prior_density_at_centre_is_one_over_eight_pi(master_series):
    post = Posterior(AFFINE, master_series, analytic_config())
    assert post.prior_density((1.0, 0.0)) == pytest.approx(
        1.0 / (8.0 * math.pi), rel=1e-12
    )


def test_log_posterior_guards(master_series):
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    assert post.log_posterior_parts((math.nan, 0.0)) == (-math.inf, -math.inf)
    loglik, logprior = post.log_posterior_parts((1.0, 800.0))
    assert loglik == -math.inf
    assert math.isfinite(logprior)
    with pytest.raises(ValueError):
        post.log_posterior_parts((1.0,))


def test_noiseless_analytic_likelihood_attains_maximum(master_series):
    clean = make_series(master_series.times, master_series.y_true, master_series.y_true)
    post = Posterior(AFFINE, clean, analytic_config())
    theta = params_to_theta(AFFINE, TRUTH, clean.y_bar)
    best = -len(clean.times) * (math.log(0.1) + 0.5 * math.log(2.0 * math.pi))
    assert post.log_likelihood(theta) == pytest.approx(best, abs=1e-9)
    for other in [(1.4, 0.05), (1.5, 0.0), (1.43, -0.1)]:
        assert post.log_likelihood(other) < best


def test_fixed_step_modes_have_nearly_equal_likelihood(master_series):
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    ll_bad = post.log_likelihood(params_to_theta(AFFINE, BAD, master_series.y_bar))
    ll_good = post.log_likelihood(
        params_to_theta(AFFINE, AffineParams(9.956, 0.9917), master_series.y_bar)
    )
    assert math.isfinite(ll_bad) and math.isfinite(ll_good)
    assert abs(ll_bad - ll_good) < 2.0


def test_erroneous_mode_projects_onto_the_true_trajectory(master_series):
    # At a defect root the fixed-step update from (alpha*b, b) equals the
    # exact decay map of the true rate, so the in-model trajectory lands
    # on the truth to machine precision.
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    preds_bad = post.predict(BAD)
    for pred, true in zip(preds_bad, master_series.y_true):
        assert pred == pytest.approx(true, abs=1e-9)
    preds_good = post.predict(AffineParams(9.956, 0.9917))
    rmse = math.sqrt(
        sum((a - b) ** 2 for a, b in zip(preds_bad, preds_good)) / len(preds_bad)
    )
    assert rmse < 0.05


def test_adaptive_backend_separates_the_modes(master_series):
    post = Posterior(AFFINE, master_series, rk45_config())
    ll_truth = post.log_likelihood(params_to_theta(AFFINE, TRUTH, master_series.y_bar))
    ll_bad = post.log_likelihood(params_to_theta(AFFINE, BAD, master_series.y_bar))
    assert ll_truth - ll_bad > 100.0


def test_fixed_step_likelihood_matches_step_polynomial(master_series):
    # One observation gap = one step at h = 1, so the likelihood must
    # agree with chaining the closed-form step polynomial by hand.
    post = Posterior(AFFINE, master_series, rk4_config(1.0))
    params = AffineParams(8.7, 0.9)
    spec = DefectSpec(h=1.0, beta1_true=0.9, alpha=params.alpha)
    y = master_series.y_obs[0]
    preds = [y]
    for _ in range(len(master_series.times) - 1):
        y = single_step_poly(spec, y, 0.9)
        preds.append(y)
    manual = -sum(
        0.5 * ((obs - pred) / 0.1) ** 2
        for obs, pred in zip(master_series.y_obs, preds)
    ) - len(preds) * (math.log(0.1) + 0.5 * math.log(2.0 * math.pi))
    theta = params_to_theta(AFFINE, params, master_series.y_bar)
    assert post.log_likelihood(theta) == pytest.approx(manual, abs=1e-9)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"error_sd": 0.0},
        {"warmup": -1},
        {"samples": 0},
        {"target_accept": 1.0},
        {"adapt_window": 0},
        {"init_retries": 0},
        {"init_candidates": 0},
        {"max_iter": 0},
        {"memory": 0},
        {"grad_step": 0.0},
        {"grad_tol": 0.0},
    ],
)
def test_fit_config_validation(kwargs):
    with pytest.raises(ValueError):
        FitConfig(**kwargs)


def test_run_mcmc_is_deterministic_and_healthy(master_series):
    post = Posterior(AFFINE, master_series, analytic_config())
    cfg = FitConfig()
    a = run_mcmc(post, cfg, seed=1, chain=0)
    b = run_mcmc(post, cfg, seed=1, chain=0)
    c = run_mcmc(post, cfg, seed=1, chain=1)
    assert a.estimates == b.estimates
    assert a.accept_rate == b.accept_rate
    assert a.estimates != c.estimates
    assert a.ok and a.method == MCMC
    assert ACCEPT_LO <= a.accept_rate <= ACCEPT_HI
    assert a.converged
    assert a.estimates["beta0"] == pytest.approx(10.0, abs=1.0)
    assert a.estimates["beta1"] == pytest.approx(1.0, abs=0.2)
    assert a.wall_time > 0.0


def test_run_mcmc_started_at_the_erroneous_mode_stays_there(master_series):
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    init = params_to_theta(AFFINE, BAD, master_series.y_bar)
    cfg = FitConfig(warmup=800, samples=800, init=init)
    result = run_mcmc(post, cfg, seed=3, chain=0)
    assert result.ok
    assert result.estimates["beta1"] == pytest.approx(BAD_RATE, abs=0.4)
    assert result.estimates["beta0"] == pytest.approx(10.0 * BAD_RATE, abs=4.0)


def test_run_lbfgs_refines_the_erroneous_mode(master_series):
    post = Posterior(AFFINE, master_series, rk4_config(0.5))
    init = params_to_theta(AFFINE, BAD, master_series.y_bar)
    cfg = FitConfig(init=init)
    result = run_lbfgs(post, cfg, seed=5, chain=0)
    assert result.ok and result.converged
    assert result.method == LBFGS
    assert result.accept_rate is None
    assert result.estimates["beta1"] == pytest.approx(4.91, abs=0.3)
    assert result.estimates["beta0"] == pytest.approx(49.1, abs=3.0)
    again = run_lbfgs(post, cfg, seed=5, chain=0)
    assert again.estimates == result.estimates


def test_chain_table_round_trip(tmp_path):
    results = [
        ChainResult(
            seed=1, chain=0, method=MCMC,
            estimates={"beta0": 9.96, "beta1": 0.992},
            accept_rate=0.31, converged=True, wall_time=1.23,
        ),
        ChainResult(
            seed=1, chain=1, method=MCMC,
            estimates={}, accept_rate=0.02, converged=False,
            failure="acceptance rate outside the healthy band", wall_time=0.5,
        ),
    ]
    path = tmp_path / "chains.csv"
    write_chains(path, AFFINE, results)
    back = read_chains(path, AFFINE)
    assert back == [replace(r, wall_time=0.0) for r in results]
    assert not back[1].ok
    header = path.read_text().splitlines()[0]
    assert header == ",".join(chain_columns(AFFINE))
    assert "wall_time" not in header
