"""Mixture clustering of estimate clouds and the per-mode report."""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odemodes.defects import DefectSpec, find_roots
from odemodes.inference import Normal
from odemodes.mixture import (
    COV_FLOOR,
    MixtureFit,
    assign,
    fit_em,
    mode_report,
    report_columns,
    split_init,
    write_mode_report,
)
from odemodes.models import AFFINE

GOOD_PRIORS = {"beta_c": Normal(1.43, 2.0), "log_beta1": Normal(-0.00904, 2.0)}
MID_PRIORS = {"beta_c": Normal(4.26, 2.0), "log_beta1": Normal(1.09, 2.0)}
FLAT_PRIORS = {"beta_c": Normal(1.0, 10.0), "log_beta1": Normal(0.0, 10.0)}

GOOD_MODE = (9.96, 0.992)
BAD_MODE = (49.26, 4.9112)


def two_blobs(rng, n_a=1000, n_b=1000):
    a = rng.normal([10.0, 1.0], [0.5, 0.05], size=(n_a, 2))
    b = rng.normal([50.0, 5.0], [0.5, 0.05], size=(n_b, 2))
    return np.vstack([a, b])


def mixture_loglik(pts, weights, means, covs):
    """Reference mixture log likelihood, independent of the module."""
    pts = np.asarray(pts, dtype=float)
    n, d = pts.shape
    log_r = np.empty((n, len(weights)))
    for k, (w, mean, cov) in enumerate(zip(weights, means, covs)):
        chol = np.linalg.cholesky(np.asarray(cov))
        solved = np.linalg.solve(chol, (pts - np.asarray(mean)).T)
        maha = np.sum(solved * solved, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        log_r[:, k] = math.log(w) - 0.5 * (maha + logdet + d * math.log(2 * math.pi))
    top = log_r.max(axis=1)
    return float(np.sum(top + np.log(np.exp(log_r - top[:, None]).sum(axis=1))))


def test_split_init_separates_by_first_dimension():
    pts = [(9.9, 0.99), (10.1, 1.01), (49.9, 4.9), (50.1, 5.1)]
    weights, means, covs = split_init(pts)
    assert weights.tolist() == [0.5, 0.5]
    assert means[0] == pytest.approx([10.0, 1.0])
    assert means[1] == pytest.approx([50.0, 5.0])
    assert covs[0].shape == (2, 2)


def test_split_init_identical_points_fall_back_to_halves():
    pts = [(1.0, 2.0)] * 4
    weights, means, covs = split_init(pts)
    assert weights.tolist() == [0.5, 0.5]
    assert means[0] == pytest.approx([1.0, 2.0])
    assert means[1] == pytest.approx([1.0, 2.0])


def test_fit_em_recovers_two_well_separated_blobs():
    pts = two_blobs(np.random.default_rng(11))
    fit = fit_em(pts)
    assert fit.n_components == 2
    assert fit.converged and not fit.degenerate
    assert fit.means[0] == pytest.approx((10.0, 1.0), abs=0.2)
    assert fit.means[1] == pytest.approx((50.0, 5.0), abs=0.2)
    assert fit.weights[0] == pytest.approx(0.5, abs=0.03)
    assert fit.separation > 5.0
    labels = assign(fit, pts)
    assert set(labels[:1000]) == {0}
    assert set(labels[1000:]) == {1}


def test_fit_em_recovers_unequal_weights():
    pts = two_blobs(np.random.default_rng(12), n_a=700, n_b=300)
    fit = fit_em(pts)
    assert fit.weights[0] == pytest.approx(0.7, abs=0.02)
    assert fit.weights[1] == pytest.approx(0.3, abs=0.02)


def test_fit_em_single_blob_is_not_two_modes():
    rng = np.random.default_rng(13)
    pts = rng.normal([10.0, 1.0], [0.5, 0.05], size=(500, 2))
    fit = fit_em(pts)
    assert fit.degenerate or fit.mean_distance < 0.1 * fit.pooled_sd or fit.separation < 5.0


def test_fit_em_canonical_order_and_row_permutation():
    pts = two_blobs(np.random.default_rng(14), n_a=200, n_b=200)
    fit = fit_em(pts)
    assert fit.means[0][0] < fit.means[1][0]
    flipped = fit_em(pts[::-1])
    assert flipped.means[0] == pytest.approx(fit.means[0], rel=1e-6)
    assert flipped.means[1] == pytest.approx(fit.means[1], rel=1e-6)
    assert flipped.weights == pytest.approx(fit.weights, rel=1e-6)


def test_fit_em_too_few_points_degenerates():
    pts = [(1.0, 1.0), (1.1, 1.0), (5.0, 2.0), (5.1, 2.0), (5.2, 2.1)]
    fit = fit_em(pts)  # 5 < 2 * (d + 1) for d = 2
    assert fit.n_components == 1
    assert fit.degenerate


def test_fit_em_duplicate_points_hit_the_covariance_floor():
    pts = [(1.0, 1.0)] * 10 + [(2.0, 2.0)] * 10
    fit = fit_em(pts)
    assert fit.floored
    assert fit.means[0] == pytest.approx((1.0, 1.0))
    assert fit.means[1] == pytest.approx((2.0, 2.0))
    for cov in fit.covariances:
        for i in range(2):
            assert cov[i][i] <= 2.0 * COV_FLOOR


def test_fit_em_validation():
    with pytest.raises(ValueError):
        fit_em([(1.0, 1.0)] * 10, n_components=3)
    with pytest.raises(ValueError):
        fit_em(np.empty((0, 2)))
    with pytest.raises(ValueError):
        fit_em([(1.0, math.nan)] * 10)


def test_fit_em_weighted_mean_matches_grand_mean():
    pts = two_blobs(np.random.default_rng(15), n_a=300, n_b=100)
    fit = fit_em(pts)
    assert fit.n_components == 2
    weighted = np.zeros(2)
    for w, mean in zip(fit.weights, fit.means):
        weighted += w * np.asarray(mean)
    assert weighted == pytest.approx(pts.mean(axis=0), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    n_a=st.integers(min_value=4, max_value=20),
    n_b=st.integers(min_value=4, max_value=20),
    offset=st.floats(min_value=1.0, max_value=30.0),
)
def test_fit_em_never_decreases_the_starting_loglik(seed, n_a, n_b, offset):
    rng = np.random.default_rng(seed)
    a = rng.normal([0.0, 0.0], 1.0, size=(n_a, 2))
    b = rng.normal([offset, 0.5], 1.0, size=(n_b, 2))
    pts = np.vstack([a, b])
    weights, means, covs = split_init(pts)
    start = mixture_loglik(pts, weights, means, covs)
    fit = fit_em(pts)
    assert math.isfinite(fit.loglik)
    assert sum(fit.weights) == pytest.approx(1.0, abs=1e-9)
    if fit.n_components == 2:
        assert fit.loglik >= start - 1e-6
        assert fit.means[0][0] <= fit.means[1][0]


def single_component_fit(mean, sd=(0.05, 0.005), weight=1.0):
    cov = ((sd[0] ** 2, 0.0), (0.0, sd[1] ** 2))
    return MixtureFit((1.0,), (tuple(mean),), (cov,), 0.0, 1, True)


def two_component_fit(mean_a, mean_b, sd=(0.05, 0.005)):
    cov = ((sd[0] ** 2, 0.0), (0.0, sd[1] ** 2))
    return MixtureFit(
        (0.5, 0.5), (tuple(mean_a), tuple(mean_b)), (cov, cov), 0.0, 1, True
    )


def test_mode_report_prior_density_at_the_prior_centre():
    # A component whose sampling-scale image sits exactly on both prior
    # centres scores the product of the two peak densities, 1 / (8 pi).
    rate = math.exp(-0.00904)
    mean = (1.43 + rate * 8.57, rate)
    fit = single_component_fit(mean)
    (summary,) = mode_report(AFFINE, fit, GOOD_PRIORS, y_bar=8.57)
    assert summary.prior_density_sampling == pytest.approx(
        1.0 / (8.0 * math.pi), rel=1e-9
    )
    assert summary.prior_density_natural == pytest.approx(
        summary.prior_density_sampling / rate, rel=1e-9
    )


def test_mode_report_midpoint_prior_scores_both_modes_evenly():
    fit = two_component_fit(GOOD_MODE, BAD_MODE)
    good, bad = mode_report(AFFINE, fit, MID_PRIORS, y_bar=8.57)
    for s in (good, bad):
        assert 0.009 < s.prior_density_sampling < 0.018
    ratio = max(good.prior_density_sampling, bad.prior_density_sampling) / min(
        good.prior_density_sampling, bad.prior_density_sampling
    )
    assert ratio < 1.35


def test_mode_report_flat_prior_scores_both_modes_evenly():
    fit = two_component_fit(GOOD_MODE, BAD_MODE)
    good, bad = mode_report(AFFINE, fit, FLAT_PRIORS, y_bar=8.57)
    ratio = good.prior_density_sampling / bad.prior_density_sampling
    assert 1.0 / 1.3 < ratio < 1.3


def test_mode_report_matches_components_to_defect_roots():
    predicted = find_roots(DefectSpec(h=0.5, beta1_true=1.0, alpha=10.0))
    fit = two_component_fit(GOOD_MODE, BAD_MODE)
    good, bad = mode_report(AFFINE, fit, GOOD_PRIORS, 8.57, predicted=predicted)
    assert good.nearest_root == pytest.approx(1.0007952210313131, rel=1e-9)
    assert bad.nearest_root == pytest.approx(4.911173911932612, rel=1e-9)
    assert good.rel_err_beta1 == pytest.approx(
        abs(0.992 - good.nearest_root) / good.nearest_root, rel=1e-9
    )
    assert bad.predicted_mean == pytest.approx(
        (10.0 * bad.nearest_root, bad.nearest_root), rel=1e-9
    )
    assert good.component == 0 and bad.component == 1
    assert good.weight == 0.5


def test_mode_report_without_prediction_leaves_roots_unset():
    fit = single_component_fit(GOOD_MODE)
    (summary,) = mode_report(AFFINE, fit, GOOD_PRIORS, 8.57)
    assert summary.nearest_root is None
    assert summary.rel_err_beta1 is None
    assert summary.predicted_mean is None


def test_mode_report_invalid_mean_yields_nan_densities():
    fit = single_component_fit((10.0, -0.5))
    (summary,) = mode_report(AFFINE, fit, GOOD_PRIORS, 8.57)
    assert math.isnan(summary.prior_density_sampling)
    assert math.isnan(summary.prior_density_natural)


def test_write_mode_report_round_trips_columns(tmp_path):
    predicted = find_roots(DefectSpec(h=0.5, beta1_true=1.0, alpha=10.0))
    fit = two_component_fit(GOOD_MODE, BAD_MODE)
    summaries = mode_report(AFFINE, fit, GOOD_PRIORS, 8.57, predicted=predicted)
    path = tmp_path / "mixture_report.csv"
    write_mode_report(path, AFFINE, summaries)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == report_columns(AFFINE)
    assert len(rows) == 2
    assert float(rows[1]["nearest_root"]) == pytest.approx(4.911173911932612)
    assert float(rows[0]["weight"]) == 0.5


def test_mixture_fit_validation_and_separation():
    with pytest.raises(ValueError):
        MixtureFit((0.5, 0.5), ((1.0,),), (((1.0,),),), 0.0, 1, True)
    with pytest.raises(ValueError):
        MixtureFit(
            (0.4, 0.3, 0.3),
            ((1.0,), (2.0,), (3.0,)),
            (((1.0,),), ((1.0,),), ((1.0,),)),
            0.0, 1, True,
        )
    flat = MixtureFit(
        (0.5, 0.5), ((0.0,), (3.0,)), (((0.0,),), ((0.0,),)), 0.0, 1, True
    )
    assert flat.pooled_sd == 0.0
    assert flat.separation == math.inf
    lone = single_component_fit((1.0, 1.0))
    assert lone.mean_distance == 0.0
    assert assign(lone, [(0.0, 0.0), (9.0, 9.0)]).tolist() == [0, 0]
