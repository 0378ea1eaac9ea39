"""Two-component Gaussian-mixture clustering of fit estimates.

Replicated fits of the same data land in one tight cloud when the
posterior is effectively unimodal and in well-separated clouds when it
is not.  This module fits a mixture of (at most) two full-covariance
Gaussians to the natural-scale estimates by expectation-maximisation
and reports how far apart the fitted components sit relative to their
internal spread.  The verdict threshold itself lives with the audit
logic; here only the geometry is computed.

Components are kept in a canonical order (ascending mean along the
first estimate dimension) so "component 0" means the same thing across
runs.  When one component collapses to fewer points than a full
covariance can support, the fit falls back to a single Gaussian rather
than reporting a spurious second mode.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .defects import DefectRoots
from .inference import ESTIMATE_FIELDS, SAMPLING_COORDS, Normal, params_to_theta
from .models import AFFINE, AffineParams, CanhamParams

LOGLIK_TOL = 1e-8
MAX_ITERS = 500
COV_FLOOR = 1e-12


@dataclass(frozen=True)
class MixtureFit:
    """Fitted Gaussian mixture over estimate points.

    ``weights``, ``means`` and ``covariances`` are stored as nested
    tuples (components ordered by ascending first-dimension mean).
    ``converged`` reports whether the log-likelihood gain fell below
    tolerance within the iteration budget.  ``degenerate`` means the
    two-component structure is unsupported by the data (single-Gaussian
    fallback, or a component holding fewer than one expected point);
    ``floored`` means some component collapsed onto (numerically)
    identical points so its covariance sits at the diagonal floor.
    """

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    covariances: tuple[tuple[tuple[float, ...], ...], ...]
    loglik: float
    n_iter: int
    converged: bool
    degenerate: bool = False
    floored: bool = False

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.covariances)):
            raise ValueError("component counts disagree")
        if len(self.weights) not in (1, 2):
            raise ValueError("only one- or two-component fits are supported")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def pooled_sd(self) -> float:
        """Within-component spread: sqrt of weighted total variance."""
        total = 0.0
        for w, cov in zip(self.weights, self.covariances):
            total += w * sum(cov[i][i] for i in range(len(cov)))
        return math.sqrt(total)

    @property
    def mean_distance(self) -> float:
        """Euclidean distance between component means (0 for one component)."""
        if self.n_components == 1:
            return 0.0
        a = np.asarray(self.means[0])
        b = np.asarray(self.means[1])
        return float(np.linalg.norm(b - a))

    @property
    def separation(self) -> float:
        """Mean distance in units of pooled within-component spread."""
        sd = self.pooled_sd
        if sd == 0.0:
            return math.inf if self.mean_distance > 0.0 else 0.0
        return self.mean_distance / sd


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _floored_cov(diffs: np.ndarray, resp: np.ndarray | None = None) -> np.ndarray:
    """(Weighted) scatter matrix with a diagonal floor."""
    d = diffs.shape[1]
    if resp is None:
        cov = diffs.T @ diffs / diffs.shape[0]
    else:
        cov = (diffs * resp[:, None]).T @ diffs / resp.sum()
    return cov + COV_FLOOR * np.eye(d)


def _log_gauss(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log multivariate-normal density of each row of ``points``."""
    d = points.shape[1]
    chol = np.linalg.cholesky(cov)
    diffs = points - mean
    solved = np.linalg.solve(chol, diffs.T)
    maha = np.sum(solved * solved, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (maha + logdet + d * math.log(2.0 * math.pi))


def split_init(points) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Deterministic starting mixture: split at the first-dimension mean.

    Points at or below the mean of dimension 0 seed component 0, the
    rest component 1.  If either side is empty (all points identical in
    dimension 0) the sorted halves are used instead.
    """
    pts = _as_points(points)
    cut = pts[:, 0].mean()
    lo = pts[pts[:, 0] <= cut]
    hi = pts[pts[:, 0] > cut]
    if len(lo) == 0 or len(hi) == 0:
        order = np.argsort(pts[:, 0], kind="stable")
        half = max(1, len(pts) // 2)
        lo = pts[order[:half]]
        hi = pts[order[half:]] if half < len(pts) else pts[order[half - 1 :]]
    weights = np.array([len(lo), len(hi)], dtype=float)
    weights /= weights.sum()
    means = [lo.mean(axis=0), hi.mean(axis=0)]
    covs = [_floored_cov(lo - means[0]), _floored_cov(hi - means[1])]
    return weights, means, covs


def _hit_floor(cov: np.ndarray) -> bool:
    # _floored_cov adds COV_FLOOR to every diagonal entry, so an entry
    # at (or within rounding of) the floor means the raw scatter was 0.
    return bool(np.any(np.diag(np.asarray(cov)) <= 2.0 * COV_FLOOR))


def _single_fit(pts: np.ndarray, n_iter: int = 0) -> MixtureFit:
    mean = pts.mean(axis=0)
    cov = _floored_cov(pts - mean)
    loglik = float(np.sum(_log_gauss(pts, mean, cov)))
    return MixtureFit(
        (1.0,),
        (tuple(float(v) for v in mean),),
        (tuple(tuple(float(v) for v in row) for row in cov),),
        loglik,
        n_iter,
        True,
        degenerate=True,
        floored=_hit_floor(cov),
    )


def _canonical(weights, means, covs, loglik, n_iter, converged, n_points) -> MixtureFit:
    order = sorted(range(len(means)), key=lambda k: means[k][0])
    return MixtureFit(
        tuple(float(weights[k]) for k in order),
        tuple(tuple(float(v) for v in means[k]) for k in order),
        tuple(
            tuple(tuple(float(v) for v in row) for row in covs[k]) for k in order
        ),
        float(loglik),
        n_iter,
        converged,
        degenerate=bool(min(weights) < 1.0 / n_points),
        floored=any(_hit_floor(np.asarray(covs[k])) for k in order),
    )


def fit_em(points, n_components: int = 2) -> MixtureFit:
    """Maximum-likelihood Gaussian mixture via expectation-maximisation.

    Starts from :func:`split_init`, iterates to a log-likelihood gain
    below ``LOGLIK_TOL`` (at most ``MAX_ITERS`` sweeps), and floors
    every covariance diagonal at ``COV_FLOOR``.  A component whose
    effective membership drops below ``d + 1`` points triggers the
    single-Gaussian fallback.

    Parameters
    ----------
    points : array-like
        Estimate matrix, one row per fit, shape ``(n, d)``.
    n_components : int
        1 or 2.

    Returns
    -------
    MixtureFit
        Components in canonical (ascending first-dimension mean) order.
    """
    if n_components not in (1, 2):
        raise ValueError("n_components must be 1 or 2")
    pts = _as_points(points)
    n, d = pts.shape
    if n_components == 1 or n < 2 * (d + 1):
        return _single_fit(pts)

    weights, means, covs = split_init(pts)
    prev = -math.inf
    loglik = prev
    converged = False
    it = 0
    for it in range(1, MAX_ITERS + 1):
        log_r = np.empty((n, 2))
        for k in range(2):
            log_r[:, k] = math.log(weights[k]) + _log_gauss(pts, means[k], covs[k])
        top = log_r.max(axis=1)
        norm = top + np.log(np.exp(log_r - top[:, None]).sum(axis=1))
        loglik = float(norm.sum())
        resp = np.exp(log_r - norm[:, None])

        counts = resp.sum(axis=0)
        if counts.min() < d + 1:
            return _single_fit(pts, n_iter=it)
        weights = counts / n
        means = [resp[:, k] @ pts / counts[k] for k in range(2)]
        covs = [_floored_cov(pts - means[k], resp[:, k]) for k in range(2)]

        if loglik - prev < LOGLIK_TOL and it > 1:
            converged = True
            break
        prev = loglik
    return _canonical(weights, means, covs, loglik, it, converged, n)


def assign(fit: MixtureFit, points) -> np.ndarray:
    """Hard component labels (argmax responsibility) for each point."""
    pts = _as_points(points)
    if fit.n_components == 1:
        return np.zeros(len(pts), dtype=int)
    log_r = np.empty((len(pts), 2))
    for k in range(2):
        mean = np.asarray(fit.means[k])
        cov = np.asarray(fit.covariances[k])
        log_r[:, k] = math.log(fit.weights[k]) + _log_gauss(pts, mean, cov)
    return np.argmax(log_r, axis=1).astype(int)


@dataclass(frozen=True)
class ModeSummary:
    """One mixture component described in estimate space.

    ``nearest_root``, ``rel_err_beta1`` and ``predicted_mean`` are only
    set when a defect-root prediction was supplied (affine law under a
    fixed-step backend); they give the closest predicted rate, the
    relative error of the component's rate against it, and the full
    predicted centre.
    """

    component: int
    weight: float
    mean: tuple[float, ...]
    sd: tuple[float, ...]
    nearest_root: float | None
    rel_err_beta1: float | None
    predicted_mean: tuple[float, ...] | None
    prior_density_sampling: float
    prior_density_natural: float


def mode_report(
    kind: str,
    fit: MixtureFit,
    priors: dict[str, Normal],
    y_bar: float,
    predicted: DefectRoots | None = None,
) -> tuple[ModeSummary, ...]:
    """Describe each component and score it against theory and prior.

    Two prior-density conventions are reported because both are in
    circulation for log-transformed coordinates: ``sampling`` is the
    product of the normal prior densities evaluated at the component
    mean on the sampling scale (the convention the experiment reports
    use), and ``natural`` additionally divides by the Jacobian of the
    log coordinates, giving the density of the implied distribution on
    the natural scale.
    """
    fields = ESTIMATE_FIELDS[kind]
    coords = SAMPLING_COORDS[kind]
    summaries = []
    for k in range(fit.n_components):
        mean = fit.means[k]
        cov = fit.covariances[k]
        sd = tuple(math.sqrt(cov[i][i]) for i in range(len(fields)))
        density_sampling = math.nan
        density_natural = math.nan
        try:
            params = (
                AffineParams(*mean) if kind == AFFINE else CanhamParams(*mean)
            )
            theta = params_to_theta(kind, params, y_bar)
            log_density = sum(
                priors[name].logpdf(t) for name, t in zip(coords, theta)
            )
            density_sampling = math.exp(log_density)
            # Jacobian of the log coordinates: beta1 alone for the
            # affine law, all three parameters for the hump-shaped one.
            jacobian = mean[1] if kind == AFFINE else math.prod(mean)
            density_natural = density_sampling / jacobian
        except (ValueError, OverflowError):
            pass
        nearest_root = None
        rel_err = None
        predicted_mean = None
        if predicted is not None and kind == AFFINE and predicted.roots:
            rate = mean[1]
            nearest_root = min(predicted.roots, key=lambda r: abs(rate - r))
            rel_err = abs(rate - nearest_root) / abs(nearest_root)
            predicted_mean = (predicted.spec.alpha * nearest_root, nearest_root)
        summaries.append(
            ModeSummary(
                k,
                fit.weights[k],
                tuple(mean),
                sd,
                nearest_root,
                rel_err,
                predicted_mean,
                density_sampling,
                density_natural,
            )
        )
    return tuple(summaries)


def report_columns(kind: str) -> tuple[str, ...]:
    fields = ESTIMATE_FIELDS[kind]
    return (
        "component",
        "weight",
        *(f"mean_{f}" for f in fields),
        *(f"sd_{f}" for f in fields),
        "nearest_root",
        "rel_err_beta1",
        *(f"predicted_{f}" for f in fields),
        "prior_density_sampling",
        "prior_density_natural",
    )


def write_mode_report(path, kind: str, summaries) -> None:
    """Write the per-component report as delimited text."""

    def cell(value) -> str:
        return "" if value is None else repr(float(value))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(report_columns(kind))
        for s in summaries:
            row = [s.component, cell(s.weight)]
            row += [cell(v) for v in s.mean]
            row += [cell(v) for v in s.sd]
            row.append(cell(s.nearest_root))
            row.append(cell(s.rel_err_beta1))
            if s.predicted_mean is None:
                row += ["" for _ in s.mean]
            else:
                row += [cell(v) for v in s.predicted_mean]
            row.append(cell(s.prior_density_sampling))
            row.append(cell(s.prior_density_natural))
            writer.writerow(row)
