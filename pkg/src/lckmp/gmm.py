"""Gaussian mixture over ``(t, eta)`` and Gaussian mixture regression.

The joint variable has the time in column 0 followed by the 2O entries of
``eta = [xi; xi_dot]``. Conditioning the mixture on time yields the
probabilistic reference trajectory, one Gaussian per grid time.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_array, check_finite, check_increasing, is_spd, jitter_to_pd
from .exceptions import NumericalError, ValidationError
from .trajdata import DemoSet

_STAGE = "gmm"


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Mixture parameters; ``means[:, 0]`` and ``covariances[:, 0, 0]`` are the time block."""

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihoods: tuple = field(default=())

    def __post_init__(self):
        priors = as_float_array(self.priors, "priors", ndim=1, stage=_STAGE)
        means = as_float_array(self.means, "means", ndim=2, stage=_STAGE)
        covs = as_float_array(self.covariances, "covariances", ndim=3, stage=_STAGE)
        c, dim = means.shape
        if priors.shape != (c,) or covs.shape != (c, dim, dim):
            raise ValidationError("inconsistent mixture parameter shapes", _STAGE)
        if dim < 3 or (dim - 1) % 2:
            raise ValidationError(f"joint dimension must be 1 + 2O, got {dim}", _STAGE)
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ValidationError("priors must be nonnegative and sum to 1", _STAGE)
        for k in range(c):
            if not np.allclose(covs[k], covs[k].T, rtol=0, atol=1e-12 * np.abs(covs[k]).max()):
                raise ValidationError(f"covariance {k} is not symmetric", _STAGE)
            if not is_spd(covs[k]):
                raise ValidationError(f"covariance {k} is not positive definite", _STAGE)
        object.__setattr__(self, "priors", _frozen(priors))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "covariances", _frozen(covs))
        object.__setattr__(self, "log_likelihoods", tuple(float(v) for v in self.log_likelihoods))

    @property
    def n_components(self):
        return self.priors.size

    @property
    def output_dim(self):
        return (self.means.shape[1] - 1) // 2


@dataclass(frozen=True, eq=False)
class RefTrajectory:
    """Per-time Gaussians ``N(mu[n], sigma[n])`` over ``eta``.

    Attributes
    ----------
    times : ndarray, shape (N,)
    mu : ndarray, shape (N, 2O)
    sigma : ndarray, shape (N, 2O, 2O)
    """

    times: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        t = as_float_array(self.times, "reference times", ndim=1, stage=_STAGE)
        mu = as_float_array(self.mu, "reference means", ndim=2, stage=_STAGE)
        sigma = as_float_array(self.sigma, "reference covariances", ndim=3, stage=_STAGE)
        n, dim = mu.shape
        if t.shape != (n,) or sigma.shape != (n, dim, dim) or dim % 2:
            raise ValidationError(
                f"inconsistent reference shapes: times {t.shape}, mu {mu.shape}, "
                f"sigma {sigma.shape}",
                _STAGE,
            )
        for arr, name in ((t, "times"), (mu, "means"), (sigma, "covariances")):
            check_finite(arr, f"reference {name}", _STAGE)
        check_increasing(t, "reference times", stage=_STAGE)
        for k in range(n):
            s = sigma[k]
            if not np.allclose(s, s.T, rtol=0, atol=1e-12 * max(1.0, np.abs(s).max())):
                raise ValidationError(f"reference covariance {k} is not symmetric", _STAGE)
            if not is_spd(s):
                raise ValidationError(f"reference covariance {k} is not positive definite",
                                      _STAGE)
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma", _frozen(sigma))

    def __len__(self):
        return self.times.size

    @property
    def output_dim(self):
        return self.mu.shape[1] // 2


def _log_gaussian(x, mean, cov):
    """Row-wise log density of ``N(mean, cov)``; raises LinAlgError if cov is not PD."""
    chol = np.linalg.cholesky(cov)
    z = scipy.linalg.solve_triangular(chol, (x - mean).T, lower=True)
    dim = mean.size
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * dim * np.log(2 * np.pi)


def _log_prob_matrix(x, priors, means, covs):
    out = np.empty((x.shape[0], priors.size))
    with np.errstate(divide="ignore"):
        log_priors = np.log(priors)
    for k in range(priors.size):
        out[:, k] = log_priors[k] + _log_gaussian(x, means[k], covs[k])
    return out


def _m_step(x, resp):
    mass = resp.sum(axis=0)
    means = (resp.T @ x) / mass[:, None]
    covs = np.empty((mass.size, x.shape[1], x.shape[1]))
    for k in range(mass.size):
        diff = x - means[k]
        covs[k] = jitter_to_pd((resp[:, k, None] * diff).T @ diff / mass[k])
    return mass / mass.sum(), means, covs, mass


def fit_em(data, c=5, seed=0, max_iter=200, tol=1e-7, min_mass=1.0, max_reinit=5):
    """Fit a full-covariance Gaussian mixture by expectation maximization.

    Initialization is seeded k-means++ on standardized samples followed by
    one M-step on the hard assignment. Iteration stops once the relative
    change in log-likelihood drops below ``tol`` or after ``max_iter``
    E-steps. A component whose responsibility mass falls below
    ``min_mass`` is re-seeded on the worst-explained sample; more than
    ``max_reinit`` re-seedings raise :class:`NumericalError`.

    Parameters
    ----------
    data : DemoSet or ndarray of shape (n_samples, 1 + 2O)

    Returns
    -------
    GmmModel
        ``log_likelihoods`` holds the training log-likelihood at every E-step.
    """
    x = data.joint_samples() if isinstance(data, DemoSet) else as_float_array(
        data, "samples", ndim=2, stage=_STAGE)
    check_finite(x, "samples", _STAGE)
    n, dim = x.shape
    if int(c) != c or c < 1:
        raise ValidationError(f"component count must be a positive integer, got {c}", _STAGE)
    c = int(c)
    if n < c * dim:
        raise ValidationError(
            f"insufficient data: {n} samples for {c} components of dimension {dim}", _STAGE
        )

    std = x.std(axis=0)
    std[std == 0] = 1.0
    centers, _ = kmeans_plusplus(x / std, c, random_state=seed)
    d2 = ((x[:, None, :] / std - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((n, c))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    if np.any(resp.sum(axis=0) < min_mass):
        raise NumericalError("k-means++ initialization produced an empty cluster", _STAGE)
    priors, means, covs, _ = _m_step(x, resp)

    history = []
    reinit = 0
    for _ in range(max_iter):
        logp = _log_prob_matrix(x, priors, means, covs)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) <= tol * abs(history[-2]):
            break
        resp = np.exp(logp - norm[:, None])
        priors, means, covs, mass = _m_step(x, resp)
        weak = np.flatnonzero(mass < min_mass)
        if weak.size:
            reinit += 1
            if reinit > max_reinit:
                raise NumericalError(
                    f"component(s) {weak.tolist()} collapsed repeatedly", _STAGE
                )
            worst = np.argsort(norm)[: weak.size]
            pooled = jitter_to_pd(np.cov(x.T) / c)
            for k, i in zip(weak, worst):
                means[k] = x[i]
                covs[k] = pooled
            priors = np.maximum(priors, 1.0 / (n * c))
            priors /= priors.sum()
            history = []

    return GmmModel(priors / priors.sum(), means, covs, tuple(history))


def gmr_condition(model, t):
    """Moment-matched conditional of the mixture given time.

    Parameters
    ----------
    model : GmmModel
    t : float or array_like of shape (Q,)

    Returns
    -------
    mu_hat : ndarray, shape (2O,) or (Q, 2O)
    sigma_hat : ndarray, shape (2O, 2O) or (Q, 2O, 2O)
    """
    scalar = np.ndim(t) == 0
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    check_finite(tq, "query time", _STAGE)
    m_t = model.means[:, 0]
    m_eta = model.means[:, 1:]
    s_tt = model.covariances[:, 0, 0]
    s_et = model.covariances[:, 1:, 0]
    s_ee = model.covariances[:, 1:, 1:]

    diff = tq[:, None] - m_t[None, :]
    with np.errstate(divide="ignore"):
        log_h = np.log(model.priors)[None, :] - 0.5 * (
            diff * diff / s_tt + np.log(2 * np.pi * s_tt)
        )
    h = np.exp(log_h - logsumexp(log_h, axis=1, keepdims=True))

    gain = s_et / s_tt[:, None]
    cond_means = m_eta[None, :, :] + diff[:, :, None] * gain[None, :, :]
    cond_covs = s_ee - np.einsum("ci,cj->cij", gain, s_et)

    mu = np.einsum("qc,qci->qi", h, cond_means)
    second = np.einsum("qc,cij->qij", h, cond_covs) + np.einsum(
        "qc,qci,qcj->qij", h, cond_means, cond_means
    )
    sigma = second - np.einsum("qi,qj->qij", mu, mu)
    sigma = np.array([jitter_to_pd(s) for s in sigma])
    if scalar:
        return mu[0], sigma[0]
    return mu, sigma


def build_reference(model, grid):
    """Condition ``model`` at every grid time to obtain a :class:`RefTrajectory`."""
    t = np.asarray(grid, dtype=float)
    mu, sigma = gmr_condition(model, t)
    return RefTrajectory(t, mu, sigma)


class GaussianMixtureRegression(BaseEstimator):
    """Estimator wrapper around :func:`fit_em` and :func:`gmr_condition`.

    Parameters
    ----------
    n_components : int, default=5
    random_state : int, default=0
        Seed of the k-means++ initialization.
    max_iter : int, default=200
    tol : float, default=1e-7
        Relative log-likelihood change used as the stopping rule.
    """

    def __init__(self, n_components=5, random_state=0, max_iter=200, tol=1e-7):
        self.n_components = n_components
        self.random_state = random_state
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        """Fit on a :class:`DemoSet` or an array of joint ``(t, eta)`` samples."""
        self.model_ = fit_em(X, self.n_components, self.random_state, self.max_iter, self.tol)
        self.log_likelihoods_ = np.array(self.model_.log_likelihoods)
        self.n_iter_ = len(self.model_.log_likelihoods)
        self.priors_ = self.model_.priors
        self.means_ = self.model_.means
        self.covariances_ = self.model_.covariances
        return self

    def predict(self, t, return_cov=False):
        check_is_fitted(self, "model_")
        mu, sigma = gmr_condition(self.model_, np.atleast_1d(np.asarray(t, dtype=float)))
        return (mu, sigma) if return_cov else mu

    def reference(self, grid):
        check_is_fitted(self, "model_")
        return build_reference(self.model_, grid)
