"""Linearly constrained kernelized movement primitives.

Training fits a trajectory to a probabilistic reference while enforcing
``g_{n,f}^T eta(t_n) >= c_{n,f}`` at the reference times. The basis
functions never appear explicitly: everything is expressed through the
kernel matrix ``K``, and the constraint multipliers come from the dual
program solved by :mod:`lckmp.qp`. Prediction is::

    eta(t*) = k*(t*) (K + lam Sigma)^{-1} (mu + Sigma Gbar alpha)
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import qp
from ._validation import as_float_array, check_finite, check_positive, is_spd
from .exceptions import NumericalError, ValidationError
from .gmm import RefTrajectory
from .kernel import KernelSpec, cross_gram, gram

_STAGE = "assemble"


def _frozen(arr, dtype=float):
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Constraint containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintRow:
    """One user-level constraint before expansion onto a time grid.

    ``kind="ineq"`` means ``g^T eta >= c``; ``kind="eq"`` means
    ``|g^T eta - c| <= eps`` and expands into two inequality rows.
    ``t_range=None`` activates the row at every time, otherwise on
    ``start < t <= end``.
    """

    g: tuple
    c: float
    t_range: Optional[tuple] = None
    kind: str = "ineq"
    eps: float = 0.0

    def __post_init__(self):
        g = tuple(float(v) for v in np.asarray(self.g, dtype=float).reshape(-1))
        if not g or not np.all(np.isfinite(g)) or not np.isfinite(self.c):
            raise ValidationError("constraint row needs finite g and c", _STAGE)
        if self.kind not in ("ineq", "eq"):
            raise ValidationError(f"constraint type must be 'ineq' or 'eq', got {self.kind!r}",
                                  _STAGE)
        if self.kind == "eq" and not self.eps > 0:
            raise ValidationError("equality rows need eps > 0", _STAGE)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "c", float(self.c))
        if self.t_range is not None:
            lo, hi = (float(v) for v in self.t_range)
            if not hi > lo:
                raise ValidationError(f"empty constraint time range ({lo}, {hi}]", _STAGE)
            object.__setattr__(self, "t_range", (lo, hi))

    def active_at(self, times):
        times = np.asarray(times, dtype=float)
        if self.t_range is None:
            return np.ones(times.shape, dtype=bool)
        lo, hi = self.t_range
        span = 1e-12 * max(1.0, abs(hi))
        return (times > lo + span) & (times <= hi + span)

    def inequalities(self):
        """Expanded one-sided rows as ``(g, c)`` pairs."""
        if self.kind == "ineq":
            return [(np.array(self.g), self.c)]
        return list(equality_to_inequalities(self.g, self.c, self.eps))


def equality_to_inequalities(g, c, eps):
    """Replace ``g^T eta = c`` by ``g^T eta >= c - eps`` and ``-g^T eta >= -c - eps``."""
    g = np.asarray(g, dtype=float)
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}", _STAGE)
    return (g.copy(), float(c) - eps), (-g, -float(c) - eps)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Per-timestep linear inequalities ``g[n, f]^T eta(t_n) >= c[n, f]``.

    Attributes
    ----------
    g : ndarray, shape (N, F, 2O)
    c : ndarray, shape (N, F)
    active : ndarray of bool, shape (N, F)
    """

    g: np.ndarray
    c: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        g = as_float_array(self.g, "constraint g", ndim=3, stage=_STAGE)
        c = as_float_array(self.c, "constraint c", ndim=2, stage=_STAGE)
        active = np.asarray(self.active, dtype=bool)
        if c.shape != g.shape[:2] or active.shape != c.shape:
            raise ValidationError(
                f"constraint shapes disagree: g {g.shape}, c {c.shape}, active {active.shape}",
                _STAGE,
            )
        check_finite(g, "constraint g", _STAGE)
        check_finite(c, "constraint c", _STAGE)
        object.__setattr__(self, "g", _frozen(g))
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "active", _frozen(active, bool))

    @property
    def n_steps(self):
        return self.c.shape[0]

    @property
    def n_constraints(self):
        return self.c.shape[1]

    @property
    def n_active(self):
        return int(self.active.sum())

    @classmethod
    def empty(cls, n_steps, output_dim):
        return cls(np.zeros((n_steps, 0, 2 * output_dim)), np.zeros((n_steps, 0)),
                   np.zeros((n_steps, 0), dtype=bool))

    @classmethod
    def from_rows(cls, times, rows, output_dim):
        """Expand :class:`ConstraintRow` objects onto the given times."""
        times = np.asarray(times, dtype=float)
        gs, cs, acts = [], [], []
        for row in rows:
            if len(row.g) != 2 * output_dim:
                raise ValidationError(
                    f"constraint g has length {len(row.g)}, expected {2 * output_dim}", _STAGE
                )
            mask = row.active_at(times)
            for g, c in row.inequalities():
                gs.append(g)
                cs.append(c)
                acts.append(mask)
        if not gs:
            return cls.empty(times.size, output_dim)
        n, f = times.size, len(gs)
        g = np.broadcast_to(np.array(gs)[None], (n, f, 2 * output_dim))
        c = np.broadcast_to(np.array(cs)[None], (n, f))
        return cls(g, c, np.array(acts).T)


@dataclass(frozen=True, eq=False)
class DesiredPoint:
    """Via-/end-point ``eta(t_bar) ~ N(mu_bar, sigma_bar)``."""

    t_bar: float
    mu_bar: np.ndarray
    sigma_bar: np.ndarray

    def __post_init__(self):
        mu = as_float_array(self.mu_bar, "desired mean", ndim=1, stage=_STAGE)
        sigma = as_float_array(self.sigma_bar, "desired covariance", ndim=2, stage=_STAGE)
        if sigma.shape != (mu.size, mu.size) or mu.size % 2:
            raise ValidationError("desired point mean/covariance shapes disagree", _STAGE)
        check_finite(mu, "desired mean", _STAGE)
        if not np.isfinite(self.t_bar):
            raise ValidationError("desired time must be finite", _STAGE)
        if not np.allclose(sigma, sigma.T) or not is_spd(sigma):
            raise ValidationError("desired covariance must be symmetric positive definite",
                                  _STAGE)
        object.__setattr__(self, "t_bar", float(self.t_bar))
        object.__setattr__(self, "mu_bar", _frozen(mu))
        object.__setattr__(self, "sigma_bar", _frozen(sigma))


def adapt(ref, points, time_tol=None):
    """Extend a reference trajectory with desired points.

    A desired point within ``time_tol`` (default: half the smallest grid
    spacing) of an existing time replaces that entry; otherwise it is
    inserted in time order. Two desired points landing on the same entry
    are rejected.
    """
    points = list(points)
    if not points:
        return ref
    if time_tol is None:
        time_tol = 0.5 * float(np.min(np.diff(ref.times))) if len(ref) > 1 else 0.0
    times = list(ref.times)
    mus = list(ref.mu)
    sigmas = list(ref.sigma)
    owner = [None] * len(times)
    for j, p in enumerate(points):
        if p.mu_bar.size != ref.mu.shape[1]:
            raise ValidationError(
                f"desired point has dimension {p.mu_bar.size}, reference has {ref.mu.shape[1]}",
                _STAGE,
            )
        arr = np.asarray(times)
        k = int(np.argmin(np.abs(arr - p.t_bar)))
        if abs(arr[k] - p.t_bar) <= time_tol:
            if owner[k] is not None:
                raise ValidationError(
                    f"desired points {owner[k]} and {j} map to the same reference entry "
                    f"(t={arr[k]:.6g})",
                    _STAGE,
                )
            times[k], mus[k], sigmas[k], owner[k] = p.t_bar, p.mu_bar, p.sigma_bar, j
        else:
            k = int(np.searchsorted(arr, p.t_bar))
            times.insert(k, p.t_bar)
            mus.insert(k, p.mu_bar)
            sigmas.insert(k, p.sigma_bar)
            owner.insert(k, j)
    return RefTrajectory(np.array(times), np.array(mus), np.array(sigmas))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Assembly:
    K: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    Gbar: np.ndarray
    Cbar: np.ndarray
    index: np.ndarray  # (D, 2) rows of (n, f) for every dual variable


def assemble(spec, lam, ref, cons):
    """Stack the reference and active constraints into training matrices.

    ``Gbar`` has one column per active ``(n, f)`` pair (time-major), holding
    ``g[n, f]`` in the rows of timestep ``n``; inactive pairs are dropped.
    """
    check_positive(lam, "lambda", _STAGE)
    n, dim = ref.mu.shape
    o = dim // 2
    if spec.output_dim != o:
        raise ValidationError(f"kernel output_dim {spec.output_dim} != reference O={o}", _STAGE)
    if cons.n_steps != n or (cons.n_constraints and cons.g.shape[2] != dim):
        raise ValidationError(
            f"constraint set covers {cons.n_steps} steps of width "
            f"{cons.g.shape[2]}, reference has {n} steps of width {dim}",
            _STAGE,
        )
    K = gram(spec, ref.times)
    Sigma = scipy.linalg.block_diag(*ref.sigma) if n else np.zeros((0, 0))
    mu = ref.mu.reshape(-1).copy()
    index = np.argwhere(cons.active)
    Gbar = np.zeros((n * dim, index.shape[0]))
    for col, (i, f) in enumerate(index):
        Gbar[i * dim:(i + 1) * dim, col] = cons.g[i, f]
    Cbar = np.array([cons.c[i, f] for i, f in index], dtype=float)
    return Assembly(K, Sigma, mu, Gbar, Cbar, index)


class _SPDSolver:
    """Cholesky solves with ``K + lam Sigma``, regularized on failure."""

    def __init__(self, mat):
        try:
            self._cho = scipy.linalg.cho_factor(mat)
        except np.linalg.LinAlgError:
            eye = np.eye(mat.shape[0])
            try:
                self._cho = scipy.linalg.cho_factor(mat + 1e-10 * eye)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    "K + lambda*Sigma is not positive definite; increase lambda or "
                    "check the reference covariances", _STAGE
                ) from exc

    def __call__(self, rhs):
        return scipy.linalg.cho_solve(self._cho, rhs)


def a_matrix(K, Sigma, lam, solver=None):
    """``-1/2 (K + lam Sigma)^{-1} (K Sigma^{-1} K + lam K) (K + lam Sigma)^{-1}``, symmetrized."""
    if solver is None:
        solver = _SPDSolver(K + lam * Sigma)
    try:
        sigma_cho = scipy.linalg.cho_factor(Sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Sigma is not positive definite", _STAGE) from exc
    middle = K @ scipy.linalg.cho_solve(sigma_cho, K) + lam * K
    middle = 0.5 * (middle + middle.T)
    left = solver(middle)
    A = -0.5 * solver(left.T).T
    return 0.5 * (A + A.T)


def dual_matrices(K, Sigma, mu, Gbar, Cbar, lam, nsd_tol=1e-7, solver=None):
    """Coefficients of the dual program as a validated :class:`~lckmp.qp.DualProblem`.

    ``B1 = Gbar^T Sigma A Sigma Gbar`` and ``B2 = 2 mu^T A Sigma Gbar + Cbar``
    are evaluated through ``Sigma A = -1/2 (K + lam Sigma)^{-1} K`` (times
    ``Sigma^{-1}`` on the right), which follows from
    ``K Sigma^{-1} K + lam K = K Sigma^{-1} (K + lam Sigma)``. This avoids
    forming ``A``, whose entries grow like ``Sigma^{-1}`` and would swamp
    the small dual coefficients in rounding error.
    """
    if solver is None:
        solver = _SPDSolver(K + lam * Sigma)
    E = Sigma @ Gbar
    b1 = -0.5 * E.T @ solver(K @ Gbar)
    b1 = 0.5 * (b1 + b1.T)
    b2 = Cbar - Gbar.T @ (K @ solver(mu))
    return qp.DualProblem(b1, b2, nsd_tol=nsd_tol)


@dataclass(frozen=True, eq=False)
class LcKmpModel:
    """Trained state. ``alpha`` has shape (N, F) with zeros at inactive slots."""

    spec: KernelSpec
    lam: float
    ref: RefTrajectory
    constraints: ConstraintSet
    K: np.ndarray
    Sigma: np.ndarray
    mu: np.ndarray
    Gbar: np.ndarray
    Cbar: np.ndarray
    alpha: np.ndarray
    dual_status: str
    weights: np.ndarray
    dual: Optional[qp.DualSolution] = None
    rows: tuple = field(default=())

    @property
    def output_dim(self):
        return self.ref.output_dim

    @property
    def active_alpha(self):
        return self.alpha[self.constraints.active]


def _weights(K, Sigma, mu, Gbar, alpha_active, lam, solver=None):
    if solver is None:
        solver = _SPDSolver(K + lam * Sigma)
    return solver(mu + Sigma @ (Gbar @ alpha_active))


def _refine(asm, lam, prob, alpha, sweeps=3):
    """Iterative refinement of the multipliers on their support.

    With large multipliers the dual gradient loses digits relative to the
    slack evaluated through the prediction path. The tight constraints are
    re-solved with that slack as residual and the dual Hessian as
    (approximate) Jacobian; a sweep is kept only if it lowers the largest
    violation without breaking the sign constraint.
    """
    solver = _SPDSolver(asm.K + lam * asm.Sigma)
    free = np.flatnonzero(alpha > 0.0)

    def slack(a):
        eta = asm.K @ _weights(asm.K, asm.Sigma, asm.mu, asm.Gbar, a, lam, solver)
        return asm.Gbar.T @ eta - asm.Cbar

    def worst(a, s):
        return max(float(np.max(np.abs(s[free]))) if free.size else 0.0,
                   float(np.max(-s, initial=0.0)))

    if not free.size:
        return alpha
    hess = -2.0 * prob.b1[np.ix_(free, free)]
    s = slack(alpha)
    best = worst(alpha, s)
    for _ in range(sweeps):
        step, *_ = scipy.linalg.lstsq(hess, s[free], cond=1e-12)
        trial = alpha.copy()
        trial[free] -= step
        if np.any(trial[free] < 0.0):
            break
        s_trial = slack(trial)
        score = worst(trial, s_trial)
        if not score < best:
            break
        alpha, s, best = trial, s_trial, score
    return alpha


def train(spec, lam, ref, cons=None, tol=1e-8, max_iter=None, rows=()):
    """Assemble, solve the dual program and precompute the prediction weights.

    Raises :class:`~lckmp.exceptions.NumericalError` when the dual quadratic
    term is not negative semidefinite, which indicates an assembly defect.
    """
    if cons is None:
        cons = ConstraintSet.empty(len(ref), ref.output_dim)
    asm = assemble(spec, lam, ref, cons)
    if asm.index.shape[0]:
        prob = dual_matrices(asm.K, asm.Sigma, asm.mu, asm.Gbar, asm.Cbar, lam)
        sol = qp.solve(prob, tol=tol, max_iter=max_iter)
        if sol.status == qp.DEGENERATE:
            raise NumericalError(
                "dual program diverged: the constraints are infeasible at some timestep", "qp"
            )
        alpha_active = _refine(asm, lam, prob, np.array(sol.alpha))
    else:
        sol = qp.solve(qp.DualProblem(np.zeros((0, 0)), np.zeros(0)))
        alpha_active = np.zeros(0)
    alpha = np.zeros(cons.c.shape)
    alpha[cons.active] = alpha_active
    weights = _weights(asm.K, asm.Sigma, asm.mu, asm.Gbar, alpha_active, lam)
    return LcKmpModel(
        spec=spec, lam=float(lam), ref=ref, constraints=cons, K=asm.K, Sigma=asm.Sigma,
        mu=asm.mu, Gbar=asm.Gbar, Cbar=asm.Cbar, alpha=_frozen(alpha),
        dual_status=sol.status, weights=_frozen(weights), dual=sol, rows=tuple(rows),
    )


def restore(spec, lam, ref, cons, alpha, rows=(), dual_status="optimal"):
    """Rebuild a trained model from stored multipliers without solving again."""
    asm = assemble(spec, lam, ref, cons)
    alpha = np.asarray(alpha, dtype=float).reshape(cons.c.shape)
    weights = _weights(asm.K, asm.Sigma, asm.mu, asm.Gbar, alpha[cons.active], lam)
    return LcKmpModel(
        spec=spec, lam=float(lam), ref=ref, constraints=cons, K=asm.K, Sigma=asm.Sigma,
        mu=asm.mu, Gbar=asm.Gbar, Cbar=asm.Cbar, alpha=_frozen(alpha),
        dual_status=dual_status, weights=_frozen(weights), rows=tuple(rows),
    )


def predict(model, t_star):
    """Predicted ``[xi; xi_dot]``: shape (2O,) for a scalar time, (Q, 2O) for an array."""
    tq = np.asarray(t_star, dtype=float)
    if not np.all(np.isfinite(tq)):
        raise ValidationError("query times must be finite", "predict")
    dim = 2 * model.output_dim
    flat = cross_gram(model.spec, tq.reshape(-1), model.ref.times) @ model.weights
    out = flat.reshape(-1, dim)
    return out[0] if tq.ndim == 0 else out


def constraint_slack(model):
    """``g^T eta(t_n) - c`` for every (n, f); NaN at inactive slots."""
    eta = predict(model, model.ref.times)
    cons = model.constraints
    slack = np.einsum("nfd,nd->nf", cons.g, eta) - cons.c
    return np.where(cons.active, slack, np.nan)


def tracking_cost(model, weights=None):
    """Regularized weighted fit ``1/2 r^T Sigma^{-1} r + 1/2 lam w^T w`` at the grid.

    With ``w = Phi v`` the regularizer equals ``v^T K v``; the constant of the
    Gaussian log-density is dropped.
    """
    v = model.weights if weights is None else weights
    eta = model.K @ v
    r = eta - model.mu
    dim = 2 * model.output_dim
    fit = sum(
        r[i:i + dim] @ np.linalg.solve(model.ref.sigma[i // dim], r[i:i + dim])
        for i in range(0, r.size, dim)
    )
    return 0.5 * fit + 0.5 * model.lam * float(v @ model.K @ v)


class LCKMP(BaseEstimator):
    """Estimator interface.

    Parameters
    ----------
    lam : float, default=1.0
        Regularization weight, must be positive.
    k_h : float, default=1.0
        Gaussian kernel bandwidth.
    delta : float, default=1e-4
        Finite-difference step of the derivative kernel blocks.
    tol, max_iter :
        Dual solver settings.

    Examples
    --------
    >>> est = LCKMP(lam=3.0, k_h=6.0).fit(ref, constraints)  # doctest: +SKIP
    >>> eta = est.predict(np.linspace(0, 2, 50))             # doctest: +SKIP
    """

    def __init__(self, lam=1.0, k_h=1.0, delta=1e-4, tol=1e-8, max_iter=None):
        self.lam = lam
        self.k_h = k_h
        self.delta = delta
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, ref, constraints=None):
        """Train on a :class:`RefTrajectory`.

        ``constraints`` may be a :class:`ConstraintSet` aligned with the
        reference or a sequence of :class:`ConstraintRow`.
        """
        if not isinstance(ref, RefTrajectory):
            raise ValidationError("fit expects a RefTrajectory", _STAGE)
        spec = KernelSpec(self.k_h, self.delta, ref.output_dim)
        rows = ()
        if constraints is not None and not isinstance(constraints, ConstraintSet):
            rows = tuple(constraints)
            constraints = ConstraintSet.from_rows(ref.times, rows, ref.output_dim)
        self.model_ = train(spec, self.lam, ref, constraints, self.tol, self.max_iter, rows)
        self.alpha_ = self.model_.alpha
        self.dual_status_ = self.model_.dual_status
        return self

    def predict(self, t):
        check_is_fitted(self, "model_")
        return predict(self.model_, np.atleast_1d(np.asarray(t, dtype=float)))

    def constraint_slack(self):
        check_is_fitted(self, "model_")
        return constraint_slack(self.model_)
