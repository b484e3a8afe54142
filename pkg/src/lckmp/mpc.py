"""Batch linear MPC, minimal intervention control and the kernel-model cross-check.

The batch problem over the stacked controls ``u = [u_1; ...; u_{N-1}]`` is::

    min  (S_u u + S_eta eta_1 - eta_hat)^T Q (S_u u + S_eta eta_1 - eta_hat) + u^T R u
    s.t. W1 u >= W2 + V eta_1

and is solved through its Lagrange dual, which has the same sign-constrained
concave form handled by :mod:`lckmp.qp`.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import qp
from ._validation import as_float_array, check_finite, is_spd
from .exceptions import NumericalError, ValidationError
from .gmm import RefTrajectory
from .kernel import RandomFeatureMap
from .model import LcKmpModel, predict

_STAGE = "mpc"

KKT_TOL = 1e-6
EQUIVALENCE_TOL = 1e-6
MAX_EQUIVALENCE_STEPS = 4
MAX_EQUIVALENCE_FEATURES = 24


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete dynamics ``eta_{t+1} = A eta_t + B u_t``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_float_array(self.a, "A", ndim=2, stage=_STAGE)
        b = as_float_array(self.b, "B", ndim=2, stage=_STAGE)
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValidationError(f"system shapes A {a.shape}, B {b.shape} disagree", _STAGE)
        check_finite(a, "A", _STAGE)
        check_finite(b, "B", _STAGE)
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def state_dim(self):
        return self.a.shape[0]

    @property
    def input_dim(self):
        return self.b.shape[1]

    def simulate(self, eta1, u):
        """Step-by-step rollout; ``u`` has shape (N-1, m), the result (N, n)."""
        u = np.asarray(u, dtype=float).reshape(-1, self.input_dim)
        out = [np.asarray(eta1, dtype=float)]
        for u_t in u:
            out.append(self.a @ out[-1] + self.b @ u_t)
        return np.array(out)


def _per_step(value, count, dim, name, spd):
    """Broadcast a scalar, a (dim, dim) matrix or a (count, dim, dim) stack."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(dim)
    if arr.ndim == 1 and arr.size == dim:
        arr = np.diag(arr)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr, (count, dim, dim))
    if arr.shape != (count, dim, dim):
        raise ValidationError(f"{name} has shape {arr.shape}, expected ({count}, {dim}, {dim})",
                              _STAGE)
    check_finite(arr, name, _STAGE)
    for k, m in enumerate(arr):
        if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValidationError(f"{name}[{k}] is not symmetric", _STAGE)
        if spd and not is_spd(m):
            raise ValidationError(f"{name}[{k}] is not positive definite", _STAGE)
        if not spd and np.linalg.eigvalsh(m)[0] < -1e-12 * max(1.0, np.abs(m).max()):
            raise ValidationError(f"{name}[{k}] is not positive semidefinite", _STAGE)
    return np.array(arr)


def _bound(value, dim, fill, name):
    if value is None:
        return np.full(dim, fill)
    arr = np.asarray(value, dtype=float)
    arr = np.broadcast_to(arr, (dim,)).copy() if arr.ndim == 0 else arr
    if arr.shape != (dim,) or np.any(np.isnan(arr)):
        raise ValidationError(f"{name} must be {dim} numbers (infinite allowed)", _STAGE)
    return arr


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Finite-horizon tracking problem.

    ``q`` holds N state weights (for ``t = 1..N``), ``r`` holds N-1 input
    weights. State bounds apply to ``t = 2..N``, input bounds to
    ``t = 1..N-1``; ``None`` or infinite entries mean unbounded.
    """

    system: LinearSystem
    horizon: int
    eta1: np.ndarray
    eta_hat: np.ndarray
    q: np.ndarray
    r: np.ndarray
    eta_min: np.ndarray = None
    eta_max: np.ndarray = None
    u_min: np.ndarray = None
    u_max: np.ndarray = None

    def __post_init__(self):
        n, m = self.system.state_dim, self.system.input_dim
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise ValidationError(f"horizon must be an integer >= 2, got {self.horizon}", _STAGE)
        big_n = int(self.horizon)
        eta1 = as_float_array(self.eta1, "eta1", ndim=1, stage=_STAGE)
        eta_hat = np.asarray(self.eta_hat, dtype=float)
        if eta_hat.ndim == 1:
            eta_hat = np.broadcast_to(eta_hat, (big_n, eta_hat.size))
        if eta1.shape != (n,) or eta_hat.shape != (big_n, n):
            raise ValidationError(
                f"eta1 {eta1.shape} / eta_hat {eta_hat.shape} do not match state dimension {n} "
                f"and horizon {big_n}", _STAGE)
        check_finite(eta1, "eta1", _STAGE)
        check_finite(eta_hat, "eta_hat", _STAGE)
        q = _per_step(self.q, big_n, n, "Q", spd=False)
        r = _per_step(self.r, big_n - 1, m, "R", spd=True)
        lo_x = _bound(self.eta_min, n, -np.inf, "eta_min")
        hi_x = _bound(self.eta_max, n, np.inf, "eta_max")
        lo_u = _bound(self.u_min, m, -np.inf, "u_min")
        hi_u = _bound(self.u_max, m, np.inf, "u_max")
        if np.any(lo_x > hi_x) or np.any(lo_u > hi_u):
            raise ValidationError("bounds must satisfy min <= max", _STAGE)
        for name, val in (("horizon", big_n), ("eta1", _frozen(eta1)),
                          ("eta_hat", _frozen(eta_hat)), ("q", _frozen(q)), ("r", _frozen(r)),
                          ("eta_min", _frozen(lo_x)), ("eta_max", _frozen(hi_x)),
                          ("u_min", _frozen(lo_u)), ("u_max", _frozen(hi_u))):
            object.__setattr__(self, name, val)


def stack(problem):
    """Stacked prediction matrices ``(S_eta, S_u)`` so that ``eta = S_eta eta_1 + S_u u``."""
    return stack_matrices(problem.system, problem.horizon)


def stack_matrices(system, horizon):
    """``S_eta = [I; A; ...; A^{N-1}]`` and block lower triangular ``S_u`` with blocks ``A^{i-j-1} B``."""
    a, b = system.a, system.b
    n, m = system.state_dim, system.input_dim
    big_n = int(horizon)
    powers = [np.eye(n)]
    for _ in range(big_n - 1):
        powers.append(a @ powers[-1])
    s_eta = np.vstack(powers)
    s_u = np.zeros((n * big_n, m * (big_n - 1)))
    for i in range(1, big_n):
        for j in range(i):
            s_u[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j - 1] @ b
    return s_eta, s_u


def constraint_rows(problem, s_eta=None, s_u=None):
    """Box bounds as one-sided rows ``W1 u >= W2 + V eta_1``.

    Row groups, in order: lower state bounds, upper state bounds, lower
    input bounds, upper input bounds. Infinite bounds produce no row.
    """
    if s_eta is None:
        s_eta, s_u = stack(problem)
    n, m = problem.system.state_dim, problem.system.input_dim
    big_n = problem.horizon
    w1, w2, v = [], [], []
    for sign, bound in ((1.0, problem.eta_min), (-1.0, problem.eta_max)):
        for t in range(1, big_n):
            for i in np.flatnonzero(np.isfinite(bound)):
                row = t * n + i
                w1.append(sign * s_u[row])
                w2.append(sign * bound[i])
                v.append(-sign * s_eta[row])
    for sign, bound in ((1.0, problem.u_min), (-1.0, problem.u_max)):
        for t in range(big_n - 1):
            for i in np.flatnonzero(np.isfinite(bound)):
                row = np.zeros(m * (big_n - 1))
                row[t * m + i] = sign
                w1.append(row)
                w2.append(sign * bound[i])
                v.append(np.zeros(n))
    if not w1:
        return np.zeros((0, m * (big_n - 1))), np.zeros(0), np.zeros((0, n))
    return np.array(w1), np.array(w2), np.array(v)


@dataclass(frozen=True, eq=False)
class CondensedSolution:
    """Primal/dual pair of ``min 1/2 u^T H u + f^T u  s.t.  W u >= h``."""

    u: np.ndarray
    alpha: np.ndarray
    status: str
    kkt: dict = field(default_factory=dict)


def solve_condensed(h_mat, f, w, h, tol=1e-10, max_iter=None):
    """Strictly convex QP with inequality rows, solved through its dual.

    The dual ``max -1/2 alpha^T W H^{-1} W^T alpha + (W H^{-1} f + h)^T alpha``
    over ``alpha >= 0`` is handed to :func:`lckmp.qp.solve`, then
    ``u = H^{-1} (W^T alpha - f)``. The returned ``kkt`` dictionary holds
    the stationarity, primal feasibility and complementary slackness
    residuals together with the ``scale`` they should be compared against.

    Raises
    ------
    NumericalError
        If ``H`` is not positive definite or the dual is unbounded, which
        means no ``u`` satisfies the rows.
    """
    h_mat = 0.5 * (h_mat + h_mat.T)
    try:
        cho = scipy.linalg.cho_factor(h_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Hessian of the batch problem is not positive definite",
                             _STAGE) from exc
    if w.shape[0]:
        hw = scipy.linalg.cho_solve(cho, w.T)
        b1 = -0.5 * (w @ hw)
        b1 = 0.5 * (b1 + b1.T)
        b2 = w @ scipy.linalg.cho_solve(cho, f) + h
        sol = qp.solve(qp.DualProblem(b1, b2), tol=tol, max_iter=max_iter)
        if sol.status == qp.DEGENERATE:
            raise NumericalError("bounds are infeasible: the dual program is unbounded", _STAGE)
        alpha = np.array(sol.alpha)
        status = sol.status
    else:
        alpha = np.zeros(0)
        status = qp.OPTIMAL
    u = scipy.linalg.cho_solve(cho, w.T @ alpha - f)
    slack = w @ u - h
    scale = 1.0 + max(float(np.max(np.abs(f), initial=0.0)), float(np.max(np.abs(h), initial=0.0)))
    if status != qp.OPTIMAL and np.max(-slack, initial=0.0) > KKT_TOL * scale:
        # a dual that keeps growing without settling is the unbounded case
        raise NumericalError(
            f"bounds are infeasible: the dual did not converge and rows stay violated by "
            f"{np.max(-slack):.3e}", _STAGE)
    kkt = {
        "stationarity": float(np.max(np.abs(h_mat @ u + f - w.T @ alpha), initial=0.0)),
        "feasibility": max(0.0, float(np.max(-slack, initial=0.0))),
        "complementarity": float(np.max(np.abs(alpha * slack), initial=0.0)),
        "scale": scale,
    }
    return CondensedSolution(_frozen(u), _frozen(alpha), status, kkt)


def kkt_ok(kkt, tol=KKT_TOL):
    return max(kkt["stationarity"], kkt["feasibility"], kkt["complementarity"]) <= tol * kkt["scale"]


@dataclass(frozen=True, eq=False)
class BatchSolution:
    u: np.ndarray        # (N-1, m)
    eta: np.ndarray      # (N, n)
    alpha: np.ndarray
    status: str
    kkt: dict


def solve_batch(problem, tol=1e-10):
    """Solve the condensed batch problem; returns a :class:`BatchSolution`."""
    s_eta, s_u = stack(problem)
    q_bar = scipy.linalg.block_diag(*problem.q)
    r_bar = scipy.linalg.block_diag(*problem.r)
    free = s_eta @ problem.eta1 - problem.eta_hat.reshape(-1)
    h_mat = 2.0 * (s_u.T @ q_bar @ s_u + r_bar)
    f = 2.0 * s_u.T @ q_bar @ free
    w1, w2, v = constraint_rows(problem, s_eta, s_u)
    sol = solve_condensed(h_mat, f, w1, w2 + v @ problem.eta1, tol=tol)
    eta = (s_eta @ problem.eta1 + s_u @ sol.u).reshape(problem.horizon, -1)
    m = problem.system.input_dim
    return BatchSolution(_frozen(sol.u.reshape(-1, m)), _frozen(eta), sol.alpha, sol.status,
                         sol.kkt)


def minimal_intervention(ref, system, r, eta1):
    """Unconstrained tracking of ``ref`` with ``Q_t = Sigma_t^{-1}`` and ``eta_hat_t = mu_t``."""
    if not isinstance(ref, RefTrajectory):
        raise ValidationError("minimal_intervention expects a RefTrajectory", _STAGE)
    q = np.array([np.linalg.inv(s) for s in ref.sigma])
    q = 0.5 * (q + np.transpose(q, (0, 2, 1)))
    problem = MpcProblem(system, len(ref), eta1, ref.mu, q, r)
    return solve_batch(problem)


def receding_horizon(problem, replan_every=1):
    """Closed-loop rollout that re-solves every ``replan_every`` steps.

    Each solve covers the remaining reference (the horizon shrinks), and
    the first ``replan_every`` controls of the plan are applied.
    """
    if int(replan_every) != replan_every or replan_every < 1:
        raise ValidationError("replan_every must be a positive integer", _STAGE)
    eta = [np.array(problem.eta1)]
    u_applied = []
    t = 0
    big_n = problem.horizon
    while t < big_n - 1:
        sub = MpcProblem(problem.system, big_n - t, eta[-1], problem.eta_hat[t:], problem.q[t:],
                         problem.r[t:], problem.eta_min, problem.eta_max, problem.u_min,
                         problem.u_max)
        plan = solve_batch(sub)
        for u_t in plan.u[:replan_every]:
            u_applied.append(u_t)
            eta.append(problem.system.a @ eta[-1] + problem.system.b @ u_t)
            t += 1
    return _frozen(np.array(u_applied)), _frozen(np.array(eta))


@dataclass(frozen=True)
class EquivalenceReport:
    """Outcome of :func:`equivalence_check`; ``passed`` compares ``deviation`` to ``tol``."""

    deviation: float
    tol: float
    n_steps: int
    n_features: int
    n_constraints: int
    kmp_status: str
    mpc_status: str
    mpc_kkt: dict

    @property
    def passed(self):
        return self.deviation <= self.tol

    HEADER = ("optimization-problem equivalence (S_u = Phi^T is not block lower "
              "triangular, so it is not the stacked matrix of a causal linear system)")

    def lines(self):
        return [
            self.HEADER,
            f"steps {self.n_steps}  features {self.n_features}  "
            f"active constraints {self.n_constraints}",
            f"lckmp dual status {self.kmp_status}  mpc dual status {self.mpc_status}",
            "mpc kkt " + "  ".join(f"{k} {v:.3e}" for k, v in self.mpc_kkt.items()),
            f"max deviation {self.deviation:.3e}  tol {self.tol:.1e}  "
            + ("PASS" if self.passed else "FAIL"),
        ]


def equivalence_check(model, features, tol=EQUIVALENCE_TOL):
    """Solve a trained constrained model again as a batch MPC problem.

    With the explicit basis ``Phi`` of ``features`` the mapping is
    ``S_u = Phi^T``, ``eta_hat = mu``, ``Q = Sigma^{-1}``, ``R = lam I``,
    ``W1 = Gbar^T Phi^T``, ``W2 = Cbar`` and ``eta_1 = 0``. The decision
    variable is the weight vector ``w``; the report compares the kernel
    prediction on the grid with ``S_u w*``.

    ``model`` must have been trained with ``features.spec(...)`` as kernel.
    """
    if not isinstance(model, LcKmpModel):
        raise ValidationError("equivalence_check expects a trained LcKmpModel", _STAGE)
    if not isinstance(features, RandomFeatureMap):
        raise ValidationError("equivalence_check needs an explicit RandomFeatureMap", _STAGE)
    n_steps = len(model.ref)
    if n_steps > MAX_EQUIVALENCE_STEPS or features.n_features > MAX_EQUIVALENCE_FEATURES:
        raise ValidationError(
            f"instance too large for the explicit-feature check: N={n_steps} "
            f"(max {MAX_EQUIVALENCE_STEPS}), B={features.n_features} "
            f"(max {MAX_EQUIVALENCE_FEATURES})", _STAGE)
    owner = model.spec.function
    if not (isinstance(owner, RandomFeatureMap) and np.array_equal(owner.omega, features.omega)
            and np.array_equal(owner.phase, features.phase)):
        raise ValidationError("model kernel is not the inner product of the given features",
                              _STAGE)
    o = model.output_dim
    phi = features.design(model.ref.times, o, model.spec.delta)
    s_u = phi.T
    sigma_inv = np.linalg.inv(model.Sigma)
    q_bar = 0.5 * (sigma_inv + sigma_inv.T)
    r_bar = model.lam * np.eye(phi.shape[0])
    if s_u.shape[0] != model.mu.size or model.Gbar.shape[0] != s_u.shape[0]:
        raise ValidationError("feature design does not match the model dimensions", _STAGE)
    h_mat = 2.0 * (s_u.T @ q_bar @ s_u + r_bar)
    f = -2.0 * s_u.T @ q_bar @ model.mu
    w1 = model.Gbar.T @ s_u
    sol = solve_condensed(h_mat, f, w1, model.Cbar)
    eta_mpc = (s_u @ sol.u).reshape(n_steps, -1)
    eta_kmp = predict(model, model.ref.times)
    deviation = float(np.max(np.abs(eta_mpc - eta_kmp)))
    return EquivalenceReport(deviation, tol, n_steps, features.n_features, w1.shape[0],
                             model.dual_status, sol.status, sol.kkt)
