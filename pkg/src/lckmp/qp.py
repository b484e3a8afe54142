"""Sign-constrained concave quadratic programs.

Maximize ``alpha^T B1 alpha + B2 alpha`` subject to ``alpha >= 0`` where
``B1`` is symmetric negative semidefinite. :func:`solve` is the production
solver; :func:`kkt_enumerate` is a brute-force oracle for small problems.

Internally both work on the equivalent minimization
``0.5 a^T Q a + c^T a`` with ``Q = -2 B1`` and ``c = -B2``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from ._validation import as_float_array, check_finite, check_symmetric
from .exceptions import NumericalError, ValidationError

_STAGE = "qp"

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
DEGENERATE = "degenerate"

# Dual objective beyond this is treated as divergence (infeasible primal).
DIVERGENCE = 1e12


@dataclass(frozen=True, eq=False)
class DualProblem:
    """Coefficients of the dual program; construction validates symmetry and NSD."""

    b1: np.ndarray
    b2: np.ndarray
    nsd_tol: float = 1e-7

    def __post_init__(self):
        b1 = as_float_array(self.b1, "B1", ndim=2, stage=_STAGE)
        b2 = as_float_array(self.b2, "B2", stage=_STAGE).reshape(-1)
        check_finite(b1, "B1", _STAGE)
        check_finite(b2, "B2", _STAGE)
        if b1.shape != (b2.size, b2.size):
            raise ValidationError(f"B1 shape {b1.shape} does not match B2 length {b2.size}", _STAGE)
        check_symmetric(b1, "B1", atol=1e-9, stage=_STAGE)
        b1 = 0.5 * (b1 + b1.T)
        if b2.size:
            top = float(scipy.linalg.eigvalsh(b1, subset_by_index=[b2.size - 1, b2.size - 1])[0])
            norm = float(np.max(np.abs(b1))) * b2.size
            if top > self.nsd_tol * max(1.0, norm):
                raise NumericalError(
                    f"B1 is not negative semidefinite (largest eigenvalue {top:.3e})", _STAGE
                )
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)

    @property
    def dim(self):
        return self.b2.size

    def objective(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return float(alpha @ self.b1 @ alpha + self.b2 @ alpha)

    def gradient(self, alpha):
        return 2.0 * self.b1 @ alpha + self.b2

    @property
    def scale(self):
        return 1.0 + (float(np.max(np.abs(self.b2))) if self.dim else 0.0)


@dataclass(frozen=True, eq=False)
class DualSolution:
    alpha: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    history: list = field(default_factory=list)


def kkt_residual(prob, alpha, tol=1e-8):
    """Largest KKT violation in units of ``1 + max|B2|``.

    Free entries (``alpha_i > tol``) need a vanishing gradient; entries at
    the bound need a non-positive gradient.
    """
    if prob.dim == 0:
        return 0.0
    grad = prob.gradient(alpha)
    free = alpha > tol
    viol = np.where(free, np.abs(grad), np.maximum(grad, 0.0))
    return float(np.max(viol)) / prob.scale


def _finish(prob, alpha, iterations, status, history, tol):
    alpha = np.maximum(alpha, 0.0)
    res = kkt_residual(prob, alpha, tol)
    obj = prob.objective(alpha)
    if status == OPTIMAL and res > tol:
        status = MAX_ITER
    if not np.isfinite(obj) or obj > DIVERGENCE:
        status = DEGENERATE
    alpha.setflags(write=False)
    return DualSolution(alpha, obj, res, iterations, status, history)


def _free_direction(qff, g_free, thresh):
    """Search direction on the free variables.

    If ``-g`` has a component of norm above ``thresh`` in the numerical null
    space of ``qff``, that component is returned: the objective decreases
    linearly along it, so the step runs until a variable hits zero.
    Otherwise the Newton step ``-pinv(qff) g`` on the range is returned.
    Mixing the two would leave the exact line search optimal for neither.
    """
    w, v = np.linalg.eigh(qff)
    top = max(float(np.max(np.abs(w))), 1e-300)
    keep = w > 1e-9 * top
    proj = v.T @ g_free
    null = -(v[:, ~keep] @ proj[~keep])
    if np.linalg.norm(null) > thresh:
        return null
    return -(v[:, keep] @ (proj[keep] / w[keep]))


def unbounded_direction(prob, tol=1e-8):
    """A direction ``d >= 0``, ``sum(d) = 1`` with ``B1 d = 0`` and ``B2 d > 0``, or None.

    Such a direction exists exactly when the dual objective is unbounded
    above, i.e. when the constraints it came from cannot all hold. The null
    space of ``B1`` uses the same relative eigenvalue cutoff as the solver.
    """
    if prob.dim == 0:
        return None
    w, v = np.linalg.eigh(prob.b1)
    top = max(float(np.max(np.abs(w))), 1e-300)
    basis = v[:, np.abs(w) <= 1e-9 * top]
    if basis.shape[1] == 0:
        return None
    k = basis.shape[1]
    res = scipy.optimize.linprog(
        -(prob.b2 @ basis), A_ub=-basis, b_ub=np.zeros(prob.dim),
        A_eq=basis.sum(axis=0)[None, :], b_eq=[1.0], bounds=[(None, None)] * k,
        method="highs",
    )
    if res.status != 0 or -res.fun <= tol * prob.scale:
        return None
    return np.maximum(basis @ res.x, 0.0)


def _polish(prob, q, c, alpha, sweeps=2):
    """Full Newton steps on the support, kept while feasible and not worse.

    The stopping test bounds the gradient, not the objective gap, which can
    still be ``g^T Q^+ g`` on an ill-conditioned support.
    """
    for _ in range(sweeps):
        idx = np.flatnonzero(alpha > 0.0)
        if idx.size == 0:
            break
        g = q[idx] @ alpha + c[idx]
        step, *_ = np.linalg.lstsq(q[np.ix_(idx, idx)], -g, rcond=None)
        new = alpha.copy()
        new[idx] += step
        if np.any(new[idx] < 0.0) or not prob.objective(new) >= prob.objective(alpha):
            break
        alpha = new
    return alpha


def solve(prob, tol=1e-8, max_iter=None):
    """Maximize the dual objective over the nonnegative orthant.

    Projected gradient ascent with exact line search identifies a working
    set; an active-set refinement then moves along the Newton direction of
    the free subsystem, again with an exact line search that stops at the
    first entry reaching zero. No accepted step decreases the objective.

    Returns a :class:`DualSolution`; exhausting ``max_iter`` yields status
    ``"max_iter"`` with the best iterate rather than raising. A direction
    of zero curvature that no bound blocks means the dual is unbounded and
    gives status ``"degenerate"``.
    """
    dim = prob.dim
    if max_iter is None:
        max_iter = 1000 * max(dim, 1)
    if dim == 0:
        return DualSolution(np.zeros(0), 0.0, 0.0, 0, OPTIMAL, [0.0])
    q = -2.0 * prob.b1
    c = -prob.b2
    thresh = tol * prob.scale
    alpha = np.zeros(dim)
    history = [0.0]
    it = 0

    def line_step(alpha, g, p):
        """Exact minimization along ``p`` up to the first bound; None if unbounded."""
        slope = float(g @ p)
        if not slope < 0.0:
            return alpha, False
        curv = float(p @ q @ p)
        tau = -slope / curv if curv > 1e-14 * float(p @ p) * max(1.0, np.abs(q).max()) else np.inf
        shrink = p < 0.0
        block = np.inf
        if shrink.any():
            block = float(np.min(alpha[shrink] / -p[shrink]))
        if block < tau:
            tau = block
        if not np.isfinite(tau):
            return alpha, None
        if tau <= 0.0:
            return alpha, False
        new = alpha + tau * p
        if tau == block:
            hit = shrink & (alpha / np.where(shrink, -p, 1.0) <= block * (1 + 1e-12))
            new[hit] = 0.0
        new[new < 0.0] = 0.0
        return new, True

    def pg_step(alpha, g):
        p = -g
        p[(alpha <= 0.0) & (p < 0.0)] = 0.0
        return line_step(alpha, g, p)

    def record(alpha):
        history.append(prob.objective(alpha))
        return history[-1] > DIVERGENCE

    # Phase 1: projected gradient until the support settles.
    stable, prev = 0, None
    pg_limit = min(max_iter, 20 + 2 * dim)
    while it < pg_limit:
        g = q @ alpha + c
        if np.max(np.where(alpha > 0.0, np.abs(g), np.maximum(-g, 0.0))) <= thresh:
            break
        alpha, ok = pg_step(alpha, g)
        if ok is None:
            return _finish(prob, alpha, it, DEGENERATE, history, tol)
        if not ok:
            break
        it += 1
        if record(alpha):
            return _finish(prob, alpha, it, DEGENERATE, history, tol)
        support = alpha > 0.0
        if prev is not None and np.array_equal(support, prev):
            stable += 1
            if stable >= 5:
                break
        else:
            stable = 0
        prev = support

    # Phase 2: active-set refinement.
    entering = None
    while it < max_iter:
        g = q @ alpha + c
        free = alpha > 0.0
        if entering is not None:
            free[entering] = True
        idx = np.flatnonzero(free)
        if entering is None and (idx.size == 0 or np.max(np.abs(g[idx])) <= thresh):
            cand = ~free & (g < -thresh)
            if not cand.any():
                alpha = _polish(prob, q, c, alpha)
                history.append(prob.objective(alpha))
                return _finish(prob, alpha, it, OPTIMAL, history, tol)
            entering = int(np.argmin(np.where(cand, g, np.inf)))
            continue
        entering = None
        it += 1
        p = np.zeros(dim)
        p[idx] = _free_direction(q[np.ix_(idx, idx)], g[idx], thresh)
        new, ok = line_step(alpha, g, p)
        if ok is None:
            return _finish(prob, alpha, it, DEGENERATE, history, tol)
        if not ok:
            # no progress on the free subspace; fall back to a gradient step
            new, ok = pg_step(alpha, g)
            if ok is None:
                return _finish(prob, alpha, it, DEGENERATE, history, tol)
            if not ok:
                break
        alpha = new
        if record(alpha):
            return _finish(prob, alpha, it, DEGENERATE, history, tol)

    status = MAX_ITER if unbounded_direction(prob, tol) is None else DEGENERATE
    return _finish(prob, alpha, it, status, history, tol)


def kkt_enumerate(prob, tol=1e-9):
    """Global optimum by enumerating every active-set pattern.

    For each choice of zero entries the stationarity system on the remaining
    entries is solved by least squares; candidates that are nonnegative,
    consistent and have non-positive gradients on the zero entries are KKT
    points, and the best objective among them is returned.
    """
    dim = prob.dim
    if dim > 20:
        raise ValidationError(f"kkt_enumerate supports at most 20 variables, got {dim}", _STAGE)
    if dim == 0:
        return DualSolution(np.zeros(0), 0.0, 0.0, 0, OPTIMAL, [0.0])
    q = -2.0 * prob.b1
    c = -prob.b2
    thresh = tol * prob.scale
    best, best_obj, count = None, -np.inf, 0
    for size in range(dim + 1):
        for subset in itertools.combinations(range(dim), size):
            count += 1
            idx = np.array(subset, dtype=int)
            alpha = np.zeros(dim)
            if idx.size:
                qff = q[np.ix_(idx, idx)]
                sol, *_ = np.linalg.lstsq(qff, -c[idx], rcond=None)
                if np.linalg.norm(qff @ sol + c[idx]) > thresh * max(1.0, np.sqrt(idx.size)):
                    continue
                if np.any(sol < -thresh):
                    continue
                alpha[idx] = np.maximum(sol, 0.0)
            g = q @ alpha + c
            rest = np.ones(dim, dtype=bool)
            rest[idx] = False
            if np.any(g[rest] < -thresh):
                continue
            obj = prob.objective(alpha)
            if obj > best_obj:
                best, best_obj = alpha, obj
    if best is None:
        return DualSolution(np.zeros(dim), np.inf, np.inf, count, DEGENERATE, [])
    best.setflags(write=False)
    return DualSolution(best, best_obj, kkt_residual(prob, best, tol), count, OPTIMAL, [best_obj])
