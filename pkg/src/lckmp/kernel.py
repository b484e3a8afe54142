"""Kernel evaluations with finite-difference derivative blocks.

For a scalar kernel ``k`` and step ``delta`` the 2O x 2O block between two
times is::

    [[k_tt I, k_td I],
     [k_dt I, k_dd I]]

with forward differences for every derivative term, so the block equals
the inner product of the features ``[phi(t); (phi(t + delta) - phi(t)) / delta]``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._validation import check_positive
from .exceptions import ValidationError


def gaussian(ti, tj, k_h):
    """``exp(-k_h (ti - tj)^2)``, broadcasting over array inputs."""
    d = np.subtract(ti, tj)
    return np.exp(-k_h * d * d)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel hyperparameters.

    ``function`` replaces the Gaussian by any scalar positive semidefinite
    kernel ``f(ti, tj)`` that broadcasts over arrays; ``k_h`` is then unused.
    If the object also has ``difference_terms(a, b, delta)`` returning the
    four forward-difference terms, that method is used instead of
    differencing ``f``.
    """

    k_h: float = 1.0
    delta: float = 1e-4
    output_dim: int = 1
    function: Optional[Callable] = None

    def __post_init__(self):
        check_positive(self.k_h, "k_h", "assemble")
        check_positive(self.delta, "delta", "assemble")
        if int(self.output_dim) != self.output_dim or self.output_dim < 1:
            raise ValidationError(f"output_dim must be a positive integer, got {self.output_dim}",
                                  "assemble")

    def __call__(self, ti, tj):
        if self.function is not None:
            return self.function(ti, tj)
        return gaussian(ti, tj, self.k_h)


def k_scalar(spec, ti, tj):
    return spec(ti, tj)


def _gaussian_terms(k_h, r, d):
    # The same forward differences written through r = ti - tj:
    # k(ti, tj + d) = k(r - d), k(ti + d, tj) = k(r + d), k(ti + d, tj + d) = k(r),
    # and k(r +- d) - k(r) = k(r) expm1(-k_h (d^2 +- 2 r d)) avoids the cancellation
    # that costs ~eps/d^2 in k_dd when the four values are subtracted directly.
    k00 = np.exp(-k_h * r * r)
    minus = np.expm1(-k_h * (d * d - 2.0 * r * d))
    plus = np.expm1(-k_h * (d * d + 2.0 * r * d))
    return np.stack(
        [
            np.stack([k00, k00 * minus / d]),
            np.stack([k00 * plus / d, -k00 * (minus + plus) / (d * d)]),
        ]
    )


def _difference_terms(spec, a, b):
    """The four scalar terms k_tt, k_td, k_dt, k_dd on the outer grid ``a x b``."""
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[None, ...]
    d = spec.delta
    if spec.function is None:
        return _gaussian_terms(spec.k_h, a - b, d)
    own_terms = getattr(spec.function, "difference_terms", None)
    if own_terms is not None:
        return own_terms(a, b, d)
    k00 = spec(a, b)
    k01 = spec(a, b + d)
    k10 = spec(a + d, b)
    k11 = spec(a + d, b + d)
    return np.stack(
        [
            np.stack([k00, (k01 - k00) / d]),
            np.stack([(k10 - k00) / d, (k11 - k10 - k01 + k00) / (d * d)]),
        ]
    )


def _tile(terms, o):
    # terms[p, q, i, j] -> matrix indexed (i, p, o) x (j, q, o')
    _, _, na, nb = terms.shape
    eye = np.eye(o)
    full = np.einsum("pqij,ab->ipajqb", terms, eye)
    return full.reshape(na * 2 * o, nb * 2 * o)


def k_block(spec, ti, tj):
    """2O x 2O kernel block between two scalar times."""
    terms = _difference_terms(spec, np.atleast_1d(float(ti)), np.atleast_1d(float(tj)))
    return _tile(terms, spec.output_dim)


def gram(spec, grid):
    """Kernel matrix of shape (2ON, 2ON) whose (i, j) tile is ``k_block(t_i, t_j)``."""
    t = np.asarray(grid, dtype=float)
    return _tile(_difference_terms(spec, t, t), spec.output_dim)


def cross_gram(spec, t_star, grid):
    """Row of kernel blocks between query time(s) and the grid.

    A scalar ``t_star`` gives shape (2O, 2ON); an array of Q query times
    gives the stacked (2OQ, 2ON) matrix.
    """
    t = np.asarray(grid, dtype=float)
    q = np.atleast_1d(np.asarray(t_star, dtype=float))
    return _tile(_difference_terms(spec, q, t), spec.output_dim)


class RandomFeatureMap:
    """Explicit finite features ``phi(t) = sqrt(2/B) cos(omega t + b)``.

    The frequencies are drawn from ``N(0, 2 k_h)`` so that ``phi(ti)^T phi(tj)``
    approximates the Gaussian kernel of bandwidth ``k_h``; the approximation
    quality is irrelevant here, what matters is that the induced kernel is
    exactly an inner product of materialized vectors.

    Parameters
    ----------
    n_features : int
        Basis dimension B.
    k_h : float, default=1.0
    seed : int, default=0
    """

    def __init__(self, n_features, k_h=1.0, seed=0):
        if int(n_features) != n_features or n_features < 1:
            raise ValidationError(f"n_features must be a positive integer, got {n_features}",
                                  "assemble")
        check_positive(k_h, "k_h", "assemble")
        rng = np.random.default_rng(seed)
        self.n_features = int(n_features)
        self.k_h = float(k_h)
        self.seed = seed
        self.omega = rng.normal(0.0, np.sqrt(2.0 * k_h), self.n_features)
        self.phase = rng.uniform(0.0, 2.0 * np.pi, self.n_features)

    def phi(self, t):
        """Feature vectors, shape ``t.shape + (B,)``."""
        t = np.asarray(t, dtype=float)[..., None]
        return np.sqrt(2.0 / self.n_features) * np.cos(self.omega * t + self.phase)

    def __call__(self, ti, tj):
        """``phi(ti)^T phi(tj)`` with numpy broadcasting over ``ti`` and ``tj``."""
        return np.einsum("...k,...k->...", self.phi(ti), self.phi(tj))

    kernel = __call__

    def difference_terms(self, a, b, delta):
        """Forward-difference kernel terms as inner products of differenced features.

        Differencing the features before the inner product keeps the
        rounding error at ``eps / delta`` instead of ``eps / delta^2``.
        """
        pa, pb = self.phi(a), self.phi(b)
        da = (self.phi(a + delta) - pa) / delta
        db = (self.phi(b + delta) - pb) / delta
        dot = lambda x, y: np.einsum("...k,...k->...", x, y)  # noqa: E731
        return np.stack([np.stack([dot(pa, pb), dot(pa, db)]),
                         np.stack([dot(da, pb), dot(da, db)])])

    def spec(self, delta=1e-4, output_dim=1):
        """A :class:`KernelSpec` whose scalar kernel is this feature inner product."""
        return KernelSpec(self.k_h, delta, output_dim, function=self)

    def theta(self, t, output_dim, delta):
        """``[I_O (x) phi(t), I_O (x) phi_dot(t)]`` of shape (B O, 2 O), forward-difference phi_dot."""
        p = self.phi(float(t))[:, None]
        pd = (self.phi(float(t) + delta)[:, None] - p) / delta
        eye = np.eye(output_dim)
        return np.hstack([np.kron(eye, p), np.kron(eye, pd)])

    def design(self, times, output_dim, delta):
        """Stacked ``[Theta(t_1) ... Theta(t_N)]`` of shape (B O, 2 O N)."""
        return np.hstack([self.theta(t, output_dim, delta) for t in np.asarray(times, float)])
