"""Small input-checking helpers shared across modules."""

import numpy as np

from .exceptions import ValidationError


def as_float_array(x, name, ndim=None, stage=None):
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not numeric: {exc}", stage) from exc
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(
            f"{name} must be {ndim}-dimensional, got shape {arr.shape}", stage
        )
    return arr


def check_finite(arr, name, stage=None):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries", stage)
    return arr


def check_increasing(times, name="times", strict=True, stage=None):
    diffs = np.diff(times)
    bad = np.flatnonzero(diffs <= 0) if strict else np.flatnonzero(diffs < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise ValidationError(
            f"{name} must be strictly increasing; entry {i} "
            f"({times[i]!r}) does not exceed entry {i - 1} ({times[i - 1]!r})",
            stage,
        )
    return times


def check_positive(value, name, stage=None):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value}", stage)
    return value


def check_symmetric(mat, name, atol=1e-9, stage=None):
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {mat.shape}", stage)
    if not np.allclose(mat, mat.T, rtol=0.0, atol=atol * scale):
        raise ValidationError(f"{name} is not symmetric", stage)
    return mat


def is_spd(mat):
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def jitter_to_pd(mat, max_tries=12):
    """Symmetrize ``mat`` and add ``1e-8 * trace/dim * I`` until Cholesky succeeds.

    The jitter grows tenfold on each failed attempt.
    """
    mat = 0.5 * (mat + mat.T)
    if is_spd(mat):
        return mat
    dim = mat.shape[0]
    base = abs(np.trace(mat)) / dim
    if base == 0.0 or not np.isfinite(base):
        base = 1.0
    eye = np.eye(dim)
    amount = 1e-8 * base
    for _ in range(max_tries):
        candidate = mat + amount * eye
        if is_spd(candidate):
            return candidate
        amount *= 10.0
    raise ValidationError("matrix could not be made positive definite")
