"""Dense linear-algebra and correntropy primitives.

Every routine accepts numpy arrays and, where noted, broadcasts over leading
batch dimensions so the filter can process many (trial, node) pairs at once.
"""

from math import factorial

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DecompositionError, InvalidParameterError

PIVOT_TOL = 1e-14
SYMMETRY_TOL = 1e-12


def gaussian_kernel(e, sigma):
    """Gaussian kernel ``exp(-e**2 / (2 sigma**2))``; ``e`` may be an array."""
    if not sigma > 0:
        raise InvalidParameterError(f"kernel bandwidth must be positive, got {sigma!r}")
    e = np.asarray(e, dtype=float)
    out = np.exp(-(e * e) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def _paired_errors(xs, ys):
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size == 0 or xs.size != ys.size:
        raise InvalidParameterError(
            f"need two non-empty sequences of equal length, got {xs.size} and {ys.size}"
        )
    return xs - ys


def sample_correntropy(xs, ys, sigma):
    """Sample estimator of correntropy: mean kernel value of paired errors."""
    e = _paired_errors(xs, ys)
    return float(np.mean(gaussian_kernel(e, sigma)))


def correntropy_taylor(xs, ys, sigma, order):
    """Correntropy via its even-moment series truncated after ``order`` terms.

    Converges quickly only when every ``|x - y|`` is well below ``sigma``;
    this is not checked.
    """
    if not sigma > 0:
        raise InvalidParameterError(f"kernel bandwidth must be positive, got {sigma!r}")
    if order < 0:
        raise InvalidParameterError(f"order must be non-negative, got {order}")
    e2 = _paired_errors(xs, ys) ** 2
    total = 0.0
    for n in range(order + 1):
        coeff = (-1.0) ** n / (2.0**n * sigma ** (2 * n) * factorial(n))
        total += coeff * float(np.mean(e2**n))
    return total


def symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_square(a, name="matrix"):
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidParameterError(f"{name} must be square, got shape {a.shape}")


def _check_symmetric(a, tol, name="matrix"):
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))) > tol * scale:
        raise InvalidParameterError(f"{name} is not symmetric within {tol:g}")


def _first_bad_pivot(a):
    """Column-by-column factorization of a single matrix to locate the failure."""
    n = a.shape[-1]
    low = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - low[j, :j] @ low[j, :j]
        if not pivot > PIVOT_TOL:
            return j, float(pivot)
        low[j, j] = np.sqrt(pivot)
        low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return None, None


def cholesky(a, block=None):
    """Lower-triangular factor ``B`` with ``B @ B.T == a``.

    Broadcasts over leading dimensions. Pivots at or below ``PIVOT_TOL``
    raise :class:`DecompositionError` naming the (first) failing pivot;
    they are never clamped.
    """
    a = np.asarray(a, dtype=float)
    _check_square(a)
    _check_symmetric(a, SYMMETRY_TOL)
    try:
        low = np.linalg.cholesky(a)
        pivots = np.diagonal(low, axis1=-2, axis2=-1) ** 2
        ok = bool(np.all(pivots > PIVOT_TOL))
    except np.linalg.LinAlgError:
        ok = False
    if ok:
        return low
    flat = a.reshape(-1, a.shape[-2], a.shape[-1])
    for mat in flat:
        idx, value = _first_bad_pivot(mat)
        if idx is not None:
            raise DecompositionError(idx, value, block)
    # numpy rejected a matrix whose pivots all clear the threshold
    raise DecompositionError(0, float("nan"), block)


def solve_lower(low, b, trans=False):
    """Solve ``low @ x = b`` (or ``low.T @ x = b``) by substitution.

    ``b`` may be a vector (``...,n``) or a matrix of right-hand sides
    (``...,n,k``); a vector is recognised by having one dimension fewer
    than ``low``. Batched inputs are solved row by row across the batch.
    """
    low = np.asarray(low, dtype=float)
    b = np.asarray(b, dtype=float)
    vec = b.ndim == low.ndim - 1
    if low.ndim == 2 and b.ndim <= 2:
        return solve_triangular(low, b, lower=True, trans=1 if trans else 0, check_finite=False)
    rhs = b[..., None] if vec else b
    batch = np.broadcast_shapes(low.shape[:-2], rhs.shape[:-2])
    low = np.broadcast_to(low, batch + low.shape[-2:])
    x = np.array(np.broadcast_to(rhs, batch + rhs.shape[-2:]), dtype=float)
    n = low.shape[-1]
    # substitution vectorised across the batch
    order = range(n - 1, -1, -1) if trans else range(n)
    for j in order:
        if trans and j < n - 1:
            x[..., j, :] -= np.matmul(low[..., None, j + 1 :, j], x[..., j + 1 :, :])[..., 0, :]
        elif not trans and j:
            x[..., j, :] -= np.matmul(low[..., None, j, :j], x[..., :j, :])[..., 0, :]
        x[..., j, :] /= low[..., j, j, None]
    return x[..., 0] if vec else x


def cho_solve(low, b):
    """Solve ``(low @ low.T) x = b`` given the Cholesky factor ``low``."""
    return solve_lower(low, solve_lower(low, b), trans=True)


def spd_solve(a, b, block=None):
    """Solve an SPD system through its Cholesky factorization."""
    return cho_solve(cholesky(a, block=block), b)


def one_norm(a):
    """Maximum absolute column sum; a 1-D input is treated as a column."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return float(np.sum(np.abs(a)))
    if a.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(a), axis=-2)))


def min_eigenvalue_sym(a):
    """Smallest eigenvalue of a symmetric matrix."""
    a = np.asarray(a, dtype=float)
    _check_square(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if float(np.max(np.abs(a - a.T))) > 1e-10 * scale:
        raise InvalidParameterError("matrix is not symmetric within 1e-10")
    return float(np.linalg.eigvalsh(symmetrize(a))[0])
