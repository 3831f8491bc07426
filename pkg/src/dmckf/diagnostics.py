"""Fixed-point convergence conditions and operation-count accounting.

The convergence functions work on a single, unbatched
:class:`~dmckf.filters.AugmentedSystem`: rows ``w_h`` of ``W`` and entries
``d_h`` of ``D``. The fixed-point map analysed here is the raw-kernel one,

    f(x) = [sum_h G(e_h) w_h^T w_h]^-1 sum_h G(e_h) w_h^T d_h,  e_h = d_h - w_h x,

without the kernel floor the filter applies.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NoRootError, PreconditionError, RankDeficiencyError
from .linalg import gaussian_kernel, min_eigenvalue_sym, one_norm, spd_solve

DEFAULT_PROBES = 64
PROBE_SEED = 12345


@dataclass
class ConvergenceReport:
    zeta: float
    beta: float
    sigma: float
    sigma_star: float
    sigma_diamond: float
    alpha: float
    f_norm: float
    jacobian_norm: float
    probes: int
    satisfied: bool


@dataclass(frozen=True)
class ComplexityCount:
    add_mult: int
    special: int

    def __post_init__(self):
        if self.add_mult < 0 or self.special < 0:
            raise InvalidParameterError("operation counts must be non-negative")


def _rows(aug):
    W = np.asarray(aug.W, dtype=float)
    D = np.asarray(aug.D, dtype=float)
    if W.ndim != 2 or D.ndim != 1:
        raise InvalidParameterError("convergence diagnostics need an unbatched augmented system")
    return W, D


def _weighted_normal(W, weights):
    return (W.T * weights) @ W


def _lambda_min(M):
    lam = min_eigenvalue_sym(0.5 * (M + M.T))
    if not lam > 0:
        raise RankDeficiencyError(f"normal matrix has minimum eigenvalue {lam:.3e}")
    return lam


def _row_norms(W):
    return np.sum(np.abs(W), axis=1)


def zeta_bound(aug):
    """Radius lower bound ``sqrt(n) sum ||w_h||_1 |d_h| / lambda_min(W^T W)``."""
    W, D = _rows(aug)
    n = W.shape[1]
    return math.sqrt(n) * float(_row_norms(W) @ np.abs(D)) / _lambda_min(W.T @ W)


def _worst_kernels(W, D, sigma, beta):
    # smallest kernel value any x in the l1 ball of radius beta can produce on row h
    return gaussian_kernel(beta * _row_norms(W) + np.abs(D), sigma)


def phi(sigma, beta, aug):
    """Bound on ``||f(x)||_1`` over the ball ``||x||_1 <= beta``."""
    if not sigma > 0 or not beta > 0:
        raise InvalidParameterError("sigma and beta must be positive")
    W, D = _rows(aug)
    n = W.shape[1]
    num = math.sqrt(n) * float(_row_norms(W) @ np.abs(D))
    with np.errstate(over="ignore"):
        return float(num / _lambda_min(_weighted_normal(W, _worst_kernels(W, D, sigma, beta))))


def psi(sigma, beta, aug):
    """Bound on the Jacobian 1-norm of ``f`` over the same ball."""
    if not sigma > 0 or not beta > 0:
        raise InvalidParameterError("sigma and beta must be positive")
    W, D = _rows(aug)
    n = W.shape[1]
    total = 0.0
    for w, d in zip(W, D):
        wn = one_norm(w)
        outer = np.outer(w, w)
        total += (beta * wn + abs(d)) * wn * (beta * one_norm(outer) + one_norm(w * d))
    den = sigma * sigma * _lambda_min(_weighted_normal(W, _worst_kernels(W, D, sigma, beta)))
    with np.errstate(over="ignore"):
        return float(math.sqrt(n) * total / den)


def _decreasing_root(g, target, start=1e-3, max_doublings=60, rtol=1e-8):
    """Root of a non-increasing ``g(sigma) = target`` by bracketing + bisection."""

    def val(s):
        try:
            v = g(s)
        except RankDeficiencyError:
            return math.inf  # kernels underflowed: the bound is unbounded there
        return v if math.isfinite(v) else math.inf

    lo = hi = start
    if val(hi) <= target:
        for _ in range(max_doublings):
            lo /= 2.0
            if val(lo) > target:
                break
        else:
            raise NoRootError(f"no sign change below sigma={start}")
        hi = lo * 2.0
    else:
        for _ in range(max_doublings):
            lo, hi = hi, hi * 2.0
            if val(hi) <= target:
                break
        else:
            raise NoRootError(f"no bracket within {max_doublings} doublings from sigma={start}")
    while hi - lo > rtol * hi * 1e-4:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if val(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def solve_sigma_thresholds(beta, alpha, aug):
    """Bandwidths ``sigma*`` (``phi = beta``) and ``sigma_diamond`` (``psi = alpha``)."""
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    zeta = zeta_bound(aug)
    if not beta > zeta:
        raise PreconditionError(f"beta={beta:.6g} must exceed zeta={zeta:.6g}")
    sigma_star = _decreasing_root(lambda s: phi(s, beta, aug), beta)
    sigma_diamond = _decreasing_root(lambda s: psi(s, beta, aug), alpha)
    return sigma_star, sigma_diamond


def fixed_point_map(x, aug, sigma):
    """Raw-kernel fixed-point map ``f(x)`` (no kernel floor)."""
    W, D = _rows(aug)
    g = gaussian_kernel(D - W @ x, sigma)
    try:
        return spd_solve(_weighted_normal(W, g), (W.T * g) @ D, block="normal")
    except ArithmeticError as exc:
        raise RankDeficiencyError(f"kernel-weighted normal matrix is singular: {exc}") from exc


def jacobian_f(x, aug, sigma):
    """Analytic Jacobian of :func:`fixed_point_map`; column ``j`` is ``df/dx_j``."""
    W, D = _rows(aug)
    x = np.asarray(x, dtype=float)
    e = D - W @ x
    g = gaussian_kernel(e, sigma)
    M = _weighted_normal(W, g)
    f = fixed_point_map(x, aug, sigma)
    n = W.shape[1]
    J = np.empty((n, n))
    # c_h = e_h G(e_h) / sigma^2 is the derivative of G(e_h) along w_h
    c = e * g / (sigma * sigma)
    for j in range(n):
        cj = c * W[:, j]
        dM = (W.T * cj) @ W
        db = (W.T * cj) @ D
        J[:, j] = spd_solve(M, db - dM @ f)
    return J


def sample_l1_ball(n, radius, count, rng):
    """Uniform points in ``{x : ||x||_1 <= radius}``."""
    if count == 0:
        return np.empty((0, n))
    # Dirichlet(1,...,1) with a slack coordinate gives a uniform simplex point
    e = rng.exponential(size=(count, n + 1))
    simplex = e[:, :n] / e.sum(axis=1, keepdims=True)
    signs = rng.choice((-1.0, 1.0), size=(count, n))
    return radius * simplex * signs


def verify_contraction(aug, sigma, beta, probes=DEFAULT_PROBES, alpha=None, seed=PROBE_SEED):
    """Check the self-map and contraction conditions on random probe points.

    ``satisfied`` requires ``beta > zeta``, ``max ||f(x)||_1 <= beta`` and
    ``max ||J(x)||_1 < 1`` (``<= alpha`` when ``alpha`` is given). With no
    probes the maxima are reported as 0 and only ``beta > zeta`` is checked.
    A probe where the kernel-weighted normal matrix is singular makes both
    maxima infinite. The threshold bandwidths are filled in when they can be
    solved for (``alpha`` defaults to 0.5 for that purpose), else NaN.
    """
    W, _ = _rows(aug)
    n = W.shape[1]
    zeta = zeta_bound(aug)
    target = 0.5 if alpha is None else alpha
    try:
        s_star, s_diamond = solve_sigma_thresholds(beta, target, aug)
    except (PreconditionError, NoRootError):
        s_star = s_diamond = float("nan")
    pts = sample_l1_ball(n, beta, probes, np.random.default_rng(seed))
    f_norm = j_norm = 0.0
    for x in pts:
        try:
            f_norm = max(f_norm, one_norm(fixed_point_map(x, aug, sigma)))
            j_norm = max(j_norm, one_norm(jacobian_f(x, aug, sigma)))
        except RankDeficiencyError:
            # kernels underflowed at this probe: f is undefined there
            f_norm = j_norm = math.inf
            break
    ok = beta > zeta and f_norm <= beta and j_norm < 1.0
    if alpha is not None:
        ok = ok and j_norm <= alpha
    return ConvergenceReport(
        zeta=zeta, beta=float(beta), sigma=float(sigma), sigma_star=s_star, sigma_diamond=s_diamond,
        alpha=target, f_norm=f_norm, jacobian_norm=j_norm, probes=int(probes), satisfied=bool(ok),
    )


# Per-equation operation counts, as functions of (n, m): (add/mult, special).
# Keys name the operation; the special column groups divisions, inversions,
# Cholesky factorizations and exponentials, with O(k^3) taken as k^3.
TABLE_ROWS = {
    "stacked_observation": lambda n, m: (2 * n * m, 0),
    "received_observation": lambda n, m: (2 * m * m - m, 0),
    "state_prediction": lambda n, m: (2 * n * n - n, 0),
    "sdkf_gain": lambda n, m: (9 * n**3 - 4 * n * n + 6 * m * n * n + 4 * m * m * n - 3 * m * n + m * m, m**3),
    "sdkf_estimate": lambda n, m: (2 * m * m * n + 3 * m * n - n + 2 * n * n, 0),
    "sdkf_covariance": lambda n, m: (2 * n**3 - n * n + 4 * m * n * n + 6 * m * m * n - 4 * m * n + m * m, m**3),
    "kernel": lambda n, m: (2 * n + 4, 2),
    "fp_estimate": lambda n, m: (2 * m * m * n + 3 * m * n, 0),
    "fp_gain": lambda n, m: (2 * m**3 + 8 * m * m * n + 4 * m * n * n - 5 * m * n - m * m, 0),
    "fp_state_cov": lambda n, m: (4 * n**3 + 4 * n, 2 * n + n**3),
    "fp_meas_cov": lambda n, m: (2 * m * n + 4 * m + 4 * m**3 - 2 * m * m, 2 * m + m**3),
    "fp_state_weights": lambda n, m: (2 * n * n + 4 * n, 2 * n),
    "fp_meas_weights": lambda n, m: (2 * m * n + 4 * m, 2 * m),
    "fp_residual": lambda n, m: (2 * n, 0),
}

SDKF_ROWS = ("stacked_observation", "received_observation", "state_prediction",
             "sdkf_gain", "sdkf_estimate", "sdkf_covariance")


def _check_dims(n, m_ia):
    if int(n) < 1 or int(m_ia) < 1:
        raise InvalidParameterError("n and m_ia must be >= 1")


def sdkf_flops(n, m_ia):
    """Operation count of one stationary-DKF step."""
    _check_dims(n, m_ia)
    n, m = int(n), int(m_ia)
    add_mult = (11 * n**3 + 12 * m * m * n + 10 * m * n * n + 4 * m * m
                - 2 * m * n - n * n - 2 * n - m)
    return ComplexityCount(add_mult, 2 * m**3)


def dmckf_flops(n, m_ia, t):
    """Operation count of one DMCKF-DPD step averaging ``t`` fixed-point passes.

    ``t`` may be fractional (an empirical average); the count is then a float.
    """
    _check_dims(n, m_ia)
    if not t >= 1:
        raise InvalidParameterError(f"average iteration count must be >= 1, got {t}")
    n, m = int(n), int(m_ia)
    add_mult = (6 * t * m**3 + 6 * t * n**3 + 16 * t * m * m * n + 10 * t * m * n * n
                + (2 - 3 * t) * m * m + 2 * n * n + (2 - 3 * t) * m * n
                + (6 * t - 1) * m + (6 * t - 1) * n)
    special = t * (n**3 + m**3)
    if float(t).is_integer():
        add_mult, special = int(add_mult), int(special)
    return ComplexityCount(add_mult, special)


def counted_matvec(M, v):
    """Dense ``M @ v`` in plain Python, returning ``(result, add_mult_count)``."""
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    ops = 0
    out = np.zeros(M.shape[0])
    for r in range(M.shape[0]):
        acc = M[r, 0] * v[0]
        ops += 1
        for c in range(1, M.shape[1]):
            acc += M[r, c] * v[c]
            ops += 2
        out[r] = acc
    return out, ops


def counted_vector_add(a, b):
    return np.asarray(a, dtype=float) + np.asarray(b, dtype=float), int(np.size(a))
