"""Distributed maximum-correntropy Kalman filter with packet drops.

Every function here broadcasts over leading batch dimensions: a
:class:`FilterState` may hold one node's estimate (``(n,)`` / ``(n, n)``) or
a whole ``(trials, nodes)`` grid of them. The harness relies on this to run
all nodes of all trials in lockstep.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DecompositionError, InvalidParameterError, SingularUpdateError
from .linalg import cholesky, gaussian_kernel, solve_lower, spd_solve, symmetrize


@dataclass(frozen=True)
class FilterConfig:
    """Tuning of the fixed-point update.

    ``weighted_joseph`` swaps the nominal stacked ``R`` in the covariance
    update for the kernel-weighted one used by the gain.
    """

    sigma: float = 2.0
    epsilon: float = 1e-6
    max_iterations: int = 100
    kernel_floor: float = 1e-12
    weighted_joseph: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iterations) < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if not 0 < self.kernel_floor < 1:
            raise InvalidParameterError("kernel_floor must lie in (0, 1)")


@dataclass
class FilterState:
    estimate: np.ndarray
    covariance: np.ndarray


@dataclass
class AugmentedSystem:
    """Whitened regression ``D = W x + e`` of one filter step.

    ``B_P`` and ``B_R`` are the Cholesky factors of the prior covariance and
    of ``D_p R D_p``; ``H = D_gamma C`` and ``s`` come from the stack.
    """

    D: np.ndarray
    W: np.ndarray
    B_P: np.ndarray
    B_R: np.ndarray
    prior: np.ndarray
    prior_cov: np.ndarray
    H: np.ndarray
    s: np.ndarray

    @property
    def n(self):
        return self.prior.shape[-1]

    @property
    def L(self):
        return self.D.shape[-1]

    @property
    def innovation(self):
        return self.s - np.einsum("...ij,...j->...i", self.H, self.prior)

    def residuals(self, x):
        return self.D - np.einsum("...ij,...j->...i", self.W, x)


@dataclass
class StepDiagnostics:
    iterations: np.ndarray
    converged: np.ndarray
    final_change: np.ndarray
    lambdas: np.ndarray


def predict(state, A, Q):
    """Time update ``x = A x``, ``P = A P A^T + Q`` (symmetrized)."""
    x = np.asarray(state.estimate, dtype=float)
    P = np.asarray(state.covariance, dtype=float)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or x.shape[-1] != n or P.shape[-2:] != (n, n) or np.shape(Q) != (n, n):
        raise InvalidParameterError(
            f"dimension mismatch: A {A.shape}, x {x.shape}, P {P.shape}, Q {np.shape(Q)}"
        )
    prior = x @ A.T
    prior_cov = symmetrize(A @ P @ A.T + Q)
    return prior, prior_cov


def _eye_like(m):
    return np.broadcast_to(np.eye(m.shape[-1]), m.shape)


def build_augmented(prior, prior_cov, stack):
    """Whiten ``[prior; s] = [I; D_gamma C] x + g`` by ``blockdiag(B_P, B_R)^-1``."""
    prior = np.asarray(prior, dtype=float)
    B_P = cholesky(prior_cov, block="state")
    p = stack.p
    meas_cov = p[..., :, None] * stack.R * p[..., None, :]
    B_R = cholesky(meas_cov, block="measurement")
    H = stack.H
    s = stack.s
    batch = np.broadcast_shapes(B_P.shape[:-2], B_R.shape[:-2], H.shape[:-2], prior.shape[:-1])
    B_P = np.broadcast_to(B_P, batch + B_P.shape[-2:])
    B_R = np.broadcast_to(B_R, batch + B_R.shape[-2:])
    D = np.concatenate(
        [solve_lower(B_P, np.broadcast_to(prior, batch + prior.shape[-1:])),
         solve_lower(B_R, np.broadcast_to(s, batch + s.shape[-1:]))],
        axis=-1,
    )
    W = np.concatenate(
        [solve_lower(B_P, _eye_like(B_P)), solve_lower(B_R, np.broadcast_to(H, batch + H.shape[-2:]))],
        axis=-2,
    )
    return AugmentedSystem(D=D, W=W, B_P=B_P, B_R=B_R, prior=prior, prior_cov=prior_cov, H=H, s=s)


def kernel_weights(residuals, sigma, floor):
    """Kernel value per residual, clamped from below at ``floor``."""
    return np.maximum(gaussian_kernel(residuals, sigma), floor)


def weighted_covariances(aug, lambdas):
    """Inflated covariances ``B diag(1/lambda) B^T`` for the state and
    measurement blocks."""
    n = aug.n
    lx, ly = lambdas[..., :n], lambdas[..., n:]
    P_t = symmetrize((aug.B_P / lx[..., None, :]) @ np.swapaxes(aug.B_P, -1, -2))
    R_t = symmetrize((aug.B_R / ly[..., None, :]) @ np.swapaxes(aug.B_R, -1, -2))
    return P_t, R_t


def weighted_gain(aug, lambdas):
    """Gain ``P~ H^T (H P~ H^T + R~)^-1`` for the given kernel weights."""
    P_t, R_t = weighted_covariances(aug, lambdas)
    H = aug.H
    HP = H @ P_t
    S = symmetrize(HP @ np.swapaxes(H, -1, -2) + R_t)
    try:
        KT = spd_solve(S, HP, block="innovation")
    except DecompositionError as exc:
        raise SingularUpdateError(f"innovation covariance is singular: {exc}") from exc
    return np.swapaxes(KT, -1, -2)


def gain_form_solve(aug, lambdas):
    """Posterior ``prior + K (s - H prior)`` for fixed kernel weights."""
    K = weighted_gain(aug, lambdas)
    return aug.prior + np.einsum("...ij,...j->...i", K, aug.innovation)


def direct_mc_solve(aug, lambdas):
    """Weighted normal equations ``(W^T L W)^-1 W^T L D``.

    Independent of the gain form; used to cross-check it.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0):
        raise InvalidParameterError("kernel weights must be positive")
    WtL = np.swapaxes(aug.W, -1, -2) * lambdas[..., None, :]
    normal = symmetrize(WtL @ aug.W)
    rhs = np.einsum("...ij,...j->...i", WtL, aug.D)
    try:
        return spd_solve(normal, rhs, block="normal")
    except DecompositionError as exc:
        raise SingularUpdateError(f"normal matrix is singular: {exc}") from exc


def _relative_change(new, old):
    num = np.linalg.norm(new - old, axis=-1)
    den = np.linalg.norm(old, axis=-1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), num)


def _take(aug, idx):
    return AugmentedSystem(
        D=aug.D[idx], W=aug.W[idx], B_P=aug.B_P[idx], B_R=aug.B_R[idx],
        prior=aug.prior[idx], prior_cov=aug.prior_cov[idx], H=aug.H[idx], s=aug.s[idx],
    )


def _flatten(aug):
    batch = aug.D.shape[:-1]
    n, L = aug.n, aug.L
    m = L - n

    def flat(a, tail):
        return np.ascontiguousarray(np.broadcast_to(a, batch + tail)).reshape((-1,) + tail)

    return batch, AugmentedSystem(
        D=flat(aug.D, (L,)), W=flat(aug.W, (L, n)), B_P=flat(aug.B_P, (n, n)),
        B_R=flat(aug.B_R, (m, m)), prior=flat(aug.prior, (n,)),
        prior_cov=flat(aug.prior_cov, (n, n)), H=flat(aug.H, (m, n)), s=flat(aug.s, (m,)),
    )


def fixed_point_update(aug, config):
    """Iterate the correntropy fixed point starting from the prior.

    Each pass reweights the whitened residuals of the current iterate and
    recomputes the gain; it stops once the change relative to the previous
    iterate is at most ``epsilon`` (absolute change if that iterate is zero)
    or after ``max_iterations`` passes. Returns the final iterate, its gain
    and per-item diagnostics; the reported weights are the ones that
    produced the final iterate.
    """
    batch, flat = _flatten(aug)
    B, n, L = flat.D.shape[0], flat.n, flat.L
    x = flat.prior.copy()
    K = np.zeros((B, n, L - n))
    lambdas = np.ones((B, L))
    iterations = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    change = np.full(B, np.inf)
    active = np.arange(B)
    sub = flat
    for _ in range(int(config.max_iterations)):
        x_t = x[active]
        lam = kernel_weights(sub.residuals(x_t), config.sigma, config.kernel_floor)
        K_new = weighted_gain(sub, lam)
        x_new = sub.prior + np.einsum("...ij,...j->...i", K_new, sub.innovation)
        rel = _relative_change(x_new, x_t)
        x[active] = x_new
        K[active] = K_new
        lambdas[active] = lam
        iterations[active] += 1
        change[active] = rel
        done = rel <= config.epsilon
        converged[active[done]] = True
        if done.all():
            break
        keep = ~done
        active = active[keep]
        sub = _take(sub, keep)
    diag = StepDiagnostics(
        iterations=iterations.reshape(batch),
        converged=converged.reshape(batch),
        final_change=change.reshape(batch),
        lambdas=lambdas.reshape(batch + (L,)),
    )
    return x.reshape(batch + (n,)), K.reshape(batch + (n, L - n)), diag


def update_covariance(gain, stack, prior_cov, noise_cov=None):
    """Joseph-form posterior covariance with the nominal stacked ``R``
    unless ``noise_cov`` is given."""
    H = stack.H
    noise_cov = stack.R if noise_cov is None else noise_cov
    n = prior_cov.shape[-1]
    if gain.shape[-2] != n or gain.shape[-1] != H.shape[-2]:
        raise InvalidParameterError(f"gain shape {gain.shape} incompatible with H {H.shape}")
    IKH = np.eye(n) - gain @ H
    P = IKH @ prior_cov @ np.swapaxes(IKH, -1, -2) + gain @ noise_cov @ np.swapaxes(gain, -1, -2)
    return symmetrize(P)


def _posterior_cov(K, stack, prior_cov, aug, lambdas, config):
    if config is not None and config.weighted_joseph:
        _, R_t = weighted_covariances(aug, lambdas)
        return update_covariance(K, stack, prior_cov, R_t)
    return update_covariance(K, stack, prior_cov)


def dmckf_dpd_step(state, model, stack, config):
    """One full DMCKF-DPD recursion: predict, whiten, iterate, update."""
    prior, prior_cov = predict(state, model.A, model.Q)
    aug = build_augmented(prior, prior_cov, stack)
    x, K, diag = fixed_point_update(aug, config)
    P = _posterior_cov(K, stack, aug.prior_cov, aug, diag.lambdas, config)
    return FilterState(x, P), diag


def stationary_dkf_step(state, model, stack, config=None):
    """Baseline: the same pipeline with every kernel weight fixed at one and
    a single pass (the MSE-criterion Kalman update on the drop-stacked model)."""
    prior, prior_cov = predict(state, model.A, model.Q)
    aug = build_augmented(prior, prior_cov, stack)
    ones = np.ones(aug.D.shape)
    K = weighted_gain(aug, ones)
    x = aug.prior + np.einsum("...ij,...j->...i", K, aug.innovation)
    P = _posterior_cov(K, stack, aug.prior_cov, aug, ones, config)
    batch = aug.D.shape[:-1]
    diag = StepDiagnostics(
        iterations=np.ones(batch, dtype=int),
        converged=np.ones(batch, dtype=bool),
        final_change=np.zeros(batch),
        lambdas=ones,
    )
    return FilterState(x, P), diag


def unit_weight_config(config):
    """Copy of ``config`` whose kernel is flat (every weight exactly one)."""
    return replace(config, sigma=float("inf"))
