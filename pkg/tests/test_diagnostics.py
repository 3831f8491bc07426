import math

import numpy as np
import pytest

from conftest import plain_system, random_system
from dmckf.diagnostics import (
    SDKF_ROWS,
    TABLE_ROWS,
    ComplexityCount,
    counted_matvec,
    counted_vector_add,
    dmckf_flops,
    fixed_point_map,
    jacobian_f,
    phi,
    psi,
    sample_l1_ball,
    sdkf_flops,
    solve_sigma_thresholds,
    verify_contraction,
    zeta_bound,
)
from dmckf.errors import InvalidParameterError, PreconditionError, RankDeficiencyError
from dmckf.filters import FilterConfig, fixed_point_update
from dmckf.linalg import gaussian_kernel
from dmckf.model import tracking_matrix


def zeta_oracle(W, D):
    n = W.shape[1]
    num = sum(np.abs(W[h]).sum() * abs(D[h]) for h in range(len(D)))
    return math.sqrt(n) * num / np.linalg.eigvalsh(W.T @ W).min()


class TestZeta:
    def test_unit(self):
        assert zeta_bound(plain_system([[1.0]], [-3.0])) == pytest.approx(3.0)

    def test_scaled(self):
        assert zeta_bound(plain_system([[2.0]], [3.0])) == pytest.approx(1.5)

    def test_formula_oracle(self, rng):
        for _ in range(10):
            aug, _ = random_system(rng, n=3, m=3)
            assert zeta_bound(aug) == pytest.approx(zeta_oracle(aug.W, aug.D), rel=1e-12)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficiencyError):
            zeta_bound(plain_system([[1.0, 0.0], [2.0, 0.0]], [1.0, 1.0]))


class TestPhiPsi:
    def test_phi_hand_case(self):
        aug = plain_system([[1.0]], [1.0])
        for s in (0.5, 1.0, 3.0):
            assert phi(s, 2.0, aug) == pytest.approx(1.0 / gaussian_kernel(3.0, s), rel=1e-12)

    def test_phi_large_sigma_limit(self, rng):
        aug, _ = random_system(rng)
        assert phi(1e8, 1.0, aug) == pytest.approx(zeta_bound(aug), rel=1e-9)

    def test_phi_monotone(self, rng):
        grid = np.geomspace(1.0, 200, 25)
        for _ in range(10):
            aug, _ = random_system(rng)
            vals = [phi(s, 5.0, aug) for s in grid]
            assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))

    def test_psi_hand_case(self):
        w, d, beta, s = 2.0, 1.5, 3.0, 1.7
        aug = plain_system([[w]], [d])
        expected = (beta * w + d) * w * (beta * w * w + w * d) / (s * s * gaussian_kernel(beta * w + d, s) * w * w)
        assert psi(s, beta, aug) == pytest.approx(expected, rel=1e-12)

    def test_psi_limits(self, rng):
        aug, _ = random_system(rng)
        assert psi(1e8, 1.0, aug) < 1e-10
        grid = np.geomspace(5.0, 500, 20)
        vals = [psi(s, 1.0, aug) for s in grid]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_bad_args(self, rng):
        aug, _ = random_system(rng)
        with pytest.raises(InvalidParameterError):
            phi(0.0, 1.0, aug)
        with pytest.raises(InvalidParameterError):
            psi(1.0, -1.0, aug)


class TestThresholds:
    def test_roots(self, rng):
        for _ in range(10):
            aug, _ = random_system(rng)
            beta = 1.5 * zeta_bound(aug)
            s_star, s_dia = solve_sigma_thresholds(beta, 0.5, aug)
            assert abs(phi(s_star, beta, aug) - beta) <= 1e-6 * beta
            assert abs(psi(s_dia, beta, aug) - 0.5) <= 1e-6 * 0.5

    def test_precondition(self, rng):
        aug, _ = random_system(rng)
        with pytest.raises(PreconditionError):
            solve_sigma_thresholds(0.5 * zeta_bound(aug), 0.5, aug)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
    def test_alpha_range(self, rng, alpha):
        aug, _ = random_system(rng)
        with pytest.raises(InvalidParameterError):
            solve_sigma_thresholds(2 * zeta_bound(aug), alpha, aug)


def fd_jacobian(x, aug, sigma, h=1e-6):
    cols = [(fixed_point_map(x + h * e, aug, sigma) - fixed_point_map(x - h * e, aug, sigma)) / (2 * h)
            for e in np.eye(len(x))]
    return np.column_stack(cols)


class TestJacobian:
    def test_zero_residual(self, rng):
        W = rng.standard_normal((5, 3))
        x = rng.standard_normal(3)
        aug = plain_system(W, W @ x)
        assert np.array_equal(jacobian_f(x, aug, 0.7), np.zeros((3, 3)))

    def test_finite_differences(self, rng):
        for _ in range(20):
            aug, _ = random_system(rng)
            sigma = rng.uniform(0.5, 3.0)
            x = aug.prior + 0.5 * rng.standard_normal(3)
            assert np.max(np.abs(aug.residuals(x))) <= 5 * sigma
            assert np.max(np.abs(jacobian_f(x, aug, sigma) - fd_jacobian(x, aug, sigma))) <= 1e-5

    def test_scalar_symbolic(self):
        # f(x) = sum g_h w_h d_h / sum g_h w_h^2 with g_h = exp(-(d_h - w_h x)^2 / 2s^2)
        w, d, s, x = np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.9, 0.3
        e = d - w * x
        g = np.exp(-e * e / (2 * s * s))
        dg = g * e * w / (s * s)
        num, den = np.sum(g * w * d), np.sum(g * w * w)
        exact = (np.sum(dg * w * d) * den - num * np.sum(dg * w * w)) / den**2
        J = jacobian_f(np.array([x]), plain_system(w[:, None], d), s)
        assert J[0, 0] == pytest.approx(exact, rel=1e-10, abs=1e-14)


class TestContraction:
    def test_huge_sigma(self, rng):
        aug, _ = random_system(rng)
        beta = 2 * zeta_bound(aug)
        rep = verify_contraction(aug, 1e6, beta)
        assert rep.satisfied and rep.jacobian_norm < 1e-6 and rep.f_norm <= beta

    def test_no_probes(self, rng):
        aug, _ = random_system(rng)
        z = zeta_bound(aug)
        rep = verify_contraction(aug, 1.0, 2 * z, probes=0)
        assert rep.f_norm == 0 and rep.jacobian_norm == 0 and rep.satisfied
        assert not verify_contraction(aug, 1.0, 0.5 * z, probes=0).satisfied

    def test_alpha_tightens(self, rng):
        aug, _ = random_system(rng)
        beta = 2 * zeta_bound(aug)
        rep = verify_contraction(aug, 1e6, beta, alpha=0.1)
        assert rep.satisfied and rep.jacobian_norm <= rep.alpha

    def test_underflow_reports_failure(self, rng):
        aug, _ = random_system(rng)
        rep = verify_contraction(aug, 1e-3, 2 * zeta_bound(aug), probes=8)
        assert not rep.satisfied and math.isinf(rep.f_norm)

    def test_probes_in_ball(self, rng):
        pts = sample_l1_ball(4, 2.5, 2000, rng)
        norms = np.abs(pts).sum(axis=1)
        assert np.all(norms <= 2.5)
        # uniform in the ball: P(||x||_1 <= r/2) = (1/2)^n
        assert abs(np.mean(norms <= 1.25) - 1 / 16) < 0.02

    def test_satisfied_implies_convergence(self, rng):
        for _ in range(10):
            aug, _ = random_system(rng)
            beta = 2 * zeta_bound(aug)
            s_star, s_dia = solve_sigma_thresholds(beta, 0.5, aug)
            sigma = 1.2 * max(s_star, s_dia)
            rep = verify_contraction(aug, sigma, beta)
            assert rep.satisfied and np.abs(aug.prior).sum() <= beta
            _, _, d = fixed_point_update(aug, FilterConfig(sigma=sigma))
            assert d.converged


def sdkf_poly(n, m):
    terms = [(11, 3, 0), (12, 1, 2), (10, 2, 1), (4, 0, 2), (-2, 1, 1), (-1, 2, 0), (-2, 1, 0), (-1, 0, 1)]
    return sum(c * n**a * m**b for c, a, b in terms)


def dmckf_poly(n, m, t):
    terms = [(6 * t, 0, 3), (6 * t, 3, 0), (16 * t, 1, 2), (10 * t, 2, 1), (2 - 3 * t, 0, 2), (2, 2, 0),
             (2 - 3 * t, 1, 1), (6 * t - 1, 0, 1), (6 * t - 1, 1, 0)]
    return sum(c * n**a * m**b for c, a, b in terms)


class TestComplexity:
    def test_sdkf_poly_example(self):
        assert sdkf_flops(3, 1) == ComplexityCount(sdkf_poly(3, 1), 2)

    def test_dmckf_poly_example(self):
        assert dmckf_flops(3, 1, 2) == ComplexityCount(dmckf_poly(3, 1, 2), 2 * (27 + 1))

    def test_prediction_row(self):
        assert TABLE_ROWS["state_prediction"](1, 1)[0] == 1

    def test_sdkf_is_sum_of_rows(self, rng):
        for n, m in rng.integers(1, 30, size=(20, 2)):
            rows = [TABLE_ROWS[k](int(n), int(m)) for k in SDKF_ROWS]
            assert sum(r[0] for r in rows) == sdkf_flops(n, m).add_mult
            assert sum(r[1] for r in rows) == sdkf_flops(n, m).special

    def test_leading_cubic(self):
        assert sdkf_flops(2000, 1).add_mult / sdkf_flops(1000, 1).add_mult == pytest.approx(8, rel=1e-3)

    def test_affine_in_t(self, rng):
        for n, m in rng.integers(1, 30, size=(10, 2)):
            n, m = int(n), int(m)
            s1, s2, s5 = (dmckf_flops(n, m, t).add_mult for t in (1, 2, 5))
            slope = 6 * m**3 + 6 * n**3 + 16 * m * m * n + 10 * m * n * n - 3 * m * m - 3 * m * n + 6 * m + 6 * n
            assert s2 - s1 == slope and s5 - s1 == 4 * slope

    def test_fractional_t(self):
        c = dmckf_flops(3, 2, 2.5)
        assert c.add_mult == pytest.approx(dmckf_poly(3, 2, 2.5))

    def test_preconditions(self):
        with pytest.raises(InvalidParameterError):
            dmckf_flops(3, 1, 0)
        with pytest.raises(InvalidParameterError):
            sdkf_flops(0, 1)

    def test_counted_prediction_matches_table(self, rng):
        for n in range(1, 7):
            A = rng.standard_normal((n, n))
            x = rng.standard_normal(n)
            out, ops = counted_matvec(A, x)
            assert np.allclose(out, A @ x) and ops == TABLE_ROWS["state_prediction"](n, 1)[0]
        _, ops = counted_matvec(tracking_matrix(0.1), np.ones(3))
        assert ops == 15

    def test_counted_stacking_matches_table(self, rng):
        for n, m in [(1, 1), (3, 1), (3, 8), (5, 4)]:
            C, x, v = rng.standard_normal((m, n)), rng.standard_normal(n), rng.standard_normal(m)
            cx, ops1 = counted_matvec(C, x)
            y, ops2 = counted_vector_add(cx, v)
            assert np.allclose(y, C @ x + v)
            assert ops1 + ops2 == TABLE_ROWS["stacked_observation"](n, m)[0]
            _, ops3 = counted_matvec(np.diag(rng.random(m) < 0.5).astype(float), y)
            assert ops3 == TABLE_ROWS["received_observation"](n, m)[0]
