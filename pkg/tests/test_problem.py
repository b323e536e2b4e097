import numpy as np
import pytest
import scipy.sparse as sp

from mtpdhg.geometry import Ball, Box, NonnegativeOrthant
from mtpdhg.problem import (
    DualBlock,
    SaddleProblem,
    as_operator,
    hinge_ridge_objective,
    lagrangian,
    linear_objective,
    operator_norm_estimate,
    primal_value,
    quadratic_objective,
)


class TestOperatorNorm:
    def test_identity(self):
        est = operator_norm_estimate(np.eye(3), iterations=50)
        assert abs(est - 1.01) <= 1e-6

    def test_diagonal(self):
        est = operator_norm_estimate(np.diag([3.0, 1.0]), iterations=100)
        assert abs(est - 3.03) <= 1e-4

    def test_matches_dense_svd(self):
        rng = np.random.default_rng(7)
        K = rng.standard_normal((20, 50))
        sigma = np.linalg.svd(K, compute_uv=False)[0]
        assert abs(operator_norm_estimate(K) - 1.01 * sigma) <= 1e-6 * 1.01

    def test_zero_operator(self):
        assert operator_norm_estimate(np.zeros((4, 4))) == 0.0

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        K = rng.standard_normal((10, 10))
        assert operator_norm_estimate(K) == operator_norm_estimate(K)

    def test_sparse_storage_policy(self):
        small = sp.random(20, 20, density=0.1, random_state=0)
        assert isinstance(as_operator(small), np.ndarray)
        big = sp.random(200, 200, density=0.01, random_state=0)
        assert sp.issparse(as_operator(big))


def toy_problem():
    # F(X) = <(2,0), X> over the box [-1,1]^2, one unit-ball block, K = I
    block = DualBlock(np.eye(2), penalty="scaled_norm", lam=1.0)
    return SaddleProblem(Box(-np.ones(2), np.ones(2)), [block], g_F=[2.0, 0.0])


class TestPrimalValue:
    def test_zero_residual_scaled_blocks(self):
        prob = toy_problem()
        assert primal_value(prob, np.zeros(2)) == 0.0

    def test_scaled_norm_value(self):
        K = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        block = DualBlock(K, penalty="scaled_norm", lam=2.0)
        prob = SaddleProblem(Box(-10 * np.ones(3), 10 * np.ones(3)), [block],
                             g_F=np.zeros(3))
        assert primal_value(prob, np.array([3.0, 4.0, 0.0])) == pytest.approx(10.0)

    def test_char_zero_infeasible_flag(self):
        block = DualBlock(np.eye(2), penalty="char_zero")
        prob = SaddleProblem(Box(-np.ones(2), np.ones(2)), [block],
                             g_F=np.zeros(2))
        assert primal_value(prob, np.zeros(2)) == 0.0
        assert primal_value(prob, np.array([0.5, 0.0])) == np.inf

    def test_matches_term_by_term_oracle(self):
        rng = np.random.default_rng(3)
        A = rng.random((6, 4))
        c = rng.standard_normal(4)
        lam = 1.7
        block = DualBlock(A, penalty="scaled_norm", lam=lam)
        prob = SaddleProblem(NonnegativeOrthant(4), [block], g_F=c)
        X = rng.random(4)
        expected = float(c @ X) + lam * np.linalg.norm(A @ X)
        assert primal_value(prob, X) == pytest.approx(expected, rel=1e-12)


class TestLagrangian:
    def test_zero_dual(self):
        prob = toy_problem()
        X = np.array([0.3, -0.2])
        assert lagrangian(prob, X, [np.zeros(2)]) == pytest.approx(2 * 0.3)

    def test_inner_product(self):
        block = DualBlock(np.eye(2), penalty="char_zero")
        prob = SaddleProblem(Box(-2 * np.ones(2), 2 * np.ones(2)), [block],
                             g_F=np.zeros(2))
        val = lagrangian(prob, np.array([1.0, 2.0]), [np.array([3.0, -1.0])])
        assert val == pytest.approx(1.0)

    def test_saddle_value_of_bilinear_toy(self):
        # min_{X in box} max_{||y|| <= 1} 2 x_1 + <X, y>; the inner max is
        # 2 x_1 + ||X||, minimized at X* = (-1, 0) with value -1, attained
        # by y* = X*/||X*||
        prob = toy_problem()
        X_star = np.array([-1.0, 0.0])
        y_star = np.array([-1.0, 0.0])
        assert lagrangian(prob, X_star, [y_star]) == pytest.approx(-1.0)
        assert primal_value(prob, X_star) == pytest.approx(-1.0)

    def test_dual_outside_domain_raises(self):
        prob = toy_problem()
        with pytest.raises(ValueError, match="outside"):
            lagrangian(prob, np.zeros(2), [np.array([2.0, 0.0])])

    def test_offset_enters_conjugate(self):
        block = DualBlock(np.eye(2), penalty="char_zero", offset=[1.0, 0.0])
        prob = SaddleProblem(Box(-np.ones(2), np.ones(2)), [block],
                             g_F=np.zeros(2))
        y = np.array([2.0, 0.0])
        # <KX, y> - <u, y> = 0 - 2
        assert lagrangian(prob, np.zeros(2), [y]) == pytest.approx(-2.0)


class TestBlockInvariants:
    def test_fenchel_pair_support_function(self):
        rng = np.random.default_rng(11)
        lam = 2.5
        block = DualBlock(np.eye(3), penalty="scaled_norm", lam=lam)
        v = rng.standard_normal(3)
        closed = lam * np.linalg.norm(v)
        best = -np.inf
        for _ in range(10**4):
            y = block.conj_domain.sample(rng)
            best = max(best, float(v @ y))
        assert best <= closed + 1e-10
        attained = float(v @ (lam * v / np.linalg.norm(v)))
        assert abs(attained - closed) <= 1e-10
        assert closed - best <= 1e-3 * max(1.0, closed) or \
            abs(attained - closed) <= 1e-10

    def test_kappa_tilde_dominates(self):
        rng = np.random.default_rng(12)
        K = rng.standard_normal((8, 5))
        block = DualBlock(K, penalty="char_zero")
        for _ in range(1000):
            x = rng.standard_normal(5)
            assert np.linalg.norm(K @ x) <= block.kappa_tilde * np.linalg.norm(x)

    def test_scaled_norm_domain_radius(self):
        block = DualBlock(np.eye(2), penalty="scaled_norm", lam=3.0)
        assert isinstance(block.conj_domain, Ball)
        assert block.conj_domain.radius == 3.0
        assert block.D_s_y == pytest.approx(4.5)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive level"):
            DualBlock(np.eye(2), penalty="scaled_norm")
        with pytest.raises(ValueError, match="penalty kind"):
            DualBlock(np.eye(2), penalty="huber")
        with pytest.raises(ValueError, match="linear F"):
            SaddleProblem(Box(-np.ones(2), np.ones(2)),
                          [DualBlock(np.eye(2))], g_F=np.zeros(2), mu=0.1)


class TestOracles:
    def test_linear(self):
        oracle = linear_objective([1.0, -2.0])
        val, grad = oracle(np.array([3.0, 1.0]))
        assert val == pytest.approx(1.0)
        assert np.allclose(grad, [1.0, -2.0])

    def test_hinge_ridge_value_and_subgradient(self):
        B = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        y = np.array([1.0, -1.0, 1.0])
        oracle = hinge_ridge_objective(B, y, mu_reg=0.5)
        x = np.array([0.5, 0.25])
        margins = y * (B @ x)
        expected = np.mean(np.maximum(0, 1 - margins)) + 0.25 * (x @ x)
        val, grad = oracle(x)
        assert val == pytest.approx(expected)
        active = (margins < 1).astype(float)
        expected_grad = -(B * y[:, None]).T @ active / 3 + 0.5 * x
        assert np.allclose(grad, expected_grad, atol=1e-14)

    def test_hinge_ridge_sparse_matches_dense(self):
        rng = np.random.default_rng(4)
        B = rng.standard_normal((12, 5))
        y = np.sign(rng.standard_normal(12))
        xd = rng.standard_normal(5)
        dense = hinge_ridge_objective(B, y, 0.1)
        sparse = hinge_ridge_objective(sp.csr_matrix(B), y, 0.1)
        vd, gd = dense(xd)
        vs, gs = sparse(xd)
        assert vd == pytest.approx(vs, rel=1e-12)
        assert np.allclose(gd, gs, atol=1e-12)

    def test_quadratic_prox_is_exact(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal(3)
        oracle, prox = quadratic_objective(z, mu=0.7)
        domain = Ball(2.0, dimension=3)
        v = rng.standard_normal(3)
        centers = [(0.4, rng.standard_normal(3)), (1.1, rng.standard_normal(3))]
        x_star = prox(domain, v, centers)

        def total(x):
            return (oracle(x)[0] + v @ x
                    + sum(w * 0.5 * np.sum((x - p) ** 2) for w, p in centers))

        base = total(x_star)
        for _ in range(200):
            assert total(domain.sample(rng)) >= base - 1e-10
