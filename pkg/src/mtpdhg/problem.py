"""Saddle-point problem model: coupling operators, penalties, and F oracles.

A problem is min over the primal domain of max over the dual blocks of

    F(X) + sum_s ( <K_s X, y_s> - R*_s(y_s) ),

where each block carries its own operator K_s and conjugate penalty R*_s.
Two penalty families ship: the characteristic function of {0} (conjugate
identically zero, duals unconstrained) and a scaled norm (conjugate the
characteristic function of a ball). An optional per-block offset u_s turns
the constraint into K_s X = u_s, which adds <u_s, y_s> to R*_s; this is how
affine equality constraints enter without a separate code path.
"""

import numpy as np
import scipy.sparse as sp

from .geometry import Ball, BregmanGeometry, FreeSpace

# operators smaller than this many entries are kept dense
DENSE_FALLBACK_ENTRIES = 10**4
CHAR_ZERO_TOL = 1e-10


def as_operator(K):
    """Normalize an operator to a dense array or a CSR matrix.

    Sparse inputs with fewer than ``DENSE_FALLBACK_ENTRIES`` total entries
    are densified (faster at that size); larger sparse inputs become CSR
    with 0-based indices. Dense inputs are kept as float arrays.
    """
    if sp.issparse(K):
        if K.shape[0] * K.shape[1] < DENSE_FALLBACK_ENTRIES:
            return np.asarray(K.todense(), dtype=float)
        return sp.csr_matrix(K, dtype=float)
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise ValueError("operator must be a matrix, got ndim=%d" % K.ndim)
    return K


def operator_norm_estimate(K, iterations=200):
    """Deterministic power-iteration estimate of the spectral norm.

    Runs the given number of K^T K iterations from a fixed-seed start and
    returns the estimate inflated by 1%, so that step-size rules built on
    the result hold with margin. A zero operator returns 0.

    Parameters
    ----------
    K : array or sparse matrix
    iterations : int, optional

    Returns
    -------
    float
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    K = as_operator(K)
    n, d = K.shape
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iterations):
        w = K @ v
        sigma = np.linalg.norm(w)
        if sigma == 0.0:
            return 0.0
        v = K.T @ w
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
    return float(sigma) * 1.01


class DualBlock(object):
    """One dual coordinate group: operator, penalty conjugate, constants.

    Parameters
    ----------
    K : array or sparse matrix, shape (n_s, d)
    penalty : str
        "char_zero" or "scaled_norm".
    lam : float, optional
        Penalty level for "scaled_norm" (must be positive).
    offset : array-like, optional
        u_s in the constraint/penalty argument K_s X - u_s; defaults to 0.
    kappa_tilde : float, optional
        Upper bound on ||K_s||; estimated by power iteration when omitted.
    D_s_y : float, optional
        Dual domain radius bound; defaults to lam^2/2 for a scaled norm
        started at y_s = 0, and to 0 for "char_zero".
    """

    def __init__(self, K, penalty="char_zero", lam=None, offset=None,
                 kappa_tilde=None, D_s_y=None):
        self.K = as_operator(K)
        self.n, self.d = self.K.shape
        if penalty not in ("char_zero", "scaled_norm"):
            raise ValueError("unknown penalty kind %r" % (penalty,))
        self.penalty = penalty
        if penalty == "scaled_norm":
            if lam is None or lam <= 0:
                raise ValueError("scaled_norm needs a positive level, got %r"
                                 % (lam,))
            self.lam = float(lam)
            self.conj_domain = Ball(self.lam, dimension=self.n)
        else:
            if lam is not None:
                raise ValueError("char_zero takes no penalty level")
            self.lam = None
            self.conj_domain = FreeSpace(self.n)
        if offset is None:
            self.offset = np.zeros(self.n)
        else:
            self.offset = np.asarray(offset, dtype=float).reshape(-1)
            if self.offset.shape[0] != self.n:
                raise ValueError("offset has dimension %d, operator has %d rows"
                                 % (self.offset.shape[0], self.n))
        if kappa_tilde is None:
            kappa_tilde = operator_norm_estimate(self.K)
        if kappa_tilde < 0:
            raise ValueError("kappa_tilde must be nonnegative")
        self.kappa_tilde = float(kappa_tilde)
        if D_s_y is None:
            D_s_y = 0.5 * self.lam**2 if penalty == "scaled_norm" else 0.0
        if D_s_y < 0:
            raise ValueError("D_s_y must be nonnegative")
        self.D_s_y = float(D_s_y)
        self.geom = BregmanGeometry(self.n)
        # adjoint kept in row-major form so slices reuse the same arithmetic
        self.KT = self.K.T.tocsr() if sp.issparse(self.K) else self.K.T

    def apply(self, x):
        return self.K @ x

    def adjoint(self, y):
        return self.KT @ y

    def conjugate_value(self, y):
        """R*_s(y) on its domain; only the offset contributes."""
        return float(self.offset @ y)

    def residual(self, x):
        """K_s x - u_s, the argument of the primal penalty."""
        return self.apply(x) - self.offset

    def penalty_value(self, x):
        """R_s(K_s x) with the offset folded in; may be +inf for char_zero."""
        r = np.linalg.norm(self.residual(x))
        if self.penalty == "scaled_norm":
            return self.lam * r
        return 0.0 if r <= CHAR_ZERO_TOL else np.inf


class SaddleProblem(object):
    """Saddle problem data: primal domain, F oracle, dual blocks, constants.

    Parameters
    ----------
    primal_domain : ConvexDomain
    blocks : list of DualBlock
    F_oracle : callable, optional
        X -> (value, subgradient). Required unless ``g_F`` is given.
    g_F : array-like, optional
        Coefficient of a linear F; enables the exact primal prox and marks
        the problem as linear.
    mu : float, optional
        Strong convexity constant of F (0 unless accelerated runs are
        intended). Must be 0 when F is linear.
    M : float, optional
        Subgradient-variation constant of F. Note the factor-two
        convention: a bound ||F'|| <= M' yields M = 2 M'.
    prox_oracle : callable, optional
        (domain, v, centers) -> exact minimizer of
        F(x) + <v, x> + sum_i w_i D(x, p_i); supplying it makes every
        primal step exact even for non-linear F.
    geom : BregmanGeometry, optional
    """

    def __init__(self, primal_domain, blocks, F_oracle=None, g_F=None,
                 mu=0.0, M=0.0, prox_oracle=None, geom=None):
        if not blocks:
            raise ValueError("need at least one dual block")
        self.primal_domain = primal_domain
        self.blocks = list(blocks)
        self.d = self.blocks[0].d
        for i, b in enumerate(self.blocks):
            if b.d != self.d:
                raise ValueError("block %d acts on dimension %d, expected %d"
                                 % (i, b.d, self.d))
        if primal_domain.dimension != self.d:
            raise ValueError("primal domain dimension %d does not match the "
                             "operators (%d columns)"
                             % (primal_domain.dimension, self.d))
        if mu < 0 or M < 0:
            raise ValueError("mu and M must be nonnegative")
        self.mu = float(mu)
        self.M = float(M)
        if g_F is not None:
            if mu != 0:
                raise ValueError("linear F cannot be strongly convex")
            self.g_F = np.asarray(g_F, dtype=float).reshape(-1)
            if self.g_F.shape[0] != self.d:
                raise ValueError("g_F has dimension %d, expected %d"
                                 % (self.g_F.shape[0], self.d))
            self.is_F_linear = True
            self.F_oracle = linear_objective(self.g_F)
        else:
            if F_oracle is None:
                raise ValueError("need an F oracle or a linear coefficient")
            self.g_F = None
            self.is_F_linear = False
            self.F_oracle = F_oracle
        self.prox_oracle = prox_oracle
        self.geom = geom if geom is not None else BregmanGeometry(self.d)
        if self.geom.dimension != self.d:
            raise ValueError("geometry dimension mismatch")

    @property
    def S(self):
        return len(self.blocks)

    def F(self, X):
        """Evaluate the F oracle; returns (value, subgradient)."""
        return self.F_oracle(X)

    def has_exact_prox(self):
        return self.is_F_linear or self.prox_oracle is not None


class PrimalDualPoint(object):
    """A primal vector paired with one dual vector per block."""

    def __init__(self, X, Y):
        self.X = np.asarray(X, dtype=float).reshape(-1)
        self.Y = [np.asarray(y, dtype=float).reshape(-1) for y in Y]


def primal_value(problem, X):
    """F(X) + sum_s R_s(K_s X); +inf when a char_zero block is violated.

    The violation tolerance for char_zero blocks is 1e-10 on the residual
    norm.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    val = problem.F(X)[0]
    for b in problem.blocks:
        val += b.penalty_value(X)
    return float(val)


def lagrangian(problem, X, Y):
    """F(X) + <KX, Y> - R*(Y) at a dual point inside the conjugate domains."""
    X = np.asarray(X, dtype=float).reshape(-1)
    if len(Y) != problem.S:
        raise ValueError("expected %d dual vectors, got %d"
                         % (problem.S, len(Y)))
    val = problem.F(X)[0]
    for b, y in zip(problem.blocks, Y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if not b.conj_domain.contains(y):
            raise ValueError("dual vector outside %r" % (b.conj_domain,))
        val += float(b.apply(X) @ y) - b.conjugate_value(y)
    return float(val)


def linear_objective(c):
    """F(X) = <c, X>; the subgradient is constant."""
    c = np.asarray(c, dtype=float).reshape(-1)

    def oracle(X):
        return float(c @ X), c

    return oracle


def hinge_ridge_objective(features, labels, mu_reg):
    """Averaged hinge loss with a ridge term.

    f(x) = (1/n) sum_l max(0, 1 - y_l <b_l, x>) + (mu_reg/2) ||x||^2, with
    the subgradient using the strict indicator 1[y_l <b_l, x> < 1].

    Parameters
    ----------
    features : array or sparse matrix, shape (n, d)
    labels : array-like of +-1
    mu_reg : float

    Returns
    -------
    callable
        x -> (value, subgradient).
    """
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if sp.issparse(features):
        signed = sp.csr_matrix(features.multiply(labels[:, None]), dtype=float)
    else:
        features = np.asarray(features, dtype=float)
        signed = labels[:, None] * features
    n = signed.shape[0]
    signed_T = signed.T.tocsr() if sp.issparse(signed) else signed.T

    def oracle(x):
        margins = signed @ x
        value = float(np.sum(np.maximum(0.0, 1.0 - margins))) / n \
            + 0.5 * mu_reg * float(x @ x)
        active = (margins < 1.0).astype(float)
        grad = -(signed_T @ active) / n + mu_reg * x
        return value, grad

    return oracle


def quadratic_objective(z, mu):
    """F(X) = (mu/2) ||X - z||^2 together with its exact prox oracle.

    The mixture subproblem stays an isotropic quadratic, so the prox is a
    single projection; returns (oracle, prox_oracle) suitable for
    SaddleProblem.

    Parameters
    ----------
    z : array-like
        Center of the quadratic.
    mu : float
        Positive curvature.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if mu <= 0:
        raise ValueError("mu must be positive for a quadratic objective")

    def oracle(x):
        d = x - z
        return 0.5 * mu * float(d @ d), mu * d

    def prox(domain, v, centers):
        acc = mu * z - v
        wsum = mu
        for w, p in centers:
            acc = acc + w * p
            wsum += w
        return domain.project(acc / wsum)

    return oracle, prox
