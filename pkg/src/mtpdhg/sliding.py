"""Gradient sliding: approximate primal minimizers from subgradient steps.

The outer solver needs, at every global iteration, an approximate
minimizer pair (X^k, Xhat^k) of the mixture objective

    Phi(X) = F(X) + <v, X> + sum_s eta_s D(X, c_s)

satisfying, for every X in the domain,

    Phi(Xhat^k) <= Phi(X) - (mu/C + sum_s eta_s) D(X, X^k) + delta_k(X).

When F is linear (or an exact prox oracle is supplied) the pair is the
exact minimizer twice and delta_k vanishes. Otherwise T inner subgradient
steps produce the pair with an explicit, auditable delta_k.
"""

import numpy as np

from .geometry import divergence, prox_linear

# relative slack allowed when verifying the step-weight condition
_CONDITION_TOL = 1e-9


class SlidingSchedule(object):
    """Inner step-weight sequences (lambda_t, beta_t) for t = 1..T.

    Two variants ship, both satisfying the chaining condition
    lambda_{t+1} (eta beta_{t+1} - mu/C) <= lambda_t (1 + beta_t) eta with
    equality:

    * "convex": lambda_t = t + 1, beta_t = t/2 (for mu = 0);
    * "strongly_convex": lambda_t = t,
      beta_t = (t+1) mu / (2 eta C) + (t-1)/2, which needs the mixture
      weight eta at construction time.

    Parameters
    ----------
    T : int
        Number of inner iterations.
    variant : str
    mu : float, optional
        Strong convexity constant of the sliding objective.
    eta : float, optional
        Total mixture weight; required for "strongly_convex".
    C : float, optional
        Curvature bound of the geometry.
    """

    def __init__(self, T, variant, mu=0.0, eta=None, C=1.0):
        T = int(T)
        if T < 1:
            raise ValueError("T must be a positive integer")
        if variant not in ("convex", "strongly_convex"):
            raise ValueError("unknown sliding variant %r" % (variant,))
        self.T = T
        self.variant = variant
        self.mu = float(mu)
        self.C = float(C)
        t = np.arange(1, T + 1, dtype=float)
        if variant == "convex":
            self.eta = eta
            self.lam = t + 1.0
            self.beta = t / 2.0
        else:
            if eta is None or eta <= 0:
                raise ValueError("strongly_convex schedule needs eta > 0")
            if mu <= 0:
                raise ValueError("strongly_convex schedule needs mu > 0")
            self.eta = float(eta)
            self.lam = t.copy()
            self.beta = (t + 1.0) * mu / (2.0 * self.eta * self.C) + (t - 1.0) / 2.0

    def condition_slack(self, eta):
        """Minimum slack of the chaining condition over t = 1..T-1."""
        if self.T == 1:
            return 0.0
        lhs = self.lam[1:] * (eta * self.beta[1:] - self.mu / self.C)
        rhs = self.lam[:-1] * (1.0 + self.beta[:-1]) * eta
        return float(np.min(rhs - lhs))

    def check(self, eta):
        if np.any(self.lam <= 0) or np.any(self.beta <= 0):
            raise ValueError("sliding weights must be positive for t >= 1")
        scale = max(1.0, abs(eta) * self.T**2)
        if self.condition_slack(eta) < -_CONDITION_TOL * scale:
            raise ValueError("sliding schedule violates the step-weight "
                             "condition for eta=%g" % eta)


class SlidingResult(object):
    """Final iterate, weighted average, and the inner oracle call count."""

    def __init__(self, u_T, u_hat_T, inner_oracle_calls):
        self.u_T = u_T
        self.u_hat_T = u_hat_T
        self.inner_oracle_calls = inner_oracle_calls


class InnerConfig(object):
    """Inner loop budget: iteration count T and weight variant."""

    def __init__(self, T, variant="convex"):
        self.T = int(T)
        if self.T < 1:
            raise ValueError("inner budget T must be positive")
        if variant not in ("convex", "strongly_convex"):
            raise ValueError("unknown sliding variant %r" % (variant,))
        self.variant = variant


def gradient_slide(phi_oracle, domain, geom, schedule, eta_centers, v, x_init):
    """Run T inner prox steps and return the (last, averaged) iterate pair.

    Parameters
    ----------
    phi_oracle : callable
        u -> (value, subgradient); only the subgradient is consumed.
    domain : ConvexDomain
    geom : BregmanGeometry
    schedule : SlidingSchedule
    eta_centers : list of (float, ndarray)
        Mixture weights and centers (eta_i, x_i); total weight must be
        positive.
    v : ndarray
        Constant linear term.
    x_init : ndarray
        Starting point u^0.

    Returns
    -------
    SlidingResult
    """
    eta = float(sum(w for w, _ in eta_centers))
    if eta <= 0:
        raise ValueError("total mixture weight must be positive")
    schedule.check(eta)
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.asarray(x_init, dtype=float).reshape(-1).copy()
    acc = np.zeros_like(u)
    lam_sum = 0.0
    for t in range(1, schedule.T + 1):
        g = phi_oracle(u)[1]
        centers = list(eta_centers) + [(eta * schedule.beta[t - 1], u)]
        u = prox_linear(geom, domain, v + g, centers)
        lam_t = schedule.lam[t - 1]
        acc += lam_t * u
        lam_sum += lam_t
    return SlidingResult(u, acc / lam_sum, schedule.T)


class DeltaAudit(object):
    """Analytic delta_k certificate attached to a primal step.

    ``value(geom, X)`` evaluates delta_k(X): zero for exact steps, the
    telescoping form for the convex schedule, and a constant for the
    strongly convex schedule.
    """

    def __init__(self, kind, coeff=0.0, const=0.0, x_prev=None, x_last=None):
        self.kind = kind
        self.coeff = coeff
        self.const = const
        self.x_prev = x_prev
        self.x_last = x_last

    def value(self, geom, X):
        if self.kind == "exact":
            return 0.0
        if self.kind == "convex":
            return (self.coeff * (divergence(geom, X, self.x_prev)
                                  - divergence(geom, X, self.x_last))
                    + self.const)
        return self.const


def make_primal_step(problem, geom, schedule, eta_ks, centers, linear_term,
                     x_prev):
    """One primal step: exact prox when available, sliding otherwise.

    Parameters
    ----------
    problem : SaddleProblem
    geom : BregmanGeometry
    schedule : SlidingSchedule or None
        Required only on the sliding path.
    eta_ks : array-like
        Per-block mixture weights (eta_{k,s} >= 0, positive total).
    centers : list of ndarray
        Per-block history centers X^{k-r_s}, aligned with ``eta_ks``.
    linear_term : ndarray
        K* Ybar^k.
    x_prev : ndarray
        X^{k-1}, the sliding warm start.

    Returns
    -------
    (ndarray, ndarray, DeltaAudit)
        X^k, Xhat^k, and the delta_k certificate.
    """
    eta_ks = [float(w) for w in eta_ks]
    if len(eta_ks) != len(centers):
        raise ValueError("need one center per mixture weight")
    if any(w < 0 for w in eta_ks):
        raise ValueError("mixture weights must be nonnegative")
    if problem.prox_oracle is not None:
        X = problem.prox_oracle(problem.primal_domain, linear_term,
                                list(zip(eta_ks, centers)))
        return X, X, DeltaAudit("exact")
    if problem.is_F_linear:
        X = prox_linear(geom, problem.primal_domain,
                        problem.g_F + linear_term, list(zip(eta_ks, centers)))
        return X, X, DeltaAudit("exact")
    if schedule is None:
        raise ValueError("non-linear F without a prox oracle needs a sliding "
                         "schedule")
    res = gradient_slide(problem.F_oracle, problem.primal_domain, geom,
                         schedule, list(zip(eta_ks, centers)), linear_term,
                         x_prev)
    eta = float(sum(eta_ks))
    T = schedule.T
    M = problem.M
    if schedule.variant == "convex":
        audit = DeltaAudit("convex",
                           coeff=2.0 * eta / (T * (T + 3.0)),
                           const=4.0 * M**2 / (eta * (T + 3.0)),
                           x_prev=np.asarray(x_prev, dtype=float).copy(),
                           x_last=res.u_T.copy())
    else:
        ratio = float(np.sum(schedule.lam / schedule.beta))
        audit = DeltaAudit("strongly_convex",
                           const=(2.0 * M**2 / eta) / (T * (T + 1.0)) * ratio)
    return res.u_T, res.u_hat_T, audit


def primal_contract_slack(problem, geom, eta_ks, centers, linear_term, X_k,
                          X_hat_k, audit, X):
    """Slack of the approximate-minimizer contract at a test point X.

    Returns Phi(X) - (mu/C + sum eta) D(X, X^k) + delta_k(X) - Phi(Xhat^k);
    the contract asks this to be nonnegative up to round-off.
    """

    def mixture(Z):
        val = problem.F(Z)[0] + float(linear_term @ Z)
        for w, p in zip(eta_ks, centers):
            val += w * divergence(geom, Z, p)
        return val

    shrink = problem.mu / geom.curvature_bound + float(np.sum(eta_ks))
    return (mixture(X) - shrink * divergence(geom, X, X_k)
            + audit.value(geom, X) - mixture(X_hat_k))
