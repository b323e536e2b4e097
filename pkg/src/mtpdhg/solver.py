"""Multi-timescale primal-dual engine with per-block dual clocks.

Each dual block s updates only at global iterations divisible by its rate
r_s, consuming an aggregate of the primal history over its last window
instead of the classical one-step extrapolation. The primal step anchors
to one delayed history point per block through a Bregman mixture. Two
parameter presets ship: a constant-weight one for merely convex F and an
accelerated one (growing weights theta_k ~ k) for strongly convex F.

A vanilla PDHG baseline is included both for the r_s = 1 reduction check
and as the naive-delay comparator that ignores the rates in its
extrapolation.
"""

import math

import numpy as np

from .geometry import divergence, prox_dual, prox_linear
from .problem import PrimalDualPoint
from .sliding import SlidingSchedule, make_primal_step, primal_contract_slack

_KSTAR_AUDIT_STRIDE = 100
_CONTRACT_AUDIT_STRIDE = 10


class RateSchedule(object):
    """Per-block update rates with their rho weights and moments.

    The horizon is rounded up so that N+1 is a multiple of every rate
    (each block completes whole local epochs); ``horizon_adjusted`` tells
    whether rounding happened.

    Parameters
    ----------
    r : list of int
        Positive update rates r_s.
    N : int
        Requested last global iteration index.
    rho : array-like, optional
        Nonnegative weights summing to 1; uniform when omitted.
    """

    def __init__(self, r, N, rho=None):
        self.r = [int(v) for v in r]
        if not self.r or any(v < 1 for v in self.r):
            raise ValueError("rates must be positive integers")
        if rho is None:
            rho = np.full(len(self.r), 1.0 / len(self.r))
        self.rho = np.asarray(rho, dtype=float).reshape(-1)
        if self.rho.shape[0] != len(self.r):
            raise ValueError("need one rho per rate")
        if np.any(self.rho < 0) or self.rho.sum() <= 0:
            raise ValueError("rho must be nonnegative with positive sum")
        self.rho = self.rho / self.rho.sum()
        N = int(N)
        if N < 0:
            raise ValueError("N must be nonnegative")
        period = math.lcm(*self.r)
        self.requested_N = N
        self.N = -(-(N + 1) // period) * period - 1
        self.horizon_adjusted = self.N != N
        rs = np.asarray(self.r, dtype=float)
        self.r_bar = float(self.rho @ rs)
        self.r2_bar = float(self.rho @ rs**2)
        self.r3_bar = float(self.rho @ rs**3)

    @property
    def S(self):
        return len(self.r)

    def due(self, k):
        """Blocks whose dual update falls on global iteration k."""
        return [s for s, rs in enumerate(self.r) if k % rs == 0]

    def local_steps(self, s):
        """N_s, the number of dual updates block s performs in a run."""
        return (self.N + 1) // self.r[s]


class StepParams(object):
    """Step sizes and weights: theta_k, eta_k (both affine in k), rho, tau.

    ``theta`` and ``eta`` are (slope, intercept) pairs evaluated as
    slope * k + intercept; the constant preset uses slope 0. ``alpha`` is
    kept as a field but only alpha = 1 has supporting theory and the
    presets reject anything else.
    """

    def __init__(self, variant, theta, eta, rho, tau, alpha=1.0):
        if variant not in ("mt", "amt"):
            raise ValueError("unknown variant %r" % (variant,))
        self.variant = variant
        self.theta = (float(theta[0]), float(theta[1]))
        self.eta = (float(eta[0]), float(eta[1]))
        self.rho = np.asarray(rho, dtype=float).reshape(-1)
        self.tau = np.asarray(tau, dtype=float).reshape(-1)
        self.alpha = float(alpha)

    def theta_k(self, k):
        return self.theta[0] * k + self.theta[1]

    def eta_k(self, k):
        return self.eta[0] * k + self.eta[1]

    def theta_window(self, k, r):
        """Sum of theta over the window [k, k + r - 1], in closed form."""
        return self.theta[0] * (r * k + r * (r - 1) / 2.0) + self.theta[1] * r

    def tau_is(self, s, W):
        """Per-update dual weight: tau_s for mt, tau_s / W for amt."""
        if self.variant == "mt":
            return self.tau[s]
        return self.tau[s] / W


def mt_params(problem, eta, rho, alpha=1.0):
    """Constant-weight parameters: theta = 1 and tau_s = 2 kappa_s^2 / (rho_s eta)."""
    if alpha != 1.0:
        raise ValueError("only alpha = 1 is supported by the presets")
    if eta <= 0:
        raise ValueError("eta must be positive")
    rho = np.asarray(rho, dtype=float).reshape(-1)
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    with np.errstate(divide="ignore"):
        tau = np.where(rho > 0, 2.0 * kappa**2 / (rho * eta), np.inf)
    return StepParams("mt", theta=(0.0, 1.0), eta=(0.0, eta), rho=rho, tau=tau)


def preset_mt(problem, schedule, D_X, D_s_y=None):
    """Parameter preset for convex F from domain-size estimates.

    eta = (sum_s kappa_s sqrt(D_s^y)) * sqrt(8 / (3 D_X)) and
    rho_s proportional to kappa_s sqrt(D_s^y).
    """
    if D_X <= 0:
        raise ValueError("D_X must be positive")
    if D_s_y is None:
        D_s_y = [b.D_s_y for b in problem.blocks]
    D_s_y = np.asarray(D_s_y, dtype=float).reshape(-1)
    if np.any(D_s_y < 0):
        raise ValueError("dual radii must be nonnegative")
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    weights = kappa * np.sqrt(D_s_y)
    total = weights.sum()
    if total == 0:
        raise ValueError("dual domains degenerate; use CharZero path with "
                         "manual rho")
    eta = total * math.sqrt(8.0 / (3.0 * D_X))
    return mt_params(problem, eta, weights / total)


def amt_params(problem, schedule, rho, alpha=1.0, tau_variant="statement"):
    """Accelerated parameters (growing theta_k, eta_k) for strongly convex F.

    theta_k = k + 2 rbar2/rbar, eta_k = mu (k + rbar2/rbar) / (2 rbar C),
    and tau_s = (kappa_s^2/rho_s) * 4 r_s * rbar2 * C / mu. The
    ``tau_variant`` flag switches the rbar2 factor to rbar (a smaller
    weight that still covers the per-update requirement); the default
    follows the larger published constant.
    """
    if alpha != 1.0:
        raise ValueError("only alpha = 1 is supported by the presets")
    if problem.mu <= 0:
        raise ValueError("accelerated preset needs mu > 0")
    C = problem.geom.curvature_bound
    if not np.isfinite(C):
        raise ValueError("accelerated preset needs a finite curvature bound")
    if tau_variant not in ("statement", "proof"):
        raise ValueError("tau_variant must be 'statement' or 'proof'")
    mu = problem.mu
    rbar, r2bar = schedule.r_bar, schedule.r2_bar
    rho = np.asarray(rho, dtype=float).reshape(-1)
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    rs = np.asarray(schedule.r, dtype=float)
    factor = r2bar if tau_variant == "statement" else rbar
    with np.errstate(divide="ignore"):
        tau = np.where(rho > 0,
                       kappa**2 / rho * (4.0 * rs * factor * C / mu), np.inf)
    theta = (1.0, 2.0 * r2bar / rbar)
    eta = (mu / (2.0 * rbar * C), mu * (r2bar / rbar) / (2.0 * rbar * C))
    return StepParams("amt", theta=theta, eta=eta, rho=rho, tau=tau)


def preset_amt(problem, schedule, D_X=None, D_s_y=None, tau_variant="statement"):
    """Accelerated preset with rho_s proportional to kappa_s sqrt(D_s^y)."""
    if D_s_y is None:
        D_s_y = [b.D_s_y for b in problem.blocks]
    D_s_y = np.asarray(D_s_y, dtype=float).reshape(-1)
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    weights = kappa * np.sqrt(D_s_y)
    total = weights.sum()
    if total == 0:
        raise ValueError("dual domains degenerate; use CharZero path with "
                         "manual rho")
    return amt_params(problem, schedule, weights / total,
                      tau_variant=tau_variant)


def recommended_inner_T(problem, schedule, D_X, variant, D_s_y=None):
    """Inner iteration budget suggested by the convergence analysis."""
    if D_s_y is None:
        D_s_y = [b.D_s_y for b in problem.blocks]
    D_s_y = np.asarray(D_s_y, dtype=float).reshape(-1)
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    total = float(kappa @ np.sqrt(D_s_y))
    N = schedule.N
    if variant == "mt":
        if total == 0:
            raise ValueError("dual domains degenerate")
        return max(1, int(4.0 * problem.M**2 * (N + 1)
                          / (schedule.r_bar * total**2)))
    if variant != "amt":
        raise ValueError("variant must be 'mt' or 'amt'")
    C = problem.geom.curvature_bound
    ratio = schedule.r2_bar / schedule.r_bar
    D1 = problem.mu**2 * ratio**2 * D_X / (2.0 * problem.M**2 * C**2)
    need = max(5.0 / math.sqrt(D1), 64.0 * schedule.r_bar / D1)
    return max(1, int(math.ceil(N * need)))


class _Kahan(object):
    # Neumaier-compensated accumulator, elementwise on arrays; the
    # scratch buffers only avoid temporaries, the arithmetic per entry
    # is unchanged

    def __init__(self, like):
        self.s = np.zeros_like(like, dtype=float)
        self.c = np.zeros_like(like, dtype=float)
        self._hi = np.empty_like(self.s)
        self._lo = np.empty_like(self.s)

    def add(self, term):
        t = self.s + term
        big = np.abs(self.s) >= np.abs(term)
        np.subtract(self.s, t, out=self._hi)
        self._hi += term
        np.subtract(term, t, out=self._lo)
        self._lo += self.s
        np.copyto(self._hi, self._lo, where=~big)
        self.c += self._hi
        self.s = t

    def total(self):
        return self.s + self.c


class _KahanScalar(object):
    # float counterpart of _Kahan; same operation sequence, so the two
    # produce bit-identical sums on scalar streams

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, term):
        term = float(term)
        t = self.s + term
        if abs(self.s) >= abs(term):
            self.c += (self.s - t) + term
        else:
            self.c += (term - t) + self.s
        self.s = t

    def total(self):
        return self.s + self.c


class SolverState(object):
    """Mutable run state: history ring, dual clocks, cached adjoint, sums."""

    def __init__(self, problem, schedule, params, x_init, y_init):
        d = problem.d
        self.x_init = np.asarray(x_init, dtype=float).reshape(-1).copy()
        if self.x_init.shape[0] != d:
            raise ValueError("x_init has dimension %d, expected %d"
                             % (self.x_init.shape[0], d))
        if not problem.primal_domain.contains(self.x_init, tol=1e-9):
            raise ValueError("x_init outside the primal domain")
        self.window = 2 * max(schedule.r) + 1
        self.hx = np.tile(self.x_init, (self.window, 1))
        self.hxhat = self.hx.copy()
        if y_init is None:
            y_init = [np.zeros(b.n) for b in problem.blocks]
        self.y = []
        for b, y0 in zip(problem.blocks, y_init):
            y0 = np.asarray(y0, dtype=float).reshape(-1).copy()
            if not b.conj_domain.contains(y0):
                raise ValueError("y_init outside %r" % (b.conj_domain,))
            self.y.append(y0)
        self.i = [0] * problem.S
        self.kstar = np.zeros(d)
        for b, y0 in zip(problem.blocks, self.y):
            self.kstar += b.adjoint(y0)
        self.k = 0
        self.theta_sum = _KahanScalar()
        self.erg_x = _Kahan(np.zeros(d))
        # one stacked dual accumulator: elementwise compensation makes it
        # bit-identical to per-block accumulators over the same stream
        self._y_slices = []
        off = 0
        for b in problem.blocks:
            self._y_slices.append(slice(off, off + b.n))
            off += b.n
        self.erg_y = _Kahan(np.zeros(off))

    def hist_X(self, j):
        if j < 0:
            return self.x_init
        return self.hx[j % self.window]

    def hist_Xhat(self, j):
        if j < 0:
            return self.x_init
        return self.hxhat[j % self.window]

    def store(self, k, X, X_hat):
        self.hx[k % self.window] = X
        self.hxhat[k % self.window] = X_hat

    def accumulate(self, theta_k):
        self.theta_sum.add(theta_k)
        self.erg_x.add(theta_k * self.hist_Xhat(self.k))
        self.erg_y.add(theta_k * np.concatenate(self.y))

    def ergodic_Y(self, total):
        stacked = self.erg_y.total() / total
        return [stacked[sl].copy() for sl in self._y_slices]

    def ergodic_point(self):
        total = float(self.theta_sum.total())
        X = self.erg_x.total() / total
        return PrimalDualPoint(X, self.ergodic_Y(total))

    def audit_kstar(self, problem):
        fresh = np.zeros_like(self.kstar)
        for b, y in zip(problem.blocks, self.y):
            fresh += b.adjoint(y)
        drift = np.linalg.norm(self.kstar - fresh)
        if drift > 1e-9 * (1.0 + np.linalg.norm(self.kstar)):
            raise RuntimeError("cached adjoint drifted by %g at iteration %d"
                               % (drift, self.k))


def _xtilde(get_x, get_xhat, x_init_ref, theta_fn, k, r, alpha):
    # shared by the monolithic solver and the simulated agents so both
    # produce identical floating point results on their slices; in-place
    # updates keep the same per-entry operation order as the plain form
    acc = None
    for kp in range(k - r, k):
        if kp >= 0:
            term = get_xhat(kp) - get_x(kp - r)
            term *= theta_fn(kp)
            if alpha != 1.0:
                term *= alpha
            if acc is None:
                acc = term
            else:
                acc += term
        term2 = theta_fn(kp + r) * (get_x(kp) if kp >= 0 else x_init_ref)
        if acc is None:
            acc = term2
        else:
            acc += term2
    return acc


def extrapolate(state, schedule, params, s):
    """Aggregate X-tilde for block s at its due iteration.

    Sums theta-weighted correction terms (Xhat - delayed X) and delayed
    history over the window [k - r_s, k - 1]; terms before the start of
    the run vanish because the history is pre-filled with X^init.
    """
    k, r = state.k, schedule.r[s]
    if k % r != 0:
        raise ValueError("block %d extrapolation requested at iteration %d, "
                         "off its rate %d" % (s, k, r))
    return _xtilde(state.hist_X, state.hist_Xhat, state.x_init,
                   params.theta_k, k, r, params.alpha)


def dual_step(state, problem, schedule, params, s, xtilde=None):
    """Prox step of block s on the window-averaged aggregate."""
    k, r = state.k, schedule.r[s]
    if k % r != 0:
        raise ValueError("dual step for block %d requested off schedule" % s)
    if xtilde is None:
        xtilde = extrapolate(state, schedule, params, s)
    block = problem.blocks[s]
    W = params.theta_window(k, r)
    g = block.apply(xtilde)
    np.negative(g, out=g)
    g /= W
    g += block.offset
    tau = params.tau_is(s, W)
    y_new = prox_dual(block.geom, block.conj_domain, g, state.y[s], tau)
    delta = y_new - state.y[s]
    state.kstar += block.adjoint(delta)
    state.y[s] = y_new
    state.i[s] += 1
    return y_new


class RunResult(object):
    """Ergodic output point, collected trace rows, and the final state."""

    def __init__(self, Z, trace, state):
        self.Z = Z
        self.trace = trace
        self.state = state


def _make_view(state, problem, k, X_k, X_hat_k):
    total = float(state.theta_sum.total())
    return {
        "k": k,
        "X": X_k.copy(),
        "X_hat": X_hat_k.copy(),
        "Y": [y.copy() for y in state.y],
        "ergodic_X": state.erg_x.total() / total,
        "ergodic_Y": state.ergodic_Y(total),
        "theta_sum": total,
        "rounds": list(state.i),
    }


def run(problem, schedule, params, inner=None, x_init=None, y_init=None,
        observer=None, trace_stride=10, stop_when=None, audit_contract=False,
        audit_seed=0):
    """Execute the multi-timescale loop and return the ergodic output.

    Parameters
    ----------
    problem : SaddleProblem
    schedule : RateSchedule
    params : StepParams
    inner : InnerConfig, optional
        Inner sliding budget; required when the problem has no exact
        primal prox.
    x_init, y_init : optional
        Defaults: projection of the origin, and zero duals.
    observer : callable, optional
        (k, view) -> row; called every ``trace_stride`` iterations and at
        the final one, with returned rows collected into the trace.
    stop_when : callable, optional
        (k, view) -> bool; evaluated whenever the observer fires, ending
        the run early on True.
    audit_contract : bool, optional
        Re-check the approximate-minimizer contract at sampled iterations
        (costs extra oracle calls; meant for validation runs).

    Returns
    -------
    RunResult
    """
    geom = problem.geom
    if x_init is None:
        x_init = problem.primal_domain.project(np.zeros(problem.d))
    state = SolverState(problem, schedule, params, x_init, y_init)
    needs_inner = not problem.has_exact_prox()
    if needs_inner and inner is None:
        raise ValueError("problem has no exact primal prox; an inner sliding "
                         "config is required")
    inner_sched = None
    if needs_inner and inner.variant == "convex":
        inner_sched = SlidingSchedule(inner.T, "convex", mu=problem.mu,
                                      C=geom.curvature_bound)
    audit_rng = np.random.default_rng(audit_seed)
    trace = []
    stopped = False
    for k in range(schedule.N + 1):
        state.k = k
        theta_k = params.theta_k(k)
        for s in schedule.due(k):
            dual_step(state, problem, schedule, params, s)
        eta_k = params.eta_k(k)
        eta_ks = eta_k * params.rho
        centers = [state.hist_X(k - schedule.r[s]) for s in range(problem.S)]
        x_prev = state.hist_X(k - 1)
        if needs_inner and inner.variant == "strongly_convex":
            inner_sched = SlidingSchedule(inner.T, "strongly_convex",
                                          mu=problem.mu, eta=float(eta_k),
                                          C=geom.curvature_bound)
        linear_term = state.kstar
        X_k, X_hat_k, audit = make_primal_step(
            problem, geom, inner_sched, eta_ks, centers, linear_term, x_prev)
        if audit_contract and k % _CONTRACT_AUDIT_STRIDE == 0:
            for _ in range(20):
                X = problem.primal_domain.sample(audit_rng)
                slack = primal_contract_slack(problem, geom, eta_ks, centers,
                                              linear_term, X_k, X_hat_k,
                                              audit, X)
                if slack < -1e-8:
                    raise RuntimeError(
                        "primal step contract violated at iteration %d "
                        "(slack %g)" % (k, slack))
        state.store(k, X_k, X_hat_k)
        state.accumulate(theta_k)
        if k % _KSTAR_AUDIT_STRIDE == 0:
            state.audit_kstar(problem)
        if k % trace_stride == 0 or k == schedule.N:
            view = _make_view(state, problem, k, X_k, X_hat_k)
            if observer is not None:
                row = observer(k, view)
                if row is not None:
                    trace.append(row)
            if stop_when is not None and stop_when(k, view):
                stopped = True
                break
    result = RunResult(state.ergodic_point(), trace, state)
    result.stopped_early = stopped
    return result


def baseline_pdhg(problem, eta, tau, N, rates=None, x_init=None, y_init=None,
                  observer=None, trace_stride=1, stop_when=None):
    """Classical PDHG with one-step extrapolation, plus a naive-delay mode.

    The extrapolation is always 2 X^{k-1} - X^{k-2} and the primal prox
    uses the single center X^{k-1}; when ``rates`` is given, block s is
    simply skipped off its schedule with everything else unchanged. This
    is the comparator that ignores the multi-timescale corrections.

    Parameters
    ----------
    problem : SaddleProblem
        Must have an exact primal prox (linear F or a prox oracle).
    eta : float
    tau : float or array-like
        Per-block dual weights.
    N : int
    rates : list of int, optional

    Returns
    -------
    RunResult
        ``Z`` holds the last iterate and the final duals.
    """
    if not problem.has_exact_prox():
        raise ValueError("baseline solver supports exact-prox problems only")
    geom = problem.geom
    d, S = problem.d, problem.S
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (S,))
    if x_init is None:
        x_init = problem.primal_domain.project(np.zeros(d))
    x_prev = np.asarray(x_init, dtype=float).reshape(-1).copy()
    x_prev2 = x_prev.copy()
    if y_init is None:
        y_init = [np.zeros(b.n) for b in problem.blocks]
    y = [np.asarray(v, dtype=float).reshape(-1).copy() for v in y_init]
    kstar = np.zeros(d)
    for b, ys in zip(problem.blocks, y):
        kstar += b.adjoint(ys)
    trace = []
    X = x_prev
    for k in range(N + 1):
        xt = 2.0 * x_prev - x_prev2
        for s in range(S):
            if rates is not None and k % rates[s] != 0:
                continue
            b = problem.blocks[s]
            g = -b.apply(xt) + b.offset
            y_new = prox_dual(b.geom, b.conj_domain, g, y[s], tau[s])
            kstar = kstar + b.adjoint(y_new - y[s])
            y[s] = y_new
        if problem.prox_oracle is not None:
            X = problem.prox_oracle(problem.primal_domain, kstar,
                                    [(eta, x_prev)])
        else:
            X = prox_linear(geom, problem.primal_domain,
                            problem.g_F + kstar, [(eta, x_prev)])
        if k % trace_stride == 0 or k == N:
            view = {"k": k, "X": X.copy(), "Y": [v.copy() for v in y]}
            if observer is not None:
                row = observer(k, view)
                if row is not None:
                    trace.append(row)
            if stop_when is not None and stop_when(k, view):
                break
        x_prev2 = x_prev
        x_prev = X
    return RunResult(PrimalDualPoint(X, y), trace, None)
