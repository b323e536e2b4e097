"""Deterministic simulated multi-agent execution with cost accounting.

Primal agents own their slice of the lifted variable (history ring,
local objective, running adjoint); one dual agent per block owns its
dual variable. A global iteration is one synchronous round: due dual
agents collect extrapolated contributions from their incident primal
agents, update, and send back the dual increments; then every primal
agent takes its local step. Agents only ever touch state they own or
received; violations raise AssertionError naming the agent and field.
Agents are always stepped serially in index order, which is the strict
bit-reproducible mode; no latency is modeled, accounting is count-based.

The arithmetic is arranged to reproduce the monolithic solver exactly:
dual products run over a masked full-length vector so the sparse matvec
visits the same entries in the same order, and primal steps are slices
of elementwise operations. The end state is checked against
``solver.run`` on the same inputs.

Message accounting follows the marked send steps of the distributed
loop: a primal-to-dual message carries the agent's d-bar extrapolated
coordinates, a dual-to-primal message carries the n_s-dimensional dual
increment. The task-assignment switch flips which side applies the
coupling operator, which only swaps those per-direction payload sizes.
"""

from fractions import Fraction

import numpy as np

from .geometry import BregmanGeometry, prox_dual, prox_linear
from .metrics import format_float
from .problem import PrimalDualPoint
from .sliding import SlidingSchedule, gradient_slide
from .solver import _Kahan, _KahanScalar, _xtilde, run

_AUDIT_TOL = 1e-9

LEDGER_COLUMNS = ["iter", "block", "rounds", "msgs", "payload_scalars",
                  "iter_cost", "cum_cost"]


class CostModel(object):
    """Per-block dual update costs c_s with an aggregation rule.

    'additive' charges the sum of the due blocks' costs per iteration;
    'bottleneck' charges only the most expensive due block (simultaneous
    updates running in parallel).
    """

    def __init__(self, c_s, aggregation="additive"):
        self.c_s = np.asarray(c_s, dtype=float).reshape(-1)
        if np.any(self.c_s < 0) or not np.all(np.isfinite(self.c_s)):
            raise ValueError("costs must be finite and nonnegative")
        if aggregation not in ("additive", "bottleneck"):
            raise ValueError("unknown aggregation %r" % (aggregation,))
        self.aggregation = aggregation

    def iteration_cost(self, due):
        if not due:
            return 0.0
        picked = [self.c_s[s] for s in due]
        if self.aggregation == "additive":
            return float(sum(picked))
        return float(max(picked))


def amortized_cost(cost_model, topology, schedule):
    """Average additive cost per global iteration, sum of c_s / r_s.

    Each dual agent is counted once. Computed in exact rational
    arithmetic over the binary values of the costs, so equal inputs give
    bit-equal outputs.
    """
    if cost_model.aggregation != "additive":
        raise ValueError("amortized cost is defined for additive "
                         "aggregation only")
    if cost_model.c_s.shape[0] != topology.S:
        raise ValueError("need one cost per block")
    if schedule.S != topology.S:
        raise ValueError("schedule has %d rates for %d blocks"
                         % (schedule.S, topology.S))
    total = Fraction(0)
    for c, r in zip(cost_model.c_s, schedule.r):
        total += Fraction(float(c)) / r
    return float(total)


def rate_advisor(cost_model, weights, budget_mode="rho"):
    """Suggested integer rates from the square-root balancing rule.

    r_s is proportional to sqrt(c_s / w_s), scaled so the smallest rate
    is 1, with exact half-way values rounded down. ``weights`` holds the
    denominators: the dual weights rho for budget_mode 'rho', the
    operator norms for 'norm', or the norm-to-sigma ratios for
    'similarity' (the mode tag records intent; the arithmetic is
    identical).
    """
    if budget_mode not in ("rho", "norm", "similarity"):
        raise ValueError("unknown budget mode %r" % (budget_mode,))
    weights = np.asarray(weights, dtype=float).reshape(-1)
    c = cost_model.c_s
    if weights.shape[0] != c.shape[0]:
        raise ValueError("need one weight per block")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    v = np.sqrt(c / weights)
    positive = v[v > 0]
    if positive.size == 0:
        return [1] * c.shape[0]
    scaled = v / positive.min()
    return [max(1, int(np.ceil(x - 0.5))) for x in scaled]


class MessageLedger(object):
    """Message, payload, and cost counters for a simulated run.

    ``edges`` maps (block, agent) to per-direction counters: 'up' is
    primal to dual, 'down' is dual to primal, each with message and
    scalar-payload totals. ``rows`` holds one record per completed dual
    round for CSV export.
    """

    def __init__(self, S):
        self.rows = []
        self.rounds = [0] * S
        self.edges = {}
        self.total_messages = 0
        self.total_payload = 0
        self.cum_cost = 0.0

    def record_round(self, k, s, incident, up_payload, down_payload,
                     iter_cost):
        self.rounds[s] += 1
        msgs = 0
        payload = 0
        for v in incident:
            edge = self.edges.setdefault((s, v), {"up_msgs": 0,
                                                  "down_msgs": 0,
                                                  "up_payload": 0,
                                                  "down_payload": 0})
            edge["up_msgs"] += 1
            edge["down_msgs"] += 1
            edge["up_payload"] += up_payload
            edge["down_payload"] += down_payload
            msgs += 2
            payload += up_payload + down_payload
        self.total_messages += msgs
        self.total_payload += payload
        self.rows.append({"iter": k, "block": s, "rounds": self.rounds[s],
                          "msgs": msgs, "payload_scalars": payload,
                          "iter_cost": float(iter_cost),
                          "cum_cost": 0.0})

    def close_iteration(self, k, cost):
        self.cum_cost += cost
        for row in reversed(self.rows):
            if row["iter"] != k:
                break
            row["cum_cost"] = self.cum_cost

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(LEDGER_COLUMNS) + "\n")
            for row in self.rows:
                cells = [str(row["iter"]), str(row["block"]),
                         str(row["rounds"]), str(row["msgs"]),
                         str(row["payload_scalars"]),
                         format_float(row["iter_cost"]),
                         format_float(row["cum_cost"])]
                fh.write(",".join(cells) + "\n")


class _PrimalAgent(object):
    # owns one slice of the lifted variable and the local objective

    def __init__(self, v, dbar, x_init, window, domain, oracle, g_F_slice,
                 geom):
        self.v = v
        self.dbar = dbar
        self.x_init = x_init.copy()
        self.window = window
        self.hx = np.tile(self.x_init, (window, 1))
        self.hxhat = self.hx.copy()
        self.domain = domain
        self.oracle = oracle
        self.g_F = g_F_slice
        self.geom = geom
        self.kt_rows = {}
        self.kstar = np.zeros(dbar)
        self.erg = _Kahan(np.zeros(dbar))

    def attach_edge(self, s, kt_rows, y0):
        self.kt_rows[s] = kt_rows
        self.kstar = self.kstar + kt_rows @ y0

    def hist_X(self, j):
        if j < 0:
            return self.x_init
        return self.hx[j % self.window]

    def hist_Xhat(self, j):
        if j < 0:
            return self.x_init
        return self.hxhat[j % self.window]

    def xtilde(self, s, k, r, theta_fn, alpha):
        assert s in self.kt_rows, (
            "primal agent %d asked to extrapolate for block %d without an "
            "edge (field xtilde)" % (self.v, s))
        return _xtilde(self.hist_X, self.hist_Xhat, self.x_init, theta_fn,
                       k, r, alpha)

    def receive_delta(self, s, delta):
        assert s in self.kt_rows, (
            "primal agent %d received an increment for block %d without an "
            "edge (field kstar)" % (self.v, s))
        self.kstar = self.kstar + self.kt_rows[s] @ delta

    def primal_step(self, k, eta_ks, rates, inner_sched):
        centers = [(w, self.hist_X(k - r)) for w, r in zip(eta_ks, rates)]
        if self.oracle is None:
            g = self.g_F + self.kstar
            X = prox_linear(self.geom, self.domain, g, centers)
            X_hat = X
        else:
            res = gradient_slide(self.oracle, self.domain, self.geom,
                                 inner_sched, centers, self.kstar,
                                 self.hist_X(k - 1))
            X, X_hat = res.u_T, res.u_hat_T
        self.hx[k % self.window] = X
        self.hxhat[k % self.window] = X_hat
        return X, X_hat

    def accumulate(self, k, theta_k):
        self.erg.add(theta_k * self.hist_Xhat(k))


class _DualAgent(object):
    # owns one dual block

    def __init__(self, s, block, incident, slices, y0, lifted_dim):
        self.s = s
        self.K = block.K
        self.offset = block.offset
        self.conj_domain = block.conj_domain
        self.geom = block.geom
        self.incident = list(incident)
        self.slices = slices
        self.y = y0.copy()
        self.i = 0
        self.lifted_dim = lifted_dim
        self.erg = _Kahan(np.zeros(block.n))

    def update(self, k, W, tau, contributions):
        got = sorted(contributions)
        assert got == self.incident, (
            "dual agent for block %d received contributions from agents %r, "
            "expected %r (field xtilde)" % (self.s, got, self.incident))
        # zeros off the incident slices are never touched by the sparse
        # product, so this equals the monolithic full-vector matvec
        full = np.zeros(self.lifted_dim)
        for v in self.incident:
            full[self.slices[v]] = contributions[v]
        g = -(self.K @ full) / W + self.offset
        y_new = prox_dual(self.geom, self.conj_domain, g, self.y, tau)
        delta = y_new - self.y
        self.y = y_new
        self.i += 1
        return delta

    def accumulate(self, theta_k):
        self.erg.add(theta_k * self.y)


def _incident_agents(base_block):
    return sorted(np.unique(base_block.tocoo().col).tolist())


def simulate(problem, topology, schedule, params, cost_model, inner=None,
             x_init=None, y_init=None, observer=None, trace_stride=10,
             task_assignment="dual_computes", audit=True):
    """Run the distributed loop through per-agent mailboxes.

    Parameters mirror ``solver.run`` plus the topology, the cost model,
    and the task-assignment switch: 'dual_computes' applies the coupling
    operator at the dual agent (raw coordinates up, dual increments
    down), 'primal_computes' at the primal agents (applied products up,
    adjoint slices down). The switch only swaps the accounted payload
    directions; the iterates are identical. With ``audit`` the end state
    is compared against the monolithic solver at 1e-9.

    Returns
    -------
    (Z, trace, ledger)
        Ergodic primal-dual point, observer rows, message ledger.
    """
    if task_assignment not in ("dual_computes", "primal_computes"):
        raise ValueError("unknown task assignment %r" % (task_assignment,))
    if cost_model.c_s.shape[0] != topology.S:
        raise ValueError("need one cost per block")
    if problem.S != topology.S:
        raise ValueError("problem has %d blocks, topology %d"
                         % (problem.S, topology.S))
    m, dbar = topology.m, topology.dbar
    if problem.d != topology.lifted_dim:
        raise ValueError("problem dimension %d does not match the lifted "
                         "space %d" % (problem.d, topology.lifted_dim))
    for s, b in enumerate(problem.blocks):
        ref = topology.block_operator(s)
        if b.K.shape != ref.shape or abs(b.K - ref).max() > 0:
            raise ValueError("problem block %d does not match the topology "
                             "operator; build the problem with lift_problem"
                             % s)
    if problem.prox_oracle is not None:
        raise ValueError("opaque prox oracles cannot be split across agents")
    locals_ = getattr(problem, "local_objectives", None)
    if not problem.is_F_linear and locals_ is None:
        raise ValueError("lifted problem lacks per-agent oracles; build it "
                         "with lift_problem")
    needs_inner = not problem.has_exact_prox()
    if needs_inner and inner is None:
        raise ValueError("problem has no exact primal prox; an inner sliding "
                         "config is required")
    if x_init is None:
        x_init = problem.primal_domain.project(np.zeros(problem.d))
    x_init = np.asarray(x_init, dtype=float).reshape(-1)
    if y_init is None:
        y_init = [np.zeros(b.n) for b in problem.blocks]
    window = 2 * max(schedule.r) + 1
    agent_geom = BregmanGeometry(dbar)
    slices = [topology.agent_slice(v) for v in range(m)]
    agents = []
    for v in range(m):
        dom = problem.primal_domain.parts[v]
        oracle = locals_[v] if locals_ is not None else None
        gf = problem.g_F[slices[v]] if problem.is_F_linear else None
        agents.append(_PrimalAgent(v, dbar, x_init[slices[v]], window, dom,
                                   oracle, gf, agent_geom))
    duals = []
    for s, b in enumerate(problem.blocks):
        incident = _incident_agents(topology.base_blocks[s])
        dual = _DualAgent(s, b, incident, slices,
                          np.asarray(y_init[s], dtype=float).reshape(-1),
                          problem.d)
        for v in incident:
            agents[v].attach_edge(s, b.KT[slices[v]], dual.y)
        duals.append(dual)
    ledger = MessageLedger(topology.S)
    theta_sum = _KahanScalar()
    inner_sched = None
    if needs_inner and inner.variant == "convex":
        inner_sched = SlidingSchedule(inner.T, "convex", mu=problem.mu,
                                      C=problem.geom.curvature_bound)
    trace = []
    N = schedule.N
    for k in range(N + 1):
        due = schedule.due(k)
        for s in due:
            r = schedule.r[s]
            W = params.theta_window(k, r)
            contributions = {}
            for v in duals[s].incident:
                contributions[v] = agents[v].xtilde(s, k, r, params.theta_k,
                                                    params.alpha)
            delta = duals[s].update(k, W, params.tau_is(s, W), contributions)
            for v in duals[s].incident:
                agents[v].receive_delta(s, delta)
            n_s = problem.blocks[s].n
            if task_assignment == "dual_computes":
                up_payload, down_payload = dbar, n_s
            else:
                up_payload, down_payload = n_s, dbar
            ledger.record_round(k, s, duals[s].incident, up_payload,
                                down_payload,
                                iter_cost=float(cost_model.c_s[s]))
        eta_k = params.eta_k(k)
        eta_ks = eta_k * params.rho
        if needs_inner and inner.variant == "strongly_convex":
            inner_sched = SlidingSchedule(inner.T, "strongly_convex",
                                          mu=problem.mu, eta=float(eta_k),
                                          C=problem.geom.curvature_bound)
        for agent in agents:
            agent.primal_step(k, eta_ks, schedule.r, inner_sched)
        theta_k = params.theta_k(k)
        theta_sum.add(theta_k)
        for agent in agents:
            agent.accumulate(k, theta_k)
        for dual in duals:
            dual.accumulate(theta_k)
        ledger.close_iteration(k, cost_model.iteration_cost(due))
        if k % trace_stride == 0 or k == N:
            if observer is not None:
                view = _assemble_view(k, agents, duals, theta_sum, ledger)
                row = observer(k, view)
                if row is not None:
                    trace.append(row)
    total = float(theta_sum.total())
    Z = PrimalDualPoint(
        np.concatenate([a.erg.total() / total for a in agents]),
        [d.erg.total() / total for d in duals])
    final_X = np.concatenate([a.hist_X(N) for a in agents])
    final_Y = [d.y.copy() for d in duals]
    rounds = [d.i for d in duals]
    if audit:
        _audit_against_monolithic(Z, final_X, final_Y, rounds, problem,
                                  schedule, params, inner, x_init, y_init)
    return Z, trace, ledger


def _assemble_view(k, agents, duals, theta_sum, ledger):
    total = float(theta_sum.total())
    return {"k": k,
            "X": np.concatenate([a.hist_X(k) for a in agents]),
            "X_hat": np.concatenate([a.hist_Xhat(k) for a in agents]),
            "Y": [d.y.copy() for d in duals],
            "ergodic_X": np.concatenate([a.erg.total() / total
                                         for a in agents]),
            "ergodic_Y": [d.erg.total() / total for d in duals],
            "theta_sum": total,
            "rounds": [d.i for d in duals],
            "cum_cost": ledger.cum_cost,
            "messages": ledger.total_messages}


def _audit_against_monolithic(Z, final_X, final_Y, rounds, problem, schedule,
                              params, inner, x_init, y_init):
    mono = run(problem, schedule, params, inner=inner, x_init=x_init,
               y_init=[y.copy() for y in y_init],
               trace_stride=schedule.N + 1)
    checks = [("ergodic primal", Z.X, mono.Z.X),
              ("final primal", final_X, mono.state.hist_X(schedule.N))]
    for s in range(problem.S):
        checks.append(("ergodic dual %d" % s, Z.Y[s], mono.Z.Y[s]))
        checks.append(("final dual %d" % s, final_Y[s], mono.state.y[s]))
    for name, got, want in checks:
        err = np.linalg.norm(got - want)
        if err > _AUDIT_TOL * (1.0 + np.linalg.norm(want)):
            raise RuntimeError("simulated run diverged from the monolithic "
                               "solver on %s (error %g)" % (name, err))
    if rounds != mono.state.i:
        raise RuntimeError("simulated round counts %r do not match the "
                           "monolithic solver %r" % (rounds, mono.state.i))
