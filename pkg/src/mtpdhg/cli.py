"""Experiment drivers: seeded LP and SVM runs with CSV/JSON outputs.

Four subcommands share one flat configuration (``key=value`` file,
overridden by flags of the same names):

* ``lp``: random equality-constrained LP, multi-rate solver against the
  classical or naive-delay baseline, KKT residual traces;
* ``svm``: distributed hinge-loss fitting over a consensus topology,
  LIBSVM-format or synthetic data, similarity-aware penalties, routed
  through the simulated agents with message accounting;
* ``custom``: quadratic agents on a user-supplied tree file;
* ``selftest``: quick end-to-end consistency checks.

Every run directory receives the fully resolved configuration (with all
derived parameters) as JSON next to the trace files, and reruns with the
same configuration are byte-identical; wall-clock timings are only
written when ``strict`` is disabled, since they would break that
guarantee. The drivers are single-threaded; per-agent work is delegated
to the simulation layer.
"""

import argparse
import json
import os
import time

import numpy as np
import scipy.sparse as sp

from .consensus import (PenaltyPlan, SimilarityModel, Topology,
                        lift_problem, make_penalties, projector_apply,
                        warm_start, warm_start_epsilon)
from .geometry import Ball, NonnegativeOrthant
from .metrics import MetricRow, format_float, kkt_residual, write_trace_csv
from .problem import SaddleProblem, DualBlock, hinge_ridge_objective, \
    quadratic_objective
from .simnet import CostModel, amortized_cost, simulate
from .sliding import InnerConfig
from .solver import (RateSchedule, baseline_pdhg, mt_params, amt_params,
                     preset_amt, preset_mt, run)

_BALL_RADIUS = 5.0


def _bool(v):
    if isinstance(v, bool):
        return v
    text = str(v).strip().lower()
    if text in ("true", "1", "yes", "on"):
        return True
    if text in ("false", "0", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % (v,))


def _int_list(v):
    if isinstance(v, str):
        v = v.split(",")
    return [int(x) for x in v]


def _float_list(v):
    if isinstance(v, str):
        v = v.split(",")
    return [float(x) for x in v]


def _choice(*options):
    def cast(v):
        v = str(v).strip()
        if v not in options:
            raise ValueError("expected one of %s, got %r"
                             % ("/".join(options), v))
        return v
    return cast


class RunConfig(object):
    """Flat experiment configuration with typed fields.

    Build from keyword arguments, a ``key=value`` file, or both; every
    field doubles as a command line flag. Unknown keys are rejected.
    """

    _SCHEMA = [
        ("experiment", _choice("lp", "svm", "custom", "selftest"), "lp"),
        ("seed", int, 0),
        ("N", int, 599),
        ("rates", _int_list, [1]),
        ("rho_mode", _choice("uniform", "preset"), "uniform"),
        ("penalty_mode", _choice("ccv", "prj", "type1"), "ccv"),
        ("type1_scale", float, 10000.0),
        ("xi", float, 1.0),
        ("mu", float, 0.0),
        ("T", int, 0),
        ("gamma", float, 0.1),
        ("costs", _float_list, [1.0]),
        ("topology", _choice("tree", "average", "file"), "tree"),
        ("topology_file", str, ""),
        ("data_file", str, ""),
        ("out", str, "runs/latest"),
        ("variant", _choice("mt", "amt"), "mt"),
        ("m", int, 0),
        ("n", int, 240),
        ("S", int, 6),
        ("dim", int, 10),
        ("arity", int, 5),
        ("depth", int, 3),
        ("samples", int, 200),
        ("baseline", _choice("none", "vanilla", "naive"), "none"),
        ("routing", _choice("simnet", "monolithic"), "simnet"),
        ("trace_stride", int, 10),
        ("threshold", float, 1e-2),
        ("similarity", _choice("auto", "data_overlap", "lipschitz",
                               "subtree"), "auto"),
        ("warm", _bool, False),
        ("audit", _bool, False),
        ("normalize", _bool, True),
        ("strict", _bool, True),
    ]

    def __init__(self, **overrides):
        self._casters = {}
        for name, caster, default in self._SCHEMA:
            setattr(self, name, default)
            self._casters[name] = caster
        self.update(overrides)

    def update(self, pairs):
        for name, value in pairs.items():
            if name not in self._casters:
                raise ValueError("unknown config key %r" % (name,))
            try:
                setattr(self, name, self._casters[name](value))
            except ValueError as exc:
                raise ValueError("config key %s: %s" % (name, exc))

    def update_from_file(self, path):
        pairs = {}
        with open(path, "r") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError("%s line %d: expected key=value"
                                     % (path, lineno))
                key, value = line.split("=", 1)
                pairs[key.strip()] = value.strip()
        self.update(pairs)

    def as_dict(self):
        return {name: getattr(self, name) for name, _, _ in self._SCHEMA}


def _pyify(obj):
    if isinstance(obj, dict):
        return {str(k): _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(_pyify(obj), indent=2, sort_keys=True))
        fh.write("\n")


def _ensure_out(config):
    os.makedirs(config.out, exist_ok=True)
    return config.out


def _expand_per_block(values, topology_or_S, what):
    """One value per block from a scalar, a full list, or tree levels."""
    values = list(values)
    if isinstance(topology_or_S, Topology):
        S = topology_or_S.S
        if len(values) == S:
            return values
        if len(values) == 1:
            return values * S
        if topology_or_S.kind == "hierarchical_tree":
            depths = topology_or_S.block_depths()
            if len(values) == max(depths) + 1:
                return [values[depth] for depth in depths]
        raise ValueError("%s needs 1, %d, or one-per-level values, got %d"
                         % (what, S, len(values)))
    S = int(topology_or_S)
    if len(values) == S:
        return values
    if len(values) == 1:
        return values * S
    raise ValueError("%s needs 1 or %d values, got %d"
                     % (what, S, len(values)))


def _params_for(problem, schedule, config, D_X):
    """Step parameters from the configured variant and rho mode."""
    S = problem.S
    if config.variant == "amt":
        if config.rho_mode == "preset":
            return preset_amt(problem, schedule)
        return amt_params(problem, schedule, np.full(S, 1.0 / S))
    if config.rho_mode == "preset":
        return preset_mt(problem, schedule, D_X)
    kappa = np.array([b.kappa_tilde for b in problem.blocks])
    weights = kappa * np.sqrt([b.D_s_y for b in problem.blocks])
    eta = float(weights.sum()) * np.sqrt(8.0 / (3.0 * D_X))
    return mt_params(problem, eta, np.full(S, 1.0 / S))


# ---------------------------------------------------------------------------
# linear programming


class LpInstance(object):
    """Equality-constrained LP data with a contiguous row partition.

    min <c, X> over X >= 0 subject to A X = b, where b = A x_feasible by
    construction so the instance is feasible.
    """

    def __init__(self, A, b, c, S, x_feasible):
        self.A = A
        self.b = b
        self.c = c
        self.S = int(S)
        self.x_feasible = x_feasible
        self.m, self.n = A.shape

    def block_rows(self, s):
        size = self.m // self.S
        return slice(s * size, (s + 1) * size)


def lp_generate(m, n, S, seed):
    """Seeded random LP: Gaussian costs, Uniform[0,1) constraint matrix.

    Raises when m is not divisible by S; the rows are split into S equal
    contiguous blocks.
    """
    if m % S != 0:
        raise ValueError("m must be divisible by S (m=%d, S=%d)" % (m, S))
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n)
    A = rng.random((m, n))
    x_feasible = rng.random(n)
    b = A @ x_feasible
    return LpInstance(A, b, c, S, x_feasible)


def build_lp_problem(instance):
    """Saddle encoding of the LP and the operator norm of A.

    Each row block contributes an unconstrained dual group with the
    negated rows as coupling operator and the negated right-hand side as
    offset, so the dual linear term reads <K_s X - u_s, y_s> with the
    constant b folded into u_s.
    """
    blocks = []
    for s in range(instance.S):
        rows = instance.block_rows(s)
        A_s = instance.A[rows]
        blocks.append(DualBlock(-A_s, penalty="char_zero",
                                offset=-instance.b[rows],
                                kappa_tilde=np.linalg.norm(A_s, 2)))
    problem = SaddleProblem(NonnegativeOrthant(instance.n), blocks,
                            g_F=instance.c)
    return problem, float(np.linalg.norm(instance.A, 2))


def lp_run(config):
    """Run one rate combo on a generated LP; optionally a baseline too.

    Writes trace.csv (KKT residual of the last iterate), the resolved
    configuration, and summary.json; returns the summary.
    """
    started = time.perf_counter()
    m = config.m if config.m > 0 else 120
    instance = lp_generate(m, config.n, config.S, config.seed)
    problem, eta = build_lp_problem(instance)
    rates = _expand_per_block(config.rates, config.S, "rates")
    schedule = RateSchedule(rates, config.N)
    params = mt_params(problem, eta, np.full(config.S, 1.0 / config.S))
    A, b, c = instance.A, instance.b, instance.c

    def observer(k, view):
        Y = np.concatenate(view["Y"])
        return MetricRow(k, primal_value=float(c @ view["X"]),
                         kkt=kkt_residual(A, b, c, view["X"], Y),
                         rounds=tuple(view.get("rounds", ())))

    stop_when = None
    if config.threshold > 0:
        def stop_when(k, view):
            Y = np.concatenate(view["Y"])
            return kkt_residual(A, b, c, view["X"], Y) <= config.threshold

    result = run(problem, schedule, params, observer=observer,
                 trace_stride=config.trace_stride, stop_when=stop_when)
    rows = result.trace
    reached = [row.k for row in rows if row.kkt <= config.threshold]
    summary = {
        "experiment": "lp",
        "eta": eta,
        "r_bar": schedule.r_bar,
        "final_kkt": rows[-1].kkt,
        "final_primal_value": rows[-1].primal_value,
        "iterations_run": rows[-1].k,
        "iterations_to_threshold": reached[0] if reached else None,
        "stopped_early": result.stopped_early,
        "threshold": config.threshold,
    }
    baseline_rows = None
    if config.baseline != "none":
        base_rates = rates if config.baseline == "naive" else None
        base = baseline_pdhg(problem, eta, params.tau, schedule.N,
                             rates=base_rates, observer=observer,
                             trace_stride=config.trace_stride)
        baseline_rows = base.trace
        summary["baseline_mode"] = config.baseline
        summary["baseline_final_kkt"] = baseline_rows[-1].kkt
    out = _ensure_out(config)
    write_trace_csv(os.path.join(out, "trace.csv"), rows)
    if baseline_rows is not None:
        write_trace_csv(os.path.join(out, "baseline_trace.csv"),
                        baseline_rows)
    resolved = config.as_dict()
    resolved.update({"derived_eta": eta, "derived_tau": params.tau,
                     "derived_rho": params.rho, "rates_expanded": rates,
                     "N_adjusted": schedule.N,
                     "theta": {"slope": params.theta[0],
                               "intercept": params.theta[1]}})
    _write_json(os.path.join(out, "resolved_config.json"), resolved)
    if not config.strict:
        summary["wall_seconds"] = time.perf_counter() - started
    _write_json(os.path.join(out, "summary.json"), summary)
    summary["trace_rows"] = rows
    if baseline_rows is not None:
        summary["baseline_rows"] = baseline_rows
    return summary


# ---------------------------------------------------------------------------
# LIBSVM data handling


def libsvm_load(path, normalize=True):
    """Sparse `label idx:val ...` reader with 1-based indices.

    Labels are coerced to +-1 (0/1 map to -1/+1); with ``normalize``
    every sample is scaled to unit Euclidean norm. Malformed lines raise
    with their line number.
    """
    rows, cols, vals, labels = [], [], [], []
    n_rows = 0
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ValueError("line %d: bad label %r"
                                 % (lineno, parts[0]))
            if label in (0.0, -1.0):
                label = -1.0
            elif label in (1.0,):
                label = 1.0
            else:
                raise ValueError("line %d: label must be 0/1 or +-1, got %r"
                                 % (lineno, parts[0]))
            for token in parts[1:]:
                if ":" not in token:
                    raise ValueError("line %d: expected index:value, got %r"
                                     % (lineno, token))
                idx_text, val_text = token.split(":", 1)
                try:
                    idx = int(idx_text)
                except ValueError:
                    raise ValueError("line %d: bad feature index %r"
                                     % (lineno, idx_text))
                if idx < 1:
                    raise ValueError("line %d: feature indices are 1-based"
                                     % lineno)
                try:
                    val = float(val_text)
                except ValueError:
                    raise ValueError("line %d: bad feature value %r"
                                     % (lineno, val_text))
                if not np.isfinite(val):
                    raise ValueError("line %d: non-finite feature value"
                                     % lineno)
                rows.append(n_rows)
                cols.append(idx - 1)
                vals.append(val)
            labels.append(label)
            n_rows += 1
    if n_rows == 0:
        raise ValueError("no samples in %s" % path)
    dim = max(cols) + 1 if cols else 1
    features = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, dim))
    if normalize:
        norms = np.sqrt(np.asarray(features.multiply(features)
                                   .sum(axis=1)).reshape(-1))
        scale = np.where(norms > 0, 1.0 / np.maximum(norms, 1e-300), 1.0)
        features = sp.diags(scale) @ features
    return features.tocsr(), np.array(labels)


def synthetic_svm_data(samples, dim, seed):
    """Two unit-normalized Gaussian class clouds along a random direction."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    w /= np.linalg.norm(w)
    labels = np.where(rng.random(samples) < 0.5, -1.0, 1.0)
    features = labels[:, None] * w + 0.8 * rng.standard_normal((samples, dim))
    norms = np.linalg.norm(features, axis=1)
    features /= np.maximum(norms, 1e-12)[:, None]
    return sp.csr_matrix(features), labels


def svm_split(dataset, m, gamma, seed):
    """Shared-plus-local data split controlled by the overlap level gamma.

    A fraction (1 - gamma) / (1 + (m - 1) gamma) of the shuffled samples
    becomes a global shard handed to every agent; the rest is divided
    evenly. Returns the per-agent (features, labels) list and a report
    with the shard sizes and the induced similarity constant
    a1 = 2 gamma sqrt(m).
    """
    features, labels = dataset
    n = features.shape[0]
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if n < m:
        raise ValueError("need at least one sample per agent (%d < %d)"
                         % (n, m))
    fraction = (1.0 - gamma) / (1.0 + (m - 1) * gamma)
    n_global = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    global_idx = perm[:n_global]
    shards = np.array_split(perm[n_global:], m)
    per_agent = []
    for shard in shards:
        idx = np.concatenate([global_idx, shard]).astype(int)
        per_agent.append((features[idx], labels[idx]))
    info = {"global_count": int(n_global),
            "global_fraction": fraction,
            "local_counts": [int(s.size) for s in shards],
            "a1": 2.0 * gamma * np.sqrt(m)}
    return per_agent, info


# ---------------------------------------------------------------------------
# lifted runs (SVM and custom topologies)


def _agent_objective(features, labels, mu, dim):
    if features.shape[0] > 0:
        return hinge_ridge_objective(features, labels, mu)
    if mu > 0:
        return quadratic_objective(np.zeros(dim), mu)[0]
    return lambda x: (0.0, np.zeros(dim))


def _type1_plan(topology, xi, scale):
    """Similarity-oblivious penalties: the worst-case projected levels
    inflated by a large constant."""
    base = make_penalties(topology, SimilarityModel.data_overlap(
        topology.m, 1.0), xi, mode="prj")
    return PenaltyPlan(scale * np.asarray(base.lam), base.suggested_rho,
                       scale * base.A, scale * base.A1, base.xi, base.mode,
                       base.kind_used, base.sigma_stacked, base.sigma_blocks,
                       base.norms, base.a_values)


def _build_topology(config, dbar):
    if config.topology == "file":
        if not config.topology_file:
            raise ValueError("topology=file needs a topology_file")
        return Topology.from_tree_file(config.topology_file, dbar)
    if config.topology == "tree":
        return Topology.balanced_tree(config.arity, config.depth, dbar)
    m = config.m if config.m > 0 else 10
    return Topology.average_deviation(m, dbar)


def _execute_lifted(config, topology, locals_, plan, M_f, similarity,
                    started):
    """Shared back half of the lifted drivers: solve, trace, write."""
    mu = config.mu
    domain = Ball(_BALL_RADIUS, dimension=topology.dbar)
    problem = lift_problem(locals_, topology, plan, domain, M_f=M_f,
                           mu_f=mu)
    rates = _expand_per_block(config.rates, topology, "rates")
    schedule = RateSchedule(rates, config.N)
    D_X = topology.m * _BALL_RADIUS**2 / 2.0
    params = _params_for(problem, schedule, config, D_X)
    T = config.T if config.T > 0 else schedule.N + 1
    inner = InnerConfig(T, "strongly_convex" if mu > 0 else "convex")
    x_init = None
    warm_info = None
    if config.warm:
        if mu <= 0:
            raise ValueError("warm start needs mu > 0")
        eps0 = warm_start_epsilon(similarity, mu)
        x_init, warm_info = warm_start(locals_, domain, topology, mu, M_f,
                                       eps0, _BALL_RADIUS**2 / 2.0)
    costs = _expand_per_block(config.costs, topology, "costs")
    cost_model = CostModel(costs)

    def objective_at_mean(X):
        xm = topology.consensus_mean(X)
        return float(sum(f(xm)[0] for f in locals_))

    def observer(k, view):
        X_bar = view["ergodic_X"]
        return MetricRow(k, primal_value=objective_at_mean(X_bar),
                         consensus_violation=float(np.linalg.norm(
                             projector_apply(topology, X_bar))),
                         cum_cost=float(view.get("cum_cost", 0.0)),
                         rounds=tuple(view["rounds"]))

    ledger = None
    if config.routing == "simnet":
        _, rows, ledger = simulate(problem, topology, schedule, params,
                                   cost_model, inner=inner, x_init=x_init,
                                   observer=observer,
                                   trace_stride=config.trace_stride,
                                   audit=config.audit)
    else:
        result = run(problem, schedule, params, inner=inner, x_init=x_init,
                     observer=observer, trace_stride=config.trace_stride)
        rows = result.trace
    F0 = float(sum(f(np.zeros(topology.dbar))[0] for f in locals_))
    raw = [row.primal_value for row in rows]
    v_min = min(raw)
    span = F0 - v_min
    if span <= 0:
        span = 1.0
    normalized = [(v - v_min) / span for v in raw]
    out = _ensure_out(config)
    write_trace_csv(os.path.join(out, "trace.csv"), rows)
    with open(os.path.join(out, "normalized.csv"), "w", newline="\n") as fh:
        fh.write("k,cum_cost,normalized_objective\n")
        for row, v in zip(rows, normalized):
            fh.write("%d,%s,%s\n" % (row.k, format_float(row.cum_cost),
                                     format_float(v)))
    if ledger is not None:
        ledger.write_csv(os.path.join(out, "ledger.csv"))
    resolved = config.as_dict()
    resolved.update({
        "derived_eta": {"slope": params.eta[0], "intercept": params.eta[1]},
        "theta": {"slope": params.theta[0], "intercept": params.theta[1]},
        "derived_tau": params.tau,
        "derived_rho": params.rho,
        "derived_lam": plan.lam,
        "penalty_A": plan.A,
        "penalty_A1": plan.A1,
        "rates_expanded": rates,
        "costs_expanded": costs,
        "N_adjusted": schedule.N,
        "T_inner": T,
        "D_X": D_X,
        "M_lifted": problem.M,
        "m_agents": topology.m,
        "S_blocks": topology.S,
    })
    if warm_info is not None:
        resolved["warm_start"] = warm_info
    _write_json(os.path.join(out, "resolved_config.json"), resolved)
    summary = {
        "experiment": config.experiment,
        "final_normalized": normalized[-1],
        "final_raw": raw[-1],
        "objective_at_zero": F0,
        "observed_min": v_min,
        "final_consensus_violation": rows[-1].consensus_violation,
        "k_final": rows[-1].k,
    }
    if ledger is not None:
        summary["total_messages"] = ledger.total_messages
        summary["total_payload"] = ledger.total_payload
        summary["cum_cost"] = ledger.cum_cost
        summary["amortized_cost"] = amortized_cost(cost_model, topology,
                                                   schedule)
        summary["rounds"] = ledger.rounds
    if not config.strict:
        summary["wall_seconds"] = time.perf_counter() - started
    _write_json(os.path.join(out, "summary.json"), summary)
    summary["trace_rows"] = rows
    summary["normalized"] = normalized
    summary["ks"] = [row.k for row in rows]
    if ledger is not None:
        summary["ledger"] = ledger
    return summary


def svm_run(config):
    """Distributed hinge-loss run over a consensus topology.

    Data comes from a LIBSVM file or the synthetic generator, is split
    into shared-plus-local shards by gamma, and solved through the
    simulated agents. Traces are written raw and normalized (objective
    at zero maps to 1, the observed minimum to 0).
    """
    started = time.perf_counter()
    if config.data_file:
        features, labels = libsvm_load(config.data_file, config.normalize)
        dbar = features.shape[1]
    else:
        dbar = config.dim
        features, labels = synthetic_svm_data(config.samples, dbar,
                                              config.seed)
    topology = _build_topology(config, dbar)
    per_agent, split_info = svm_split((features, labels), topology.m,
                                      config.gamma, config.seed + 1)
    locals_ = [_agent_objective(f, l, config.mu, dbar)
               for f, l in per_agent]
    if config.similarity == "subtree" or (config.similarity == "auto" and
                                          topology.kind ==
                                          "hierarchical_tree"):
        similarity = SimilarityModel.subtree(topology)
    elif config.similarity == "lipschitz":
        similarity = SimilarityModel.lipschitz(topology.m,
                                               1.0 + _BALL_RADIUS * config.mu)
    else:
        similarity = SimilarityModel.data_overlap(topology.m, config.gamma)
    if config.penalty_mode == "type1":
        plan = _type1_plan(topology, config.xi, config.type1_scale)
    else:
        plan = make_penalties(topology, similarity, config.xi,
                              mode=config.penalty_mode)
    M_f = 2.0 * (1.0 + _BALL_RADIUS * config.mu)
    summary = _execute_lifted(config, topology, locals_, plan, M_f,
                              similarity, started)
    summary["split"] = split_info
    return summary


def custom_run(config):
    """Quadratic agents on a topology file: a minimal lifted experiment."""
    started = time.perf_counter()
    if config.topology != "file" or not config.topology_file:
        raise ValueError("the custom experiment needs topology=file and a "
                         "topology_file")
    dbar = config.dim
    topology = Topology.from_tree_file(config.topology_file, dbar)
    mu = config.mu if config.mu > 0 else 1.0
    config.update({"mu": mu})
    rng = np.random.default_rng(config.seed)
    centers = 0.5 * rng.standard_normal((topology.m, dbar))
    locals_ = [quadratic_objective(centers[v], mu)[0]
               for v in range(topology.m)]
    M_f = mu * 2.0 * _BALL_RADIUS
    similarity = SimilarityModel.lipschitz(topology.m, M_f / 2.0)
    plan = make_penalties(topology, similarity, config.xi,
                          mode="ccv" if config.penalty_mode == "type1"
                          else config.penalty_mode)
    return _execute_lifted(config, topology, locals_, plan, M_f, similarity,
                           started)


# ---------------------------------------------------------------------------
# selftest


def selftest_run(config):
    """Fast consistency checks; returns pass/fail per check."""
    checks = {}
    inst = lp_generate(12, 24, 6, config.seed)
    problem, eta = build_lp_problem(inst)
    sched = RateSchedule([1] * 6, 50)
    params = mt_params(problem, eta, np.full(6, 1.0 / 6.0))
    mt = run(problem, sched, params)
    base = baseline_pdhg(problem, eta, params.tau, 50)
    diff = np.linalg.norm(mt.state.hist_X(50) - base.Z.X)
    checks["reduction_to_pdhg"] = bool(diff <= 1e-8)

    topo = Topology.balanced_tree(2, 2, 2)
    rng = np.random.default_rng(config.seed)
    locals_ = []
    for _ in range(topo.m):
        feats = rng.standard_normal((3, 2))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        locals_.append(hinge_ridge_objective(
            feats, np.where(rng.random(3) < 0.5, -1.0, 1.0), 0.0))
    plan = make_penalties(topo, SimilarityModel.subtree(topo), 1.0, "ccv")
    prob = lift_problem(locals_, topo, plan,
                        Ball(_BALL_RADIUS, dimension=2), M_f=2.0)
    sched = RateSchedule([1, 2, 2], 7)
    try:
        simulate(prob, topo, sched,
                 preset_mt(prob, sched, D_X=float(prob.d)),
                 CostModel(np.ones(topo.S)), inner=InnerConfig(2),
                 audit=True)
        checks["simulated_equals_monolithic"] = True
    except RuntimeError:
        checks["simulated_equals_monolithic"] = False

    cm = CostModel([6.0] * 31)
    tree31 = Topology.balanced_tree(5, 3, 1)
    depths = tree31.block_depths()
    rates31 = [[1, 2, 3][depth] for depth in depths]
    ac = amortized_cost(cm, tree31, RateSchedule(rates31, 5))
    checks["amortized_cost_example"] = bool(ac == 71.0)

    passed = all(checks.values())
    for name in sorted(checks):
        print("selftest: %s ... %s" % (name, "ok" if checks[name]
                                       else "FAILED"))
    summary = {"experiment": "selftest", "checks": checks, "passed": passed}
    if config.out:
        _ensure_out(config)
        _write_json(os.path.join(config.out, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mtpdhg",
        description="Multi-timescale primal-dual experiment drivers")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in ("lp", "svm", "custom", "selftest"):
        p = sub.add_parser(command)
        p.add_argument("--config", help="key=value configuration file")
        for name, _, _ in RunConfig._SCHEMA:
            if name == "experiment":
                continue
            p.add_argument("--" + name.replace("_", "-"),
                           dest=name, default=None, metavar="V")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    config = RunConfig()
    if args.config:
        config.update_from_file(args.config)
    overrides = {name: value for name, value in vars(args).items()
                 if name not in ("command", "config") and value is not None}
    config.update(overrides)
    config.update({"experiment": args.command})
    runner = {"lp": lp_run, "svm": svm_run, "custom": custom_run,
              "selftest": selftest_run}[args.command]
    summary = runner(config)
    if args.command == "selftest":
        return 0 if summary["passed"] else 1
    print("wrote %s" % config.out)
    for key in ("final_kkt", "final_normalized", "iterations_to_threshold",
                "cum_cost"):
        if key in summary and summary[key] is not None:
            print("%s = %s" % (key, summary[key]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
