"""Consensus lifting for distributed optimization over agent networks.

Agents hold local copies x_v of the decision variable; agreement is
enforced through linear operators K whose kernel is exactly the
consensus subspace. Three operator families are supported: the average
deviation I - Pi (a single dual block), one block per row of I - W for a
doubly stochastic mixing matrix, and the hierarchical family in which
every internal tree node measures how the mean over each child subtree
deviates from the mean over its own subtree.

Penalty levels on the dual blocks come from similarity constants a_s
bounding how far projected subgradients can disagree across agents at
consensus points; smaller constants mean more alike local objectives
and weaker required coupling.
"""

import math

import numpy as np
import scipy.sparse as sp

from .geometry import BregmanGeometry, ProductDomain
from .problem import DualBlock, SaddleProblem
from .sliding import SlidingSchedule, gradient_slide

_RANK_TOL = 1e-10
_DENSE_SVD_LIMIT = 2000
_ORTHO_TOL = 1e-8


def sigma_min_plus(M, max_dim=_DENSE_SVD_LIMIT):
    """Smallest nonzero singular value of a matrix.

    Dense SVD up to ``max_dim``; larger operators are rejected here
    because the generic problem needs kernel knowledge (the topology
    methods use closed-form Gram spectra instead).
    """
    if sp.issparse(M):
        if min(M.shape) > max_dim:
            raise ValueError("operator too large for dense SVD; use the "
                             "topology closed forms")
        M = M.toarray()
    M = np.asarray(M, dtype=float)
    if min(M.shape) > max_dim:
        raise ValueError("operator too large for dense SVD; use the "
                         "topology closed forms")
    svals = np.linalg.svd(M, compute_uv=False)
    top = svals.max(initial=0.0)
    if top == 0.0:
        raise ValueError("zero operator has no nonzero singular value")
    keep = svals[svals > _RANK_TOL * top]
    return float(keep.min())


def _parse_tree_lines(lines):
    parent = {}
    kinds = {}
    for ln, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ValueError("line %d: expected 'node_id parent_id kind'"
                             % ln)
        try:
            node, par = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError("line %d: node ids must be integers" % ln)
        kind = parts[2]
        if kind not in ("dual", "primal"):
            raise ValueError("line %d: kind must be 'dual' or 'primal', "
                             "got %r" % (ln, kind))
        if node in parent:
            raise ValueError("line %d: duplicate node %d" % (ln, node))
        parent[node] = par
        kinds[node] = kind
    return parent, kinds


class Topology(object):
    """Communication structure plus its consensus operators.

    Build through one of the classmethods; instances are immutable after
    construction. ``base_blocks`` holds the operators in the m-agent leaf
    space; the lifted operators are Kronecker products with the identity
    on the per-agent dimension.

    Parameters are not taken directly; use ``average_deviation``,
    ``doubly_stochastic``, ``hierarchical_tree``, ``balanced_tree`` or
    ``from_tree_file``.
    """

    def __init__(self, kind, m, dbar, base_blocks, child_weights=None,
                 tree=None):
        self.kind = kind
        self.m = int(m)
        self.dbar = int(dbar)
        if self.m < 2:
            raise ValueError("need at least two agents")
        if self.dbar < 1:
            raise ValueError("per-agent dimension must be positive")
        self.base_blocks = [sp.csr_matrix(B) for B in base_blocks]
        # per block, |Des(child)| weights backing the projector identity
        self.child_weights = child_weights
        self.tree = tree
        self._norm_cache = {}

    @property
    def S(self):
        return len(self.base_blocks)

    @property
    def lifted_dim(self):
        return self.m * self.dbar

    @classmethod
    def average_deviation(cls, m, dbar):
        """Single block K = I - Pi in the leaf space."""
        base = np.eye(m) - np.full((m, m), 1.0 / m)
        return cls("average_deviation", m, dbar, [base])

    @classmethod
    def doubly_stochastic(cls, W, dbar):
        """One block per row of I - W; W must be doubly stochastic and
        connected (one-dimensional kernel of I - W)."""
        W = W.toarray() if sp.issparse(W) else np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("W must be square")
        m = W.shape[0]
        ones = np.ones(m)
        if np.max(np.abs(W @ ones - ones)) > 1e-12:
            raise ValueError("W row sums deviate from 1")
        if np.max(np.abs(ones @ W - ones)) > 1e-12:
            raise ValueError("W column sums deviate from 1")
        L = np.eye(m) - W
        svals = np.linalg.svd(L, compute_uv=False)
        svals = np.sort(svals)
        if svals[1] <= _RANK_TOL * max(1.0, svals[-1]):
            raise ValueError("I - W has a kernel beyond the consensus "
                             "direction; the mixing graph is disconnected")
        blocks = [L[i:i + 1, :] for i in range(m)]
        return cls("doubly_stochastic", m, dbar, blocks)

    @classmethod
    def hierarchical_tree(cls, parent, kinds, dbar):
        """Tree from ``parent`` (node -> parent id, root -> -1) and
        ``kinds`` (node -> 'dual' or 'primal')."""
        nodes = sorted(parent)
        roots = [v for v in nodes if parent[v] == -1]
        if len(roots) != 1:
            raise ValueError("tree needs exactly one root, found %d"
                             % len(roots))
        root = roots[0]
        children = {v: [] for v in nodes}
        for v in nodes:
            p = parent[v]
            if v == root:
                continue
            if p not in children:
                raise ValueError("node %d references missing parent %d"
                                 % (v, p))
            children[p].append(v)
        for v in nodes:
            children[v].sort()
        # reject cycles / disconnected parts by walking down from the root
        seen = set()
        stack = [root]
        while stack:
            v = stack.pop()
            if v in seen:
                raise ValueError("tree contains a cycle at node %d" % v)
            seen.add(v)
            stack.extend(children[v])
        if seen != set(nodes):
            raise ValueError("tree is disconnected")
        leaves = [v for v in nodes if not children[v]]
        internal = [v for v in nodes if children[v]]
        for v in leaves:
            if kinds[v] != "primal":
                raise ValueError("leaf node %d must have kind 'primal'" % v)
        for v in internal:
            if kinds[v] != "dual":
                raise ValueError("internal node %d must have kind 'dual'" % v)
            if len(children[v]) < 2:
                raise ValueError("internal node %d has fewer than two "
                                 "children" % v)
        m = len(leaves)
        agent_of = {v: i for i, v in enumerate(leaves)}
        des = {}

        def collect(v):
            if not children[v]:
                des[v] = [agent_of[v]]
            else:
                acc = []
                for c in children[v]:
                    collect(c)
                    acc.extend(des[c])
                des[v] = sorted(acc)

        collect(root)
        base_blocks = []
        child_weights = []
        for s in internal:
            chi = children[s]
            B = np.zeros((len(chi), m))
            for i, c in enumerate(chi):
                B[i, des[c]] += 1.0 / len(des[c])
                B[i, des[s]] -= 1.0 / len(des[s])
            base_blocks.append(B)
            child_weights.append(np.array([len(des[c]) for c in chi],
                                          dtype=float))
        tree = {"root": root, "parent": dict(parent), "children": children,
                "leaves": leaves, "internal": internal, "des": des,
                "agent_of": agent_of}
        return cls("hierarchical_tree", m, dbar, base_blocks,
                   child_weights=child_weights, tree=tree)

    @classmethod
    def balanced_tree(cls, arity, depth, dbar):
        """Complete ``arity``-ary tree with ``depth`` edge layers; the
        arity**depth leaves are the agents, everything above is dual."""
        if arity < 2 or depth < 1:
            raise ValueError("need arity >= 2 and depth >= 1")
        parent = {0: -1}
        kinds = {}
        level = [0]
        next_id = 1
        for lev in range(depth):
            nxt = []
            for v in level:
                kinds[v] = "dual"
                for _ in range(arity):
                    parent[next_id] = v
                    nxt.append(next_id)
                    next_id += 1
            level = nxt
        for v in level:
            kinds[v] = "primal"
        return cls.hierarchical_tree(parent, kinds, dbar)

    @classmethod
    def from_tree_file(cls, path, dbar):
        with open(path, "r") as fh:
            parent, kinds = _parse_tree_lines(fh)
        if not parent:
            raise ValueError("tree file %s has no nodes" % path)
        return cls.hierarchical_tree(parent, kinds, dbar)

    def block_operator(self, s):
        """Lifted operator K_s = base_s kron I_dbar as CSR."""
        return sp.kron(self.base_blocks[s], sp.identity(self.dbar),
                       format="csr")

    def block_operators(self):
        return [self.block_operator(s) for s in range(self.S)]

    def stacked_base(self):
        return sp.vstack([sp.csr_matrix(B) for B in self.base_blocks],
                         format="csr")

    def _gram(self, s):
        # closed form for trees: diag(1/|Des(child)|) - (1/|Des(s)|) 11^T
        w = self.child_weights[s]
        total = w.sum()
        return np.diag(1.0 / w) - np.full((len(w), len(w)), 1.0 / total)

    def _block_spectrum(self, s):
        if s in self._norm_cache:
            return self._norm_cache[s]
        if self.kind == "hierarchical_tree":
            eigs = np.linalg.eigvalsh(self._gram(s))
            top = eigs.max(initial=0.0)
            pos = eigs[eigs > _RANK_TOL * max(1.0, top)]
            out = (math.sqrt(float(pos.min())), math.sqrt(float(top)))
        else:
            B = self.base_blocks[s].toarray()
            svals = np.linalg.svd(B, compute_uv=False)
            top = svals.max(initial=0.0)
            pos = svals[svals > _RANK_TOL * top]
            out = (float(pos.min()), float(top))
        self._norm_cache[s] = out
        return out

    def sigma_plus(self, s):
        """Smallest nonzero singular value of K_s."""
        return self._block_spectrum(s)[0]

    def block_norm(self, s):
        """Largest singular value of K_s."""
        return self._block_spectrum(s)[1]

    def sigma_plus_stacked(self):
        """Smallest nonzero singular value of the stacked operator K."""
        if self.kind == "hierarchical_tree":
            # K K^T is block diagonal (the blocks are orthogonal), so the
            # stacked spectrum is the union of the per-block spectra
            return min(self.sigma_plus(s) for s in range(self.S))
        return sigma_min_plus(self.stacked_base())

    def agent_slice(self, v):
        return slice(v * self.dbar, (v + 1) * self.dbar)

    def split(self, X):
        return np.asarray(X, dtype=float).reshape(self.m, self.dbar)

    def consensus_mean(self, X):
        return self.split(X).mean(axis=0)

    def block_depths(self):
        """Depth of each block's tree node, root first at depth 0.

        Lets layered cost models assign one value per tree level.
        """
        if self.kind != "hierarchical_tree":
            raise ValueError("block depths are defined for hierarchical "
                             "trees only")
        parent = self.tree["parent"]
        depths = []
        for node in self.tree["internal"]:
            depth = 0
            while parent[node] != -1:
                node = parent[node]
                depth += 1
            depths.append(depth)
        return depths


def projector_apply(topology, X, s=None):
    """Apply (I - Pi) for s = None, or the block projector Pi_s.

    Tree blocks use Pi_s = K_s^T diag(|Des(child)|) K_s (the
    pseudo-inverse of K_s K_s^T in closed form), so no dense projector is
    ever materialized.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    if X.shape[0] != topology.lifted_dim:
        raise ValueError("X has dimension %d, expected %d"
                         % (X.shape[0], topology.lifted_dim))
    if s is None:
        mean = topology.consensus_mean(X)
        return (topology.split(X) - mean).reshape(-1)
    K = topology.block_operator(s)
    img = K @ X
    if topology.kind == "hierarchical_tree":
        weights = np.repeat(topology.child_weights[s], topology.dbar)
        return K.T @ (weights * img)
    if topology.kind == "average_deviation":
        # K itself is the orthogonal projector
        return img
    # single-row blocks: Pi_s = K_s^T K_s / ||K_s||^2
    nrm2 = topology.block_norm(s) ** 2
    return K.T @ (img / nrm2)


def build_hierarchical_K(topology):
    """Lifted CSR operators K_s of a hierarchical tree, one per dual node."""
    if topology.kind != "hierarchical_tree":
        raise ValueError("expected a hierarchical tree topology")
    return topology.block_operators()


def orthogonality_defect(topology):
    """Max entrywise |K_s K_{s'}^T| over distinct block pairs."""
    worst = 0.0
    bases = [B.toarray() for B in topology.base_blocks]
    for i in range(len(bases)):
        for j in range(i + 1, len(bases)):
            worst = max(worst, float(np.max(np.abs(bases[i] @ bases[j].T))))
    return worst


class SimilarityModel(object):
    """Bounds a_s on projected subgradient variation at consensus points.

    kind is 'global' (one constant for the stacked operator) or
    'per_block'; the derivation records where the constants came from.
    """

    def __init__(self, kind, values, derivation="user"):
        if kind not in ("global", "per_block"):
            raise ValueError("unknown similarity kind %r" % (kind,))
        self.kind = kind
        self.derivation = derivation
        if kind == "global":
            self.a_hat_1 = float(values)
            if self.a_hat_1 < 0:
                raise ValueError("similarity constants must be nonnegative")
            self.a_s = None
        else:
            self.a_s = np.asarray(values, dtype=float).reshape(-1)
            if np.any(self.a_s < 0):
                raise ValueError("similarity constants must be nonnegative")
            self.a_hat_1 = None

    @classmethod
    def lipschitz(cls, m, M_f):
        """Crude bound from per-agent Lipschitz constants: 2 sqrt(m) M_f."""
        return cls("global", 2.0 * math.sqrt(m) * M_f,
                   derivation="lipschitz")

    @classmethod
    def data_overlap(cls, m, gamma):
        """Shared-data bound 2 gamma sqrt(m) for overlap fraction gamma."""
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("overlap fraction must lie in [0, 1]")
        return cls("global", 2.0 * gamma * math.sqrt(m),
                   derivation="data_overlap")

    @classmethod
    def subtree(cls, topology, scale=2.0):
        """Per-block constants scale * sqrt(|Des(s)|) for tree blocks."""
        if topology.kind != "hierarchical_tree":
            raise ValueError("subtree similarity needs a hierarchical tree")
        sizes = [len(topology.tree["des"][s])
                 for s in topology.tree["internal"]]
        return cls("per_block", [scale * math.sqrt(n) for n in sizes],
                   derivation="subtree")

    def aggregate(self):
        """Single constant usable in the global formulas."""
        if self.kind == "global":
            return self.a_hat_1
        # conservative sum; without an orthogonality certificate the
        # root-sum-square aggregation is not justified
        return float(np.sum(self.a_s))

    def quadrature(self):
        """Root sum of squares, valid for orthogonal families."""
        if self.kind == "global":
            return self.a_hat_1
        return float(np.sqrt(np.sum(self.a_s**2)))


class PenaltyPlan(object):
    """Resolved dual penalty levels plus the matching solver constants.

    Attributes
    ----------
    lam : ndarray
        Per-block norm-penalty levels.
    suggested_rho : ndarray
        Dual weights matching the convergence statements.
    A : float
        The similarity-weighted operator constant entering the N bound.
    A1 : float
        The aggregate similarity constant used by the accelerated bound.
    kind_used : str
        'per_block' or 'global'; may fall back to 'global' when the
        blocks fail the orthogonality check.
    """

    def __init__(self, lam, suggested_rho, A, A1, xi, mode, kind_used,
                 sigma_stacked, sigma_blocks, norms, a_values):
        self.lam = np.asarray(lam, dtype=float)
        self.suggested_rho = np.asarray(suggested_rho, dtype=float)
        self.A = float(A)
        self.A1 = float(A1)
        self.xi = float(xi)
        self.mode = mode
        self.kind_used = kind_used
        self.sigma_stacked = float(sigma_stacked)
        self.sigma_blocks = np.asarray(sigma_blocks, dtype=float)
        self.norms = np.asarray(norms, dtype=float)
        self.a_values = a_values


def make_penalties(topology, similarity, xi, mode="ccv"):
    """Dual penalty levels from similarity constants.

    Per-block mode (orthogonal families only): lam_s = (xi + a_s) /
    sigma_plus(K_s) for 'ccv' or (1 + xi) a_s / sigma_plus(K_s) for
    'prj'. The global mode replaces a_s by the single constant and
    sigma_plus(K_s) by the stacked sigma_plus(K). Returns a PenaltyPlan
    carrying the weights rho and the constant A of the convergence
    statements.
    """
    if xi <= 0:
        raise ValueError("xi must be positive")
    if mode not in ("ccv", "prj"):
        raise ValueError("mode must be 'ccv' or 'prj'")
    S = topology.S
    norms = np.array([topology.block_norm(s) for s in range(S)])
    sigma_blocks = np.array([topology.sigma_plus(s) for s in range(S)])
    sigma_stacked = topology.sigma_plus_stacked()
    kind_used = similarity.kind
    if kind_used == "per_block":
        if similarity.a_s.shape[0] != S:
            raise ValueError("need one similarity constant per block")
        if topology.kind != "average_deviation" and topology.S > 1:
            defect = orthogonality_defect(topology)
            if defect > _ORTHO_TOL * max(1.0, float(np.max(norms)) ** 2):
                kind_used = "global"
    if kind_used == "per_block":
        a = similarity.a_s
        if mode == "prj":
            if np.any(a <= 0):
                raise ValueError("projected penalties need strictly positive "
                                 "similarity constants; use ccv or the "
                                 "global model")
            lam = (1.0 + xi) * a / sigma_blocks
            rho = a / sigma_blocks
            A = (1.0 + xi) * float(np.sum(a * norms / sigma_blocks))
        else:
            lam = (xi + a) / sigma_blocks
            rho = (xi + a) / sigma_blocks
            A = float(np.sum((xi + a) * norms / sigma_blocks))
        A1 = similarity.quadrature()
        a_values = a.copy()
    else:
        a_hat = similarity.aggregate()
        if mode == "prj":
            if a_hat <= 0:
                raise ValueError("projected penalties need strictly positive "
                                 "similarity constants; use ccv or the "
                                 "global model")
            lam_value = (1.0 + xi) * a_hat / sigma_stacked
            A = (1.0 + xi) * float(np.sum(norms)) * a_hat / sigma_stacked
        else:
            lam_value = (xi + a_hat) / sigma_stacked
            A = float(np.sum(norms)) * (xi + a_hat) / sigma_stacked
        lam = np.full(S, lam_value)
        rho = norms.copy()
        A1 = a_hat
        a_values = a_hat
    rho = rho / rho.sum()
    return PenaltyPlan(lam, rho, A, A1, xi, mode, kind_used, sigma_stacked,
                       sigma_blocks, norms, a_values)


def accelerated_A(plan, schedule):
    """Operator constant of the accelerated N bound for a rate schedule."""
    r1, r2, r3 = schedule.r_bar, schedule.r2_bar, schedule.r3_bar
    lead = math.sqrt(r3 / r1**3 + 7.0 * (r2 / r1**2) ** 2)
    return lead * plan.A1 + plan.A


def lift_problem(local_objectives, topology, penalties, agent_domain, M_f,
                 mu_f=0.0):
    """Stack m local objectives into one saddle problem with consensus
    dual blocks.

    Parameters
    ----------
    local_objectives : list of callables
        Per-agent x -> (value, subgradient) oracles on the agent space.
    topology : Topology
    penalties : PenaltyPlan
    agent_domain : ConvexDomain
        Common per-agent feasible set.
    M_f : float
        Per-agent subgradient-variation constant; the lifted constant is
        sqrt(m) * M_f.
    mu_f : float, optional
        Per-agent strong convexity, inherited unchanged.
    """
    m, dbar = topology.m, topology.dbar
    if len(local_objectives) != m:
        raise ValueError("need %d local objectives, got %d"
                         % (m, len(local_objectives)))
    if agent_domain.dimension != dbar:
        raise ValueError("agent domain dimension %d does not match dbar %d"
                         % (agent_domain.dimension, dbar))
    domain = ProductDomain([agent_domain] * m)

    def F_oracle(X):
        X = np.asarray(X, dtype=float).reshape(-1)
        val = 0.0
        grad = np.empty(m * dbar)
        for v in range(m):
            sl = topology.agent_slice(v)
            fv, gv = local_objectives[v](X[sl])
            val += fv
            grad[sl] = gv
        return val, grad

    blocks = []
    for s in range(topology.S):
        blocks.append(DualBlock(topology.block_operator(s),
                                penalty="scaled_norm",
                                lam=float(penalties.lam[s]),
                                kappa_tilde=topology.block_norm(s)))
    prob = SaddleProblem(domain, blocks, F_oracle=F_oracle, mu=mu_f,
                         M=math.sqrt(m) * M_f)
    # kept so the simulated multi-agent runner can hand each agent its
    # own oracle instead of the stacked one
    prob.local_objectives = list(local_objectives)
    return prob


def warm_start(local_objectives, agent_domain, topology, mu_f, M_f,
               epsilon_0, D_under_x, x_under_0=None):
    """Independent per-agent solves that land near the lifted optimum.

    Each agent minimizes its own objective to accuracy epsilon_0 / m by
    gradient sliding with the strongly convex weights, using
    T = ceil(8 C M_f^2 m / (epsilon_0 mu_f)) inner steps and a single
    center weight eta = (epsilon_0 / 2) / (m D_under_x). Returns the
    stacked averaged iterates and a dict with the resolved budget.
    """
    if mu_f <= 0:
        raise ValueError("warm start needs mu_f > 0; use a zero start "
                         "instead")
    if epsilon_0 <= 0 or D_under_x <= 0:
        raise ValueError("epsilon_0 and D_under_x must be positive")
    m, dbar = topology.m, topology.dbar
    if len(local_objectives) != m:
        raise ValueError("need %d local objectives, got %d"
                         % (m, len(local_objectives)))
    geom = BregmanGeometry(dbar)
    C = geom.curvature_bound
    T = int(math.ceil(8.0 * C * M_f**2 * m / (epsilon_0 * mu_f)))
    eta = (epsilon_0 / 2.0) / (m * D_under_x)
    if x_under_0 is None:
        x_under_0 = agent_domain.project(np.zeros(dbar))
    x_under_0 = np.asarray(x_under_0, dtype=float).reshape(-1)
    schedule = SlidingSchedule(T, "strongly_convex", mu=mu_f, eta=eta, C=C)
    X_init = np.empty(m * dbar)
    calls = 0
    for v in range(m):
        res = gradient_slide(local_objectives[v], agent_domain, geom,
                             schedule, [(eta, x_under_0)], np.zeros(dbar),
                             x_under_0)
        X_init[topology.agent_slice(v)] = res.u_hat_T
        calls += res.inner_oracle_calls
    info = {"T_under": T, "eta_under": eta, "oracle_calls": calls}
    return X_init, info


def warm_start_epsilon(similarity, mu_f):
    """Target accuracy a_tilde^2 / mu matching the distance guarantee."""
    if mu_f <= 0:
        raise ValueError("needs mu_f > 0")
    a_tilde = similarity.quadrature()
    if a_tilde <= 0:
        raise ValueError("similarity constants are all zero; warm start "
                         "target undefined")
    return a_tilde**2 / mu_f
