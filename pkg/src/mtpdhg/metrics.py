"""Performance measures for primal-dual runs.

The central quantity is the one-sided gap at a fixed comparator: the
dual variable is maximized out in closed form (the penalties are norm
balls, so the sup is a support function), leaving
[F(X) + sum_s lam_s ||K_s X - u_s||] - [F(Xhat) + sum_s <K_s Xhat - u_s,
y_s>]. Equality-constrained blocks would make that sup infinite off the
constraint set, so their violation is reported in a separate column to
keep traces plottable.
"""

import math

import numpy as np

from .consensus import projector_apply
from .problem import primal_value

CHAR_GAP_TOL = 1e-10


class MetricRow(object):
    """One trace record with a fixed column order for CSV export."""

    def __init__(self, k, primal_value, gap_sup=math.nan, kkt=math.nan,
                 consensus_violation=math.nan, char_violation=0.0,
                 cum_cost=0.0, rounds=()):
        self.k = int(k)
        self.primal_value = float(primal_value)
        self.gap_sup = float(gap_sup)
        self.kkt = float(kkt)
        self.consensus_violation = float(consensus_violation)
        self.char_violation = float(char_violation)
        self.cum_cost = float(cum_cost)
        self.rounds = [int(r) for r in rounds]

    def columns(self):
        return (["k", "primal_value", "gap_sup", "kkt",
                 "consensus_violation", "char_violation", "cum_cost"]
                + ["rounds_%d" % s for s in range(len(self.rounds))])

    def values(self):
        head = [str(self.k)]
        head += [format_float(v) for v in
                 (self.primal_value, self.gap_sup, self.kkt,
                  self.consensus_violation, self.char_violation,
                  self.cum_cost)]
        head += [str(r) for r in self.rounds]
        return head

    def get(self, column):
        if column.startswith("rounds_"):
            return self.rounds[int(column.split("_", 1)[1])]
        return getattr(self, column)


def format_float(x):
    """Shortest round-trippable decimal form, locale independent."""
    return "%.17g" % float(x)


def write_trace_csv(path, rows):
    """Write MetricRows (or plain dicts sharing the schema) to CSV."""
    if not rows:
        raise ValueError("refusing to write an empty trace")
    first = rows[0]
    columns = first.columns() if isinstance(first, MetricRow) \
        else list(first.keys())
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if isinstance(row, MetricRow):
                fh.write(",".join(row.values()) + "\n")
            else:
                cells = []
                for c in columns:
                    v = row[c]
                    cells.append(str(v) if isinstance(v, int)
                                 else format_float(v))
                fh.write(",".join(cells) + "\n")


def _comparator_side(problem, X_hat, Y):
    val = problem.F(X_hat)[0]
    for b, y in zip(problem.blocks, Y):
        val += float((b.apply(X_hat) - b.offset) @ y)
    return val


def gap_sup_y(problem, Z, X_hat):
    """Gap at (Z.X, Z.Y) against comparator X_hat after maximizing the
    comparator dual in closed form.

    Returns +inf when an equality-penalty block is violated at Z.X; use
    ``gap_components`` for a plottable split.
    """
    X_hat = np.asarray(X_hat, dtype=float).reshape(-1)
    if not problem.primal_domain.contains(X_hat, tol=1e-9):
        raise ValueError("comparator X_hat outside the primal domain")
    return primal_value(problem, Z.X) - _comparator_side(problem, X_hat,
                                                         Z.Y)


def gap_components(problem, Z, X_hat):
    """(finite gap part, equality violation norm) at comparator X_hat.

    The finite part treats equality-penalty blocks as exactly feasible;
    the second output reports their aggregate residual norm so traces
    can show both trends.
    """
    X_hat = np.asarray(X_hat, dtype=float).reshape(-1)
    if not problem.primal_domain.contains(X_hat, tol=1e-9):
        raise ValueError("comparator X_hat outside the primal domain")
    finite = problem.F(Z.X)[0]
    violation = 0.0
    for b in problem.blocks:
        r = np.linalg.norm(b.residual(Z.X))
        if b.penalty == "scaled_norm":
            finite += b.lam * r
        else:
            violation += r**2
    violation = math.sqrt(violation)
    finite -= _comparator_side(problem, X_hat, Z.Y)
    return finite, violation


def kkt_residual(A, b, c, X, Y):
    """Aggregate optimality residual of the equality-form linear program
    min c^T X subject to A X = b, X >= 0.

    The scalar duality-gap term enters unsquared:
    (||AX - b||^2 + ||[A^T Y - c]_+||^2 + [c^T X - b^T Y]_+)^(1/2).
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    primal = A @ X - b
    dual = np.maximum(A.T @ Y - c, 0.0)
    gap = max(float(c @ X - b @ Y), 0.0)
    return math.sqrt(float(primal @ primal) + float(dual @ dual) + gap)


def eps_delta_check(topology, problem, X, F_star_ref, xi=None):
    """Observed suboptimality and consensus violation of a lifted point.

    Returns (F(X) - F_star_ref, ||(I - Pi) X||, F(Pi X) - F_star_ref);
    the third entry supports projected-penalty reporting, where the
    averaged point is exactly feasible. ``xi`` is carried for the
    caller's bookkeeping only.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    eps = problem.F(X)[0] - F_star_ref
    deviation = projector_apply(topology, X)
    delta = float(np.linalg.norm(deviation))
    projected = X - deviation
    eps_projected = problem.F(projected)[0] - F_star_ref
    return eps, delta, eps_projected


def rate_fit(trace, column):
    """Log-log slope of a trace column over its last half.

    Non-positive values (and k <= 0 rows) are dropped after halving; at
    least 5 points must survive.
    """
    if len(trace) < 20:
        raise ValueError("rate fit needs at least 20 trace rows")
    tail = trace[len(trace) // 2:]
    ks, vs = [], []
    for row in tail:
        if isinstance(row, dict):
            k, v = row["k"], row[column]
        else:
            k, v = row.k, row.get(column)
        if k > 0 and v > 0 and math.isfinite(v):
            ks.append(float(k))
            vs.append(float(v))
    if len(ks) < 5:
        raise ValueError("rate fit has only %d usable points" % len(ks))
    lk = np.log(np.asarray(ks))
    lv = np.log(np.asarray(vs))
    slope = np.polyfit(lk, lv, 1)[0]
    return float(slope)
