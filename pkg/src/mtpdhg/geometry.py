"""Bregman geometries, convex domains, and the exactly solvable prox steps.

Everything that ships is Euclidean: the only distance generating function
is w(x) = ||x||^2/2, whose Bregman divergence is the squared distance and
whose prox subproblems reduce to projections. The geometry object stays an
explicit argument everywhere so that other mirror maps can be added later
without touching the solver.
"""

import numpy as np

# membership tolerance for projected points; double precision head-room
MEMBERSHIP_TOL = 1e-12


class BregmanGeometry(object):
    """Distance generating function on R^dimension.

    Parameters
    ----------
    dimension : int
        Ambient dimension.
    dgf_kind : str, optional
        Only "euclidean_half_sq" is available: w(x) = ||x||^2/2, strong
        convexity modulus 1, curvature bound C = 1 (the divergence equals
        (C/2)||x - z||^2 exactly).
    """

    def __init__(self, dimension, dgf_kind="euclidean_half_sq"):
        dimension = int(dimension)
        if dimension < 1:
            raise ValueError("dimension must be positive, got %d" % dimension)
        if dgf_kind != "euclidean_half_sq":
            raise ValueError("unknown dgf_kind %r" % (dgf_kind,))
        self.dimension = dimension
        self.dgf_kind = dgf_kind
        self.modulus = 1.0
        self.curvature_bound = 1.0

    def __repr__(self):
        return "BregmanGeometry(%d, %r)" % (self.dimension, self.dgf_kind)


def _as_vector(x, dimension, name):
    if type(x) is np.ndarray and x.ndim == 1 and x.dtype == np.float64:
        if x.shape[0] != dimension:
            raise ValueError("%s has dimension %d, expected %d"
                             % (name, x.shape[0], dimension))
        return x
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dimension:
        raise ValueError(
            "%s has dimension %d, expected %d" % (name, x.shape[0], dimension))
    return x


def divergence(geom, x, z):
    """Bregman divergence D(x, z) generated by the geometry's dgf.

    Parameters
    ----------
    geom : BregmanGeometry
    x, z : array-like
        Points of dimension ``geom.dimension``.

    Returns
    -------
    float
        D(x, z); equals ||x - z||^2/2 for the Euclidean dgf.
    """
    x = _as_vector(x, geom.dimension, "x")
    z = _as_vector(z, geom.dimension, "z")
    d = x - z
    return 0.5 * float(np.dot(d, d))


class ConvexDomain(object):
    """Closed convex set with an exact Euclidean projection."""

    dimension = None

    def project(self, x):
        raise NotImplementedError

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def is_bounded(self):
        raise NotImplementedError

    def minimize_linear(self, g):
        """Minimizer of <g, x> over the set; only defined when bounded."""
        raise ValueError("linear objective unbounded on %r" % (self,))

    def sample(self, rng):
        """Draw a point of the set (used by audits and tests)."""
        raise NotImplementedError


class FreeSpace(ConvexDomain):
    """All of R^dimension."""

    def __init__(self, dimension):
        self.dimension = int(dimension)

    def project(self, x):
        return np.asarray(x, dtype=float).reshape(-1).copy()

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return True

    def is_bounded(self):
        return False

    def sample(self, rng):
        return rng.standard_normal(self.dimension)

    def __repr__(self):
        return "FreeSpace(%d)" % self.dimension


class Ball(ConvexDomain):
    """Euclidean ball of given radius.

    Parameters
    ----------
    radius : float
        Nonnegative radius; zero gives the singleton {center}.
    center : array-like, optional
        Defaults to the origin, in which case ``dimension`` is required.
    dimension : int, optional
    """

    def __init__(self, radius, center=None, dimension=None):
        if radius < 0:
            raise ValueError("radius must be nonnegative, got %r" % (radius,))
        if center is None:
            if dimension is None:
                raise ValueError("Ball needs a center or a dimension")
            center = np.zeros(int(dimension))
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.dimension = self.center.shape[0]
        self.radius = float(radius)

    def project(self, x):
        x = _as_vector(x, self.dimension, "x")
        d = x - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return x.copy()
        if nrm == 0.0:
            return self.center.copy()
        return self.center + d * (self.radius / nrm)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_vector(x, self.dimension, "x")
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def is_bounded(self):
        return True

    def minimize_linear(self, g):
        g = _as_vector(g, self.dimension, "g")
        nrm = np.linalg.norm(g)
        if nrm == 0.0:
            return self.center.copy()
        return self.center - g * (self.radius / nrm)

    def sample(self, rng):
        v = rng.standard_normal(self.dimension)
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            return self.center.copy()
        u = rng.random() ** (1.0 / self.dimension)
        return self.center + v * (self.radius * u / nrm)

    def __repr__(self):
        return "Ball(radius=%g, dim=%d)" % (self.radius, self.dimension)


class Box(ConvexDomain):
    """Axis-aligned box {x : lower <= x <= upper}; infinite bounds allowed."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper in some coordinate")
        self.dimension = self.lower.shape[0]

    def project(self, x):
        x = _as_vector(x, self.dimension, "x")
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_vector(x, self.dimension, "x")
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def is_bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def minimize_linear(self, g):
        if not self.is_bounded():
            return ConvexDomain.minimize_linear(self, g)
        g = _as_vector(g, self.dimension, "g")
        out = np.where(g > 0, self.lower, self.upper)
        # zero coefficients leave the coordinate free; any feasible value works
        return np.where(g == 0, 0.5 * (self.lower + self.upper), out)

    def sample(self, rng):
        lo = np.where(np.isfinite(self.lower), self.lower, -1.0)
        hi = np.where(np.isfinite(self.upper), self.upper, 1.0)
        hi = np.maximum(hi, lo)
        return lo + (hi - lo) * rng.random(self.dimension)

    def __repr__(self):
        return "Box(dim=%d)" % self.dimension


class NonnegativeOrthant(ConvexDomain):
    """The set {x : x >= 0}."""

    def __init__(self, dimension):
        self.dimension = int(dimension)

    def project(self, x):
        x = _as_vector(x, self.dimension, "x")
        return np.maximum(x, 0.0)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = _as_vector(x, self.dimension, "x")
        return bool(np.all(x >= -tol))

    def is_bounded(self):
        return False

    def sample(self, rng):
        return np.abs(rng.standard_normal(self.dimension))

    def __repr__(self):
        return "NonnegativeOrthant(%d)" % self.dimension


class ProductDomain(ConvexDomain):
    """Cartesian product of domains, projected slice by slice.

    Used for lifted problems where each agent has its own copy of the
    per-agent constraint set.
    """

    def __init__(self, parts):
        if not parts:
            raise ValueError("ProductDomain needs at least one part")
        self.parts = list(parts)
        dims = [p.dimension for p in self.parts]
        self.offsets = np.concatenate(([0], np.cumsum(dims)))
        self.dimension = int(self.offsets[-1])

    def _slices(self, x):
        x = _as_vector(x, self.dimension, "x")
        for i, p in enumerate(self.parts):
            yield p, x[self.offsets[i]:self.offsets[i + 1]]

    def project(self, x):
        return np.concatenate([p.project(xs) for p, xs in self._slices(x)])

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return all(p.contains(xs, tol) for p, xs in self._slices(x))

    def is_bounded(self):
        return all(p.is_bounded() for p in self.parts)

    def minimize_linear(self, g):
        return np.concatenate([p.minimize_linear(gs) for p, gs in self._slices(g)])

    def sample(self, rng):
        return np.concatenate([p.sample(rng) for p in self.parts])

    def __repr__(self):
        return "ProductDomain(%d parts, dim=%d)" % (len(self.parts), self.dimension)


def prox_linear(geom, domain, g, centers):
    """Exact minimizer of <g, x> + sum_i w_i D(x, p_i) over the domain.

    This is the building block of every primal step: with the Euclidean
    dgf the minimizer is the projection of (sum_i w_i p_i - g) / sum_i w_i
    onto the domain.

    Parameters
    ----------
    geom : BregmanGeometry
    domain : ConvexDomain
    g : array-like
        Linear term.
    centers : list of (float, array-like)
        Pairs (w_i, p_i) with w_i >= 0 and sum_i w_i > 0.

    Returns
    -------
    ndarray
        The unique minimizer (unique whenever sum_i w_i > 0).
    """
    g = _as_vector(g, geom.dimension, "g")
    acc = np.zeros(geom.dimension)
    buf = np.empty(geom.dimension)
    wsum = 0.0
    for w, p in centers:
        if w < 0:
            raise ValueError("center weights must be nonnegative, got %r" % (w,))
        p = _as_vector(p, geom.dimension, "center point")
        np.multiply(p, w, out=buf)
        acc += buf
        wsum += w
    if wsum <= 0.0:
        if domain.is_bounded():
            return domain.minimize_linear(g)
        raise ValueError("ill-posed prox: zero total center weight on an "
                         "unbounded domain")
    acc -= g
    acc /= wsum
    return domain.project(acc)


def prox_dual(geom, block_domain, g, y_prev, tau):
    """Exact minimizer of <g, y> + tau * D(y, y_prev) over the block domain.

    The dual update of every block reduces to this prox; for a scaled-norm
    penalty the domain is the ball of the penalty level and the result is
    the projection of y_prev - g/tau onto it.

    Parameters
    ----------
    geom : BregmanGeometry
    block_domain : ConvexDomain
        Domain of the conjugate penalty.
    g : array-like
        Linear term.
    y_prev : array-like
        Prox center; must already lie in the block domain.
    tau : float
        Positive step weight (may be infinite, freezing the block).

    Returns
    -------
    ndarray
    """
    if not tau > 0:
        raise ValueError("tau must be positive, got %r" % (tau,))
    g = _as_vector(g, geom.dimension, "g")
    y_prev = _as_vector(y_prev, geom.dimension, "y_prev")
    if not block_domain.contains(y_prev):
        raise ValueError("y_prev left its domain %r; dual invariant broken "
                         "upstream" % (block_domain,))
    return block_domain.project(y_prev - g / tau)
