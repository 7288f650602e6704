"""
Finite probability spaces and the positions (payoffs) living on them.

Also contains the quantile algebra (left quantiles as step functions),
the second-order stochastic dominance test and the comonotonicity predicates.
"""

import logging
import numpy as np
from .shared import DomainError, StructuralError, Tolerances, as_float_array


logger = logging.getLogger(__name__)

__all__ = ["FiniteProbabilitySpace", "Position", "QuantileFunction", "cdf", "left_quantile",
           "quantile_function", "upper_partial_moment", "ssd_dominates", "is_comonotone_pair",
           "conditional_expectation_given", "check_same_space"]


class FiniteProbabilitySpace:
    """
    Atoms 0..d-1 with strictly positive probabilities summing to one.
    A probability vector that is off by at most 1e-6 is normalized and the
    applied correction is kept in `correction`; anything worse is rejected.
    """
    normalization_limit = 1e-6

    def __init__(self, probabilities):
        p = as_float_array(probabilities, "probabilities")
        if len(p) == 0:
            raise DomainError("a probability space needs at least one atom")
        if np.any(p <= 0):
            raise DomainError("atom probabilities must be strictly positive")
        total = p.sum()
        self.correction = 0.0
        if abs(total - 1.0) > Tolerances.probability:
            if abs(total - 1.0) > self.normalization_limit:
                raise DomainError("probabilities sum to {:.12g}, not 1".format(total))
            self.correction = 1.0 - total
            logger.warning("normalizing probabilities (sum was off by %.3g)", self.correction)
            p = p / total
        p.setflags(write=False)
        self.probabilities = p

    @classmethod
    def equiprobable(cls, atom_count):
        if int(atom_count) != atom_count or atom_count < 1:
            raise DomainError("atom count must be a positive integer")
        return cls(np.full(int(atom_count), 1.0 / atom_count))

    @property
    def atom_count(self):
        return len(self.probabilities)

    @property
    def is_equiprobable(self):
        p = self.probabilities
        return bool(np.all(np.abs(p - 1.0 / len(p)) <= Tolerances.probability))

    def position(self, values):
        return Position(values, self)

    def constant(self, value):
        return Position(np.full(self.atom_count, float(value)), self)

    def indicator(self, atoms, scale=1.0):
        values = np.zeros(self.atom_count)
        values[list(atoms)] = scale
        return Position(values, self)

    def probability_of(self, atoms):
        return float(self.probabilities[list(atoms)].sum())

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, FiniteProbabilitySpace):
            return NotImplemented
        return self.atom_count == other.atom_count and bool(np.all(self.probabilities == other.probabilities))

    def __hash__(self):
        return hash(self.probabilities.tobytes())

    def __repr__(self):
        if self.is_equiprobable:
            return "<FiniteProbabilitySpace equiprobable({:d})>".format(self.atom_count)
        return "<FiniteProbabilitySpace d={:d}>".format(self.atom_count)


def check_same_space(*positions):
    first = positions[0].space
    for other in positions[1:]:
        if other.space != first:
            raise StructuralError("positions live on different probability spaces")
    return first


class Position:
    """A real payoff per atom. Immutable; arithmetic returns new positions."""

    # numpy scalars defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, values, space):
        v = as_float_array(values, "position values")
        if len(v) != space.atom_count:
            raise StructuralError("position has {:d} values but the space has {:d} atoms".format(len(v), space.atom_count))
        v = v.copy()
        v.setflags(write=False)
        self.values = v
        self.space = space

    @property
    def probabilities(self):
        return self.space.probabilities

    def _other_values(self, other):
        if isinstance(other, Position):
            check_same_space(self, other)
            return other.values
        return float(other)

    def __add__(self, other):
        return Position(self.values + self._other_values(other), self.space)

    __radd__ = __add__

    def __sub__(self, other):
        return Position(self.values - self._other_values(other), self.space)

    def __rsub__(self, other):
        return Position(self._other_values(other) - self.values, self.space)

    def __mul__(self, factor):
        return Position(self.values * float(factor), self.space)

    __rmul__ = __mul__

    def __truediv__(self, factor):
        return Position(self.values / float(factor), self.space)

    def __neg__(self):
        return Position(-self.values, self.space)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, atom):
        return self.values[atom]

    def mean(self):
        return float(self.probabilities @ self.values)

    def expectation_under(self, q):
        return float(np.asarray(q, dtype=float) @ self.values)

    def ess_inf(self):
        return float(self.values.min())

    def ess_sup(self):
        return float(self.values.max())

    def sup_norm(self):
        return float(np.abs(self.values).max())

    def is_constant(self):
        return bool(np.ptp(self.values) == 0.0)

    def allclose(self, other, atol=1e-9):
        return bool(np.allclose(self.values, self._other_values(other), rtol=0.0, atol=atol))

    def tolist(self):
        return [float(v) for v in self.values]

    def __repr__(self):
        return "Position({})".format(np.array2string(self.values, precision=6, separator=", "))


class QuantileFunction:
    """
    Left-continuous step representation of the left quantile.
    On (breakpoints[k-1], breakpoints[k]] the quantile equals values[k].
    """

    def __init__(self, breakpoints, values):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.breakpoints) != len(self.values) or len(self.values) == 0:
            raise StructuralError("quantile breakpoints and values must have equal, nonzero length")
        if np.any(np.diff(self.breakpoints) <= 0) or np.any(np.diff(self.values) < 0):
            raise StructuralError("quantile steps must be increasing")

    def __call__(self, alpha):
        if not 0.0 < alpha <= 1.0:
            raise DomainError("quantile level must lie in (0, 1]")
        k = int(np.searchsorted(self.breakpoints, alpha - Tolerances.probability, side="left"))
        return float(self.values[min(k, len(self.values) - 1)])

    def jumps(self):
        """(level, size) for each increase of the quantile, located at the level where it happens."""
        return list(zip(self.breakpoints[:-1], np.diff(self.values)))

    def integrate(self, weights_at):
        """Integral of the quantile against dG for a cumulative G given as a callable on [0,1]."""
        edges = np.concatenate(([0.0], self.breakpoints))
        increments = np.array([weights_at(b) for b in edges[1:]]) - np.array([weights_at(a) for a in edges[:-1]])
        return float(increments @ self.values)

    def __repr__(self):
        return "<QuantileFunction {:d} steps>".format(len(self.values))


def quantile_function(x):
    order = np.argsort(x.values, kind="stable")
    sorted_values = x.values[order]
    cumulative = np.cumsum(x.probabilities[order])
    distinct, last = [], []
    for k, value in enumerate(sorted_values):
        if distinct and value == distinct[-1]:
            last[-1] = cumulative[k]
        else:
            distinct.append(value)
            last.append(cumulative[k])
    last[-1] = 1.0
    return QuantileFunction(last, distinct)


def cdf(x, t):
    if not np.isfinite(t):
        raise DomainError("cdf threshold must be finite")
    return float(x.probabilities[x.values <= t].sum())


def left_quantile(x, alpha):
    if not 0.0 < alpha <= 1.0:
        raise DomainError("quantile level {!r} outside (0, 1]".format(alpha))
    return quantile_function(x)(alpha)


def upper_partial_moment(x, thresholds):
    """E[(X - t)+] for a scalar or an array of thresholds."""
    t = np.atleast_1d(np.asarray(thresholds, dtype=float))
    moments = np.clip(x.values[None, :] - t[:, None], 0.0, None) @ x.probabilities
    return moments if np.ndim(thresholds) else float(moments[0])


def ssd_dominates(x, y, tol=None):
    """
    True iff E[f(X)] <= E[f(Y)] for every increasing convex f.
    t -> E[(X-t)+] is piecewise linear with kinks at atom values and constant slope
    below the smallest one, so comparing at the merged atom values is exact.
    """
    check_same_space(x, y)
    thresholds = np.union1d(x.values, y.values)
    if tol is None:
        tol = Tolerances.probability * max(1.0, x.sup_norm(), y.sup_norm())
    return bool(np.all(upper_partial_moment(x, thresholds) <= upper_partial_moment(y, thresholds) + tol))


def is_comonotone_pair(x, y, tol=0.0):
    check_same_space(x, y)
    dx = x.values[:, None] - x.values[None, :]
    dy = y.values[:, None] - y.values[None, :]
    return bool(np.all(dx * dy >= -tol))


def conditional_expectation_given(x, z):
    """E[X | sigma(Z)]: probability-weighted averages of X over the level sets of Z."""
    check_same_space(x, z)
    _, groups = np.unique(z.values, return_inverse=True)
    p = x.probabilities
    averages = np.bincount(groups, weights=p * x.values) / np.bincount(groups, weights=p)
    return Position(averages[groups], x.space)
