"""
Risk measures on a finite probability space.

A RiskMeasureSpec is a tagged, immutable description of one measure
(expected loss, value at risk, expected shortfall, entropic, maximum loss,
distortion, spectral mixture, or a dilation of another measure).
The functions in this module evaluate them and export their convex-dual
objects: penalty terms, dual sets as halfspace systems, subgradient faces,
distortion functions and capacities.

Sign convention: positions are payoffs, so a loss is a negative value and
rho(X) is the capital needed to make X acceptable.
"""

import enum
import logging
from dataclasses import dataclass, field
from itertools import combinations
import numpy as np
from scipy.special import logsumexp, rel_entr
from .shared import DomainError, StructuralError, UnsupportedMeasureError, SizeError, ScenarioError, Tolerances
from .space import Position, quantile_function, left_quantile, check_same_space


logger = logging.getLogger(__name__)

MAXIMUM_LOSS_EPSILON = 1e-9
CORE_ATOM_LIMIT = 20


class MeasureKind(enum.Enum):
    EXPECTED_LOSS = "EL"
    VALUE_AT_RISK = "VaR"
    EXPECTED_SHORTFALL = "ES"
    ENTROPIC = "Entropic"
    MAXIMUM_LOSS = "ML"
    DISTORTION = "Distortion"
    SPECTRAL = "Spectral"
    DILATED = "Dilated"


class DistortionFunction:
    """
    Piecewise linear g on [0,1] with g(0)=0 and g(1)=1, given by its breakpoints.
    Distortions act on the probability of the bad event: a concave g belongs to a
    coherent measure whose dual set is {Q : Q(A) <= g(P(A))}.
    """

    def __init__(self, breakpoints, values):
        b = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        if b.ndim != 1 or b.shape != v.shape or len(b) < 2:
            raise DomainError("distortion needs matching breakpoint and value lists of length >= 2")
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise DomainError("distortion breakpoints must increase from 0 to 1")
        if abs(v[0]) > 1e-12 or abs(v[-1] - 1.0) > 1e-12:
            raise DomainError("distortion must satisfy g(0)=0 and g(1)=1")
        if np.any(np.diff(v) < -1e-12):
            raise DomainError("distortion values must be nondecreasing")
        v = np.maximum.accumulate(np.clip(v, 0.0, 1.0))
        v[0], v[-1] = 0.0, 1.0
        b.setflags(write=False)
        v.setflags(write=False)
        self.breakpoints = b
        self.values = v

    @classmethod
    def identity(cls):
        return cls([0.0, 1.0], [0.0, 1.0])

    @classmethod
    def expected_shortfall(cls, alpha):
        if alpha >= 1.0:
            return cls.identity()
        return cls([0.0, alpha, 1.0], [0.0, 1.0, 1.0])

    @classmethod
    def maximum_loss(cls):
        # the jump of g at 0+ is stored as a steep first piece
        return cls.expected_shortfall(MAXIMUM_LOSS_EPSILON)

    @classmethod
    def minimum(cls, functions):
        """Pointwise minimum; crossings inside a segment become new breakpoints."""
        functions = list(functions)
        grid = np.unique(np.concatenate([g.breakpoints for g in functions]))
        points = [grid]
        for first, second in combinations(functions, 2):
            diff = first(grid) - second(grid)
            for k in np.flatnonzero(diff[:-1] * diff[1:] < 0):
                crossing = grid[k] + (grid[k + 1] - grid[k]) * diff[k] / (diff[k] - diff[k + 1])
                points.append([crossing])
        grid = np.unique(np.concatenate(points))
        values = np.min([g(grid) for g in functions], axis=0)
        return cls._simplified(grid, values)

    @classmethod
    def mixture(cls, weighted):
        weighted = list(weighted)
        grid = np.unique(np.concatenate([g.breakpoints for g, _ in weighted]))
        total = sum(w for _, w in weighted)
        values = sum(w * g(grid) for g, w in weighted) / total
        return cls._simplified(grid, values)

    @classmethod
    def _simplified(cls, grid, values):
        keep = [0]
        for k in range(1, len(grid) - 1):
            left = (values[k] - values[keep[-1]]) / (grid[k] - grid[keep[-1]])
            right = (values[k + 1] - values[k]) / (grid[k + 1] - grid[k])
            if abs(left - right) > 1e-12 * max(1.0, abs(left), abs(right)):
                keep.append(k)
        keep.append(len(grid) - 1)
        return cls(grid[keep], values[keep])

    def __call__(self, t):
        return np.interp(t, self.breakpoints, self.values)

    @property
    def slopes(self):
        return np.diff(self.values) / np.diff(self.breakpoints)

    @property
    def is_concave(self):
        s = self.slopes
        return bool(np.all(np.diff(s) <= 1e-9 * np.maximum(1.0, np.abs(s[:-1]))))

    def dominates_identity(self):
        # g - id is linear between breakpoints
        return bool(np.all(self.values >= self.breakpoints - 1e-12))

    def __eq__(self, other):
        if not isinstance(other, DistortionFunction):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.breakpoints.tobytes(), self.values.tobytes()))

    def __repr__(self):
        pairs = ", ".join("({:.6g}, {:.6g})".format(b, v) for b, v in zip(self.breakpoints, self.values))
        return "DistortionFunction[{:s}]".format(pairs)


@dataclass(frozen=True)
class MeasureProperties:
    convex: bool
    coherent: bool
    positively_homogeneous: bool
    comonotone_additive: bool
    law_invariant: bool
    loaded: bool
    limited: bool
    subadditive: bool
    normalized: bool = True


@dataclass(frozen=True)
class RiskMeasureSpec:
    kind: MeasureKind
    alpha: float = None
    gamma: float = None
    distortion: DistortionFunction = None
    components: tuple = ()
    base: "RiskMeasureSpec" = None
    name: str = field(default=None, compare=False)

    def __post_init__(self):
        kind = self.kind
        if kind is MeasureKind.VALUE_AT_RISK:
            if self.alpha is None or not 0.0 < self.alpha <= 1.0:
                raise DomainError("VaR level must lie in (0, 1]")
        elif kind is MeasureKind.EXPECTED_SHORTFALL:
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise DomainError("ES level must lie in (0, 1]")
            if self.alpha == 0.0:
                raise DomainError("ES at level 0 is the maximum loss; use the ML kind")
        elif kind is MeasureKind.ENTROPIC:
            if self.gamma is None or not np.isfinite(self.gamma) or self.gamma <= 0:
                raise DomainError("entropic parameter must be positive")
        elif kind is MeasureKind.DISTORTION:
            if not isinstance(self.distortion, DistortionFunction):
                raise DomainError("distortion kind needs a DistortionFunction")
        elif kind is MeasureKind.SPECTRAL:
            components = tuple((float(a), float(m)) for a, m in self.components)
            if not components:
                raise DomainError("spectral mixture needs at least one component")
            if any(not 0.0 < a <= 1.0 for a, _ in components) or any(m < 0 for _, m in components):
                raise DomainError("spectral components need levels in (0, 1] and nonnegative masses")
            if abs(sum(m for _, m in components) - 1.0) > 1e-12:
                raise DomainError("spectral masses must sum to 1")
            object.__setattr__(self, "components", components)
        elif kind is MeasureKind.DILATED:
            if not isinstance(self.base, RiskMeasureSpec):
                raise DomainError("dilated measure needs a base measure")
            if self.gamma is None or not np.isfinite(self.gamma) or self.gamma <= 0:
                raise DomainError("dilation parameter must be positive")

    @classmethod
    def expected_loss(cls):
        return cls(MeasureKind.EXPECTED_LOSS)

    @classmethod
    def value_at_risk(cls, alpha):
        return cls(MeasureKind.VALUE_AT_RISK, alpha=float(alpha))

    @classmethod
    def expected_shortfall(cls, alpha):
        return cls(MeasureKind.EXPECTED_SHORTFALL, alpha=float(alpha))

    @classmethod
    def entropic(cls, gamma):
        return cls(MeasureKind.ENTROPIC, gamma=float(gamma))

    @classmethod
    def maximum_loss(cls):
        return cls(MeasureKind.MAXIMUM_LOSS)

    @classmethod
    def from_distortion(cls, g):
        return cls(MeasureKind.DISTORTION, distortion=g)

    @classmethod
    def spectral(cls, components):
        return cls(MeasureKind.SPECTRAL, components=tuple(components))

    @classmethod
    def dilated(cls, base, gamma):
        return cls(MeasureKind.DILATED, base=base, gamma=float(gamma))

    def named(self, name):
        return RiskMeasureSpec(self.kind, self.alpha, self.gamma, self.distortion, self.components, self.base, name)

    @property
    def label(self):
        kind = self.kind
        if kind in (MeasureKind.VALUE_AT_RISK, MeasureKind.EXPECTED_SHORTFALL):
            return "{:s}({:g})".format(kind.value, self.alpha)
        if kind is MeasureKind.ENTROPIC:
            return "Entropic({:g})".format(self.gamma)
        if kind is MeasureKind.SPECTRAL:
            return "Spectral({:s})".format(", ".join("{:g}:{:g}".format(a, m) for a, m in self.components))
        if kind is MeasureKind.DILATED:
            return "Dilated({:s}, {:g})".format(self.base.label, self.gamma)
        return kind.value

    def __str__(self):
        return self.name or self.label


def canonical(spec):
    """Collapse dilations: entropic and positively homogeneous bases absorb the parameter."""
    if spec.kind is not MeasureKind.DILATED:
        return spec
    base = canonical(spec.base)
    if base.kind is MeasureKind.DILATED:
        return RiskMeasureSpec.dilated(base.base, base.gamma * spec.gamma)
    if base.kind is MeasureKind.ENTROPIC:
        return RiskMeasureSpec.entropic(base.gamma / spec.gamma)
    if properties(base).positively_homogeneous:
        return base
    return RiskMeasureSpec.dilated(base, spec.gamma)


def properties(spec):
    kind = spec.kind
    if kind in (MeasureKind.EXPECTED_LOSS, MeasureKind.EXPECTED_SHORTFALL, MeasureKind.MAXIMUM_LOSS, MeasureKind.SPECTRAL):
        return MeasureProperties(True, True, True, True, True, True, True, True)
    if kind is MeasureKind.VALUE_AT_RISK:
        return MeasureProperties(False, False, True, True, True, False, True, False)
    if kind is MeasureKind.ENTROPIC:
        return MeasureProperties(True, False, False, False, True, True, True, False)
    if kind is MeasureKind.DISTORTION:
        concave = spec.distortion.is_concave
        return MeasureProperties(concave, concave, True, True, True, spec.distortion.dominates_identity(), True, concave)
    base = properties(spec.base)
    return MeasureProperties(base.convex, base.coherent, base.positively_homogeneous, base.comonotone_additive,
                             base.law_invariant, base.loaded, base.limited, base.subadditive, base.normalized)


class DualVector:
    """A probability vector q on the atoms, i.e. a measure Q absolutely continuous w.r.t. P."""

    def __init__(self, weights, space):
        q = np.asarray(weights, dtype=float)
        if q.shape != (space.atom_count,):
            raise StructuralError("dual vector length does not match the space")
        if np.any(q < -1e-9) or abs(q.sum() - 1.0) > 1e-9:
            raise DomainError("dual vector must be a probability vector")
        q = np.clip(q, 0.0, None)
        q = q / q.sum()
        q.setflags(write=False)
        self.weights = q
        self.space = space

    @classmethod
    def base_probability(cls, space):
        return cls(space.probabilities, space)

    @property
    def density(self):
        return self.weights / self.space.probabilities

    def expectation(self, x):
        check_same_space(x, self)
        return float(self.weights @ x.values)

    def tolist(self):
        return [float(v) for v in self.weights]

    def __repr__(self):
        return "DualVector({})".format(np.array2string(self.weights, precision=6, separator=", "))


class HalfspaceSystem:
    """
    Linear description {q >= 0 : A_ub q <= b_ub, A_eq q = b_eq} of a set of dual vectors.
    The simplex constraint sum(q) = 1 is always one of the equality rows.
    """

    def __init__(self, atom_count, A_ub=None, b_ub=None, A_eq=None, b_eq=None):
        self.atom_count = atom_count
        self.A_ub = np.zeros((0, atom_count)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
        self.b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
        if A_eq is None:
            A_eq, b_eq = np.ones((1, atom_count)), np.ones(1)
        self.A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        self.b_eq = np.asarray(b_eq, dtype=float)

    @classmethod
    def simplex(cls, atom_count):
        return cls(atom_count)

    @classmethod
    def stack(cls, systems):
        systems = list(systems)
        d = systems[0].atom_count
        if any(s.atom_count != d for s in systems):
            raise StructuralError("cannot stack halfspace systems of different dimension")
        return cls(d, np.vstack([s.A_ub for s in systems]), np.concatenate([s.b_ub for s in systems]),
                   np.vstack([s.A_eq for s in systems]), np.concatenate([s.b_eq for s in systems]))

    def with_equality(self, row, rhs):
        return HalfspaceSystem(self.atom_count, self.A_ub, self.b_ub, np.vstack([self.A_eq, row]), np.append(self.b_eq, rhs))

    def contains(self, q, tol=1e-10):
        q = q.weights if isinstance(q, DualVector) else np.asarray(q, dtype=float)
        if np.any(q < -tol):
            return False
        if len(self.b_ub) and np.any(self.A_ub @ q > self.b_ub + tol):
            return False
        return bool(np.all(np.abs(self.A_eq @ q - self.b_eq) <= tol))

    @property
    def row_count(self):
        return len(self.b_ub) + len(self.b_eq)

    def __repr__(self):
        return "<HalfspaceSystem d={:d} ub={:d} eq={:d}>".format(self.atom_count, len(self.b_ub), len(self.b_eq))


def quantile_weighted_value(g, x):
    """rho_g(X) = integral of VaR^u(X) against dg(u), on the step quantile."""
    return -quantile_function(x).integrate(g)


def choquet_value(g, x):
    """rho_g(X) as a Choquet integral over the upper level sets {X >= x_k}."""
    levels = np.unique(x.values)
    below = np.array([x.probabilities[x.values < level].sum() for level in levels[1:]])
    increments = np.diff(levels)
    return float(-levels[0] - increments @ (1.0 - g(below)))


def _check_convex(spec, routine):
    if not properties(spec).convex:
        raise UnsupportedMeasureError("{:s} is not convex; {:s} is not available".format(spec.label, routine))


def evaluate(spec, x):
    kind = spec.kind
    if kind is MeasureKind.EXPECTED_LOSS:
        return -x.mean()
    if kind is MeasureKind.VALUE_AT_RISK:
        return -left_quantile(x, spec.alpha)
    if kind is MeasureKind.EXPECTED_SHORTFALL:
        alpha = spec.alpha
        return -quantile_function(x).integrate(lambda u: min(u / alpha, 1.0))
    if kind is MeasureKind.ENTROPIC:
        return float(logsumexp(-spec.gamma * x.values, b=x.probabilities)) / spec.gamma
    if kind is MeasureKind.MAXIMUM_LOSS:
        return -x.ess_inf()
    if kind is MeasureKind.DISTORTION:
        return choquet_value(spec.distortion, x)
    if kind is MeasureKind.SPECTRAL:
        return float(sum(mass * evaluate(RiskMeasureSpec.expected_shortfall(a), x) for a, mass in spec.components if mass > 0))
    return spec.gamma * evaluate(spec.base, x / spec.gamma)


def acceptance_check(spec, x):
    return evaluate(spec, x) <= Tolerances.probability


def penalty(spec, q, tol=1e-10):
    """Minimal penalty of q: relative entropy for entropic kinds, 0/inf dual-set indicator for coherent ones."""
    _check_convex(spec, "the penalty term")
    spec = canonical(spec)
    if spec.kind is MeasureKind.ENTROPIC:
        return float(rel_entr(q.weights, q.space.probabilities).sum()) / spec.gamma
    if spec.kind is MeasureKind.EXPECTED_SHORTFALL:
        inside = np.all(q.weights <= q.space.probabilities / spec.alpha + tol)
    elif spec.kind is MeasureKind.MAXIMUM_LOSS:
        inside = True
    else:
        inside = dual_set_halfspaces(spec, q.space).contains(q, tol)
    return 0.0 if inside else np.inf


def dual_set_halfspaces(spec, space):
    if not properties(spec).coherent:
        raise UnsupportedMeasureError("{:s} is not coherent; its dual set has no halfspace form".format(spec.label))
    spec = canonical(spec)
    d = space.atom_count
    p = space.probabilities
    if spec.kind is MeasureKind.EXPECTED_LOSS:
        return HalfspaceSystem(d, A_eq=np.vstack([np.ones(d), np.eye(d)]), b_eq=np.concatenate([[1.0], p]))
    if spec.kind is MeasureKind.EXPECTED_SHORTFALL:
        return HalfspaceSystem(d, np.eye(d), p / spec.alpha)
    if spec.kind is MeasureKind.MAXIMUM_LOSS:
        return HalfspaceSystem.simplex(d)
    g = distortion_of(spec)
    if d > CORE_ATOM_LIMIT:
        raise SizeError("distortion core export is limited to {:d} atoms, got {:d}".format(CORE_ATOM_LIMIT, d))
    masks = np.arange(1, 2 ** d - 1)
    rows = ((masks[:, None] >> np.arange(d)) & 1).astype(float)
    return HalfspaceSystem(d, rows, g(rows @ p))


class SubgradientFace:
    """
    The set of dual vectors attaining rho(X) = E_q[-X] - penalty(q).
    Entropic measures have a single point; coherent ones a polyhedral face.
    """

    def __init__(self, space, system=None, point=None):
        self.space = space
        self.system = system
        self.point = point

    @property
    def is_point(self):
        return self.point is not None

    def contains(self, q, tol=1e-8):
        if self.point is not None:
            return bool(np.max(np.abs(q.weights - self.point.weights)) <= tol)
        return self.system.contains(q, tol)

    def __repr__(self):
        return "<SubgradientFace {}>".format(self.point if self.is_point else self.system)


def gibbs_density(gamma, x):
    log_q = np.log(x.probabilities) - gamma * x.values
    log_q -= logsumexp(log_q)
    return DualVector(np.exp(log_q), x.space)


def subgradient_face(spec, x):
    _check_convex(spec, "the subgradient face")
    spec = canonical(spec)
    if spec.kind is MeasureKind.ENTROPIC:
        return SubgradientFace(x.space, point=gibbs_density(spec.gamma, x))
    system = dual_set_halfspaces(spec, x.space)
    return SubgradientFace(x.space, system=system.with_equality(-x.values, evaluate(spec, x)))


def distortion_of(spec):
    spec = canonical(spec)
    kind = spec.kind
    if kind is MeasureKind.EXPECTED_LOSS:
        return DistortionFunction.identity()
    if kind is MeasureKind.EXPECTED_SHORTFALL:
        return DistortionFunction.expected_shortfall(spec.alpha)
    if kind is MeasureKind.MAXIMUM_LOSS:
        return DistortionFunction.maximum_loss()
    if kind is MeasureKind.DISTORTION:
        return spec.distortion
    if kind is MeasureKind.SPECTRAL:
        return DistortionFunction.mixture((DistortionFunction.expected_shortfall(a), m) for a, m in spec.components if m > 0)
    raise UnsupportedMeasureError("{:s} has no concave distortion".format(spec.label))


def es_decomposition(spec):
    """
    Write a concave distortion as a finite mixture of expected shortfalls.
    Returns (level, mass) pairs; level 1 is the expected loss, level 0 the maximum loss.
    """
    g = distortion_of(spec)
    if not g.is_concave:
        raise UnsupportedMeasureError("only concave distortions are ES mixtures")
    slopes = np.append(g.slopes, 0.0)
    result = []
    for level, upper, lower in zip(g.breakpoints[1:], slopes[:-1], slopes[1:]):
        mass = (upper - lower) * level
        if mass > 1e-15:
            result.append((0.0 if level <= MAXIMUM_LOSS_EPSILON else float(level), float(mass)))
    return result


def spec_for_level(level):
    if level <= 0.0:
        return RiskMeasureSpec.maximum_loss()
    if level >= 1.0:
        return RiskMeasureSpec.expected_loss()
    return RiskMeasureSpec.expected_shortfall(level)


def capacity_of(spec, space):
    """A -> rho(-1_A): the capacity charged for losing one unit on the atoms in A."""
    def capacity(atoms):
        return evaluate(spec, space.indicator(atoms, -1.0))
    return capacity


_KIND_NAMES = {kind.value.lower(): kind for kind in MeasureKind}
_KIND_NAMES.update({"expectedloss": MeasureKind.EXPECTED_LOSS, "valueatrisk": MeasureKind.VALUE_AT_RISK,
                    "expectedshortfall": MeasureKind.EXPECTED_SHORTFALL, "maximumloss": MeasureKind.MAXIMUM_LOSS,
                    "spectralmixture": MeasureKind.SPECTRAL})


def _number(descriptor, key, where):
    if key not in descriptor:
        raise ScenarioError("missing '{:s}'".format(key), where)
    try:
        return float(descriptor[key])
    except (TypeError, ValueError):
        raise ScenarioError("'{:s}' must be a number".format(key), where)


def parse_descriptor(descriptor, where="measure"):
    if not isinstance(descriptor, dict) or "kind" not in descriptor:
        raise ScenarioError("measure descriptor must be an object with a 'kind'", where)
    kind = _KIND_NAMES.get(str(descriptor["kind"]).replace("_", "").lower())
    if kind is None:
        raise ScenarioError("unknown measure kind {!r}".format(descriptor["kind"]), where)
    try:
        if kind is MeasureKind.EXPECTED_LOSS:
            spec = RiskMeasureSpec.expected_loss()
        elif kind is MeasureKind.MAXIMUM_LOSS:
            spec = RiskMeasureSpec.maximum_loss()
        elif kind is MeasureKind.VALUE_AT_RISK:
            spec = RiskMeasureSpec.value_at_risk(_number(descriptor, "alpha", where))
        elif kind is MeasureKind.EXPECTED_SHORTFALL:
            spec = RiskMeasureSpec.expected_shortfall(_number(descriptor, "alpha", where))
        elif kind is MeasureKind.ENTROPIC:
            spec = RiskMeasureSpec.entropic(_number(descriptor, "gamma", where))
        elif kind is MeasureKind.DISTORTION:
            spec = RiskMeasureSpec.from_distortion(DistortionFunction(descriptor.get("breakpoints"), descriptor.get("values")))
        elif kind is MeasureKind.SPECTRAL:
            spec = RiskMeasureSpec.spectral(tuple(tuple(c) for c in descriptor.get("components", ())))
        else:
            spec = RiskMeasureSpec.dilated(parse_descriptor(descriptor.get("base"), where + ".base"), _number(descriptor, "gamma", where))
    except (DomainError, TypeError, ValueError) as x:
        raise ScenarioError(str(x), where)
    if "name" in descriptor:
        spec = spec.named(str(descriptor["name"]))
    return spec


def to_descriptor(spec):
    result = {"kind": spec.kind.value}
    if spec.kind in (MeasureKind.VALUE_AT_RISK, MeasureKind.EXPECTED_SHORTFALL):
        result["alpha"] = spec.alpha
    elif spec.kind is MeasureKind.ENTROPIC:
        result["gamma"] = spec.gamma
    elif spec.kind is MeasureKind.DISTORTION:
        result["breakpoints"] = spec.distortion.breakpoints.tolist()
        result["values"] = spec.distortion.values.tolist()
    elif spec.kind is MeasureKind.SPECTRAL:
        result["components"] = [[a, m] for a, m in spec.components]
    elif spec.kind is MeasureKind.DILATED:
        result["base"] = to_descriptor(spec.base)
        result["gamma"] = spec.gamma
    if spec.name:
        result["name"] = spec.name
    return result
