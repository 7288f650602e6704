"""
Allocations of a position among the members of a family: optimality and Pareto
certificates, the subgradient-intersection test, comonotone improvement and the
flatness criterion for distortion families.
"""

import enum
import logging
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import minimize
from .shared import (StructuralError, UnsupportedMeasureError, PreconditionError, TheoremViolation, TOLERANCES)
from .space import Position, is_comonotone_pair, quantile_function, upper_partial_moment, ssd_dominates
from .measures import (MeasureKind, DistortionFunction, DualVector, HalfspaceSystem, evaluate, properties,
                       canonical, subgradient_face, distortion_of)
from .convolution import Allocation, convolve, optimal_allocation
from . import lp


logger = logging.getLogger(__name__)

POLISH_VARIABLE_LIMIT = 200


class CertificateKind(enum.Enum):
    VALUE_MATCH = "value_match"
    SUBGRADIENT_INTERSECTION = "subgradient_intersection"
    FLATNESS = "flatness"


@dataclass
class OptimalityCertificate:
    kind: CertificateKind
    witness: object = None
    residual: float = 0.0

    def __bool__(self):
        return True

    def as_dict(self):
        witness = self.witness.tolist() if isinstance(self.witness, DualVector) else self.witness
        return {"kind": self.kind.value, "certified": True, "residual": self.residual, "witness": witness}


@dataclass
class Rejection:
    kind: CertificateKind
    reason: str
    evidence: object = None
    residual: float = None

    def __bool__(self):
        return False

    def as_dict(self):
        return {"kind": self.kind.value, "certified": False, "reason": self.reason, "residual": self.residual}


@dataclass
class ParetoVerdict:
    pareto: bool
    certificate: object
    improving: Allocation = None
    probes: int = 0
    notes: list = field(default_factory=list)

    def __bool__(self):
        return self.pareto


class AllocationRule:
    """
    Nondecreasing piecewise linear h^i on the sorted distinct values of X, with
    sum_i mu_i h^i(x) = x at every breakpoint. Y^i = h^i(X) is then I-comonotone.
    """

    def __init__(self, breakpoints, values, weights):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = {i: np.asarray(v, dtype=float) for i, v in values.items()}
        self.weights = dict(weights)

    @property
    def lipschitz_bounds(self):
        if len(self.breakpoints) < 2:
            return {i: 0.0 for i in self.values}
        gaps = np.diff(self.breakpoints)
        return {i: float(np.max(np.diff(v) / gaps)) for i, v in self.values.items()}

    def is_valid(self, tol=1e-10):
        monotone = all(np.all(np.diff(v) >= -tol) for v in self.values.values())
        total = sum(self.weights[i] * v for i, v in self.values.items())
        return monotone and bool(np.all(np.abs(total - self.breakpoints) <= tol))

    def __call__(self, index, t):
        return np.interp(t, self.breakpoints, self.values[index])

    def apply(self, x, scheme):
        return Allocation({i: Position(self(i, x.values), x.space) for i in self.values}, scheme)


def _check_sums(alloc, x, tol=1e-9):
    if alloc.space != x.space:
        raise StructuralError("allocation and position live on different spaces")
    if not alloc.sums_to(x, tol):
        residual = float(np.max(np.abs(alloc.total().values - x.values)))
        raise StructuralError("allocation does not sum to the position (residual {:.3g})".format(residual))


def is_comonotone_family(alloc, tol=None):
    tol = TOLERANCES.comonotone if tol is None else tol
    components = list(alloc.components.values())
    if not components:
        raise StructuralError("empty allocation")
    return all(is_comonotone_pair(a, b, tol) for k, a in enumerate(components) for b in components[k + 1:])


def quantile_additivity_check(alloc, x, tol=1e-9):
    """sum_i mu_i F^-1_{X^i}(u) == F^-1_X(u) at every step level of any of the quantiles."""
    functions = {i: quantile_function(c) for i, c in alloc.components.items()}
    target = quantile_function(x)
    levels = np.unique(np.concatenate([target.breakpoints] + [f.breakpoints for f in functions.values()]))
    for u in levels:
        combined = sum(alloc.weights[i] * f(u) for i, f in functions.items())
        if abs(combined - target(u)) > tol:
            return False
    return True


def _improvement_system(alloc, x):
    """
    Linear system over h^i(x_k) and lift variables s >= h^i(x_k) - t, one block per
    component and threshold t (the atom values of X^i):

        h^i nondecreasing, sum_i mu_i h^i(x_k) = x_k, h^i >= min X^i,
        sum_k P(X = x_k) s_{i,t,k} <= E[(X^i - t)+]

    With h^i bounded below by min X^i, checking the thresholds at atom values of X^i is exact.
    """
    levels = np.unique(x.values)
    probabilities = np.array([x.probabilities[x.values == v].sum() for v in levels])
    indices = sorted(alloc.components)
    m, n = len(levels), len(indices)
    thresholds = {i: np.unique(alloc.components[i].values) for i in indices}
    n_h = n * m
    n_s = sum(len(thresholds[i]) * m for i in indices)
    size = n_h + n_s
    A_ub, b_ub, bounds = [], [], []
    for i in indices:
        bounds.extend([(alloc.components[i].ess_inf(), None)] * m)
    bounds.extend([(0.0, None)] * n_s)
    offset = n_h
    for k, i in enumerate(indices):
        h = slice(k * m, (k + 1) * m)
        for j in range(m - 1):
            row = np.zeros(size)
            row[h.start + j], row[h.start + j + 1] = 1.0, -1.0
            A_ub.append(row)
            b_ub.append(0.0)
        for t in thresholds[i]:
            for j in range(m):
                row = np.zeros(size)
                row[h.start + j] = 1.0
                row[offset + j] = -1.0
                A_ub.append(row)
                b_ub.append(t)
            row = np.zeros(size)
            row[offset:offset + m] = probabilities
            A_ub.append(row)
            b_ub.append(upper_partial_moment(alloc.components[i], t))
            offset += m
    A_eq = np.zeros((m, size))
    for k, i in enumerate(indices):
        A_eq[:, k * m:(k + 1) * m] = alloc.weights[i] * np.eye(m)
    return levels, probabilities, indices, np.array(A_ub), np.array(b_ub), A_eq, levels.copy(), bounds


def improvement_rule(alloc, x, polish=True):
    """
    Comonotone rule whose components dominate the given ones in second order.
    Stage one minimizes the total spread sum_i mu_i (h^i(x_max) - h^i(x_min)) with the in-repo
    simplex; small systems are then polished towards min sum_i mu_i E[h^i(X)^2].
    """
    _check_sums(alloc, x)
    if not x.space.is_equiprobable:
        raise PreconditionError("comonotone improvement needs an equiprobable space")
    levels, probabilities, indices, A_ub, b_ub, A_eq, b_eq, bounds = _improvement_system(alloc, x)
    m = len(levels)
    size = A_eq.shape[1]
    spread = np.zeros(size)
    for k, i in enumerate(indices):
        spread[k * m] -= alloc.weights[i]
        spread[k * m + m - 1] += alloc.weights[i]
    result = lp.solve_lp(spread, A_ub, b_ub, A_eq, b_eq, bounds)
    if not result.success:
        raise TheoremViolation("comonotone improvement program is {:s}".format(result.status),
                               system={"A_ub": A_ub, "b_ub": b_ub, "A_eq": A_eq, "b_eq": b_eq, "bounds": bounds})
    z = result.x
    if polish and size <= POLISH_VARIABLE_LIMIT:
        z = _polish(z, alloc, indices, probabilities, A_ub, b_ub, A_eq, b_eq, bounds)
    values = {i: np.maximum.accumulate(z[k * m:(k + 1) * m]) for k, i in enumerate(indices)}
    return AllocationRule(levels, values, {i: alloc.weights[i] for i in indices})


def _polish(z, alloc, indices, probabilities, A_ub, b_ub, A_eq, b_eq, bounds):
    m = len(probabilities)
    n_h = len(indices) * m
    scale = np.concatenate([alloc.weights[i] * probabilities for i in indices])

    def fun(v):
        h = v[:n_h]
        grad = np.zeros_like(v)
        grad[:n_h] = 2.0 * scale * h
        return float(scale @ (h * h)), grad

    answer = minimize(fun, z, jac=True, method="SLSQP", bounds=bounds,
                      constraints=[{"type": "eq", "fun": lambda v: A_eq @ v - b_eq, "jac": lambda v: A_eq},
                                   {"type": "ineq", "fun": lambda v: b_ub - A_ub @ v, "jac": lambda v: -A_ub}],
                      options={"maxiter": 500, "ftol": 1e-14})
    candidate = answer.x
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    feasible = (np.all(A_ub @ candidate <= b_ub + 1e-11) and np.all(np.abs(A_eq @ candidate - b_eq) <= 1e-11)
                and np.all(candidate >= lower - 1e-11))
    if answer.success and feasible:
        return candidate
    logger.debug("quadratic polish rejected (%s); keeping the linear solution", answer.message)
    return z


def comonotone_improve(alloc, x, polish=True):
    rule = improvement_rule(alloc, x, polish)
    improved = rule.apply(x, alloc.scheme)
    for i, component in alloc.components.items():
        if not ssd_dominates(improved.component(i), component, tol=TOLERANCES.comonotone):
            raise TheoremViolation("improved component {:d} does not dominate the original".format(i))
    return improved


def check_optimal(alloc, roster, mu, x, reference_value, tol=None):
    tol = TOLERANCES.certificate if tol is None else tol
    _check_sums(alloc, x)
    achieved = alloc.weighted_risk(roster)
    residual = abs(achieved - reference_value)
    if residual <= tol:
        return OptimalityCertificate(CertificateKind.VALUE_MATCH, {"achieved": achieved, "reference": reference_value}, residual)
    return Rejection(CertificateKind.VALUE_MATCH, "weighted risk {:.12g} differs from {:.12g}".format(achieved, reference_value),
                     {"achieved": achieved, "reference": reference_value}, residual)


def pareto_improvement(alloc, better, roster):
    """
    Given an allocation `better` with a smaller weighted risk, shift it so every
    component is strictly better than in `alloc`: Z^i = Y^i - k^i + k with
    k^i = rho^i(X^i) - rho^i(Y^i) and k = sum_i mu_i k^i.
    """
    before = alloc.component_risks(roster)
    after = better.component_risks(roster)
    gaps = {i: before[i] - after[i] for i in before}
    k = sum(alloc.weights[i] * gaps[i] for i in gaps)
    return better.shifted({i: k - gaps[i] for i in gaps}), k


def check_pareto_via_optimal(alloc, roster, mu, x, reference_value=None, probes=50, seed=0):
    """Optimality is the Pareto test; random balanced perturbations corroborate it."""
    if reference_value is None:
        reference_value = convolve(roster, mu, x).value
    certificate = check_optimal(alloc, roster, mu, x, reference_value)
    if not certificate:
        better, _ = optimal_allocation(roster, mu, x)
        improving, k = pareto_improvement(alloc, better, roster)
        notes = ["every component improves by {:.6g}".format(k)]
        return ParetoVerdict(False, certificate, improving, notes=notes)
    rng = np.random.default_rng(seed)
    indices = alloc.indices
    risks = alloc.component_risks(roster)
    notes = []
    if len(indices) > 1:
        for _ in range(probes):
            a, b = rng.choice(len(indices), size=2, replace=False)
            ia, ib = indices[a], indices[b]
            direction = x.space.position(rng.normal(size=x.space.atom_count) * (1.0 + x.sup_norm()) * 1e-2)
            trial = alloc.replaced(ia, alloc.component(ia) + direction / alloc.weights[ia])
            trial = trial.replaced(ib, alloc.component(ib) - direction / alloc.weights[ib])
            ra = evaluate(roster.spec_for(ia), trial.component(ia))
            rb = evaluate(roster.spec_for(ib), trial.component(ib))
            better = (ra < risks[ia] - 1e-7 and rb <= risks[ib] + 1e-7) or (rb < risks[ib] - 1e-7 and ra <= risks[ia] + 1e-7)
            if better:
                notes.append("perturbation probe found a Pareto improvement")
                logger.warning("certified allocation improved by a perturbation between %d and %d", ia, ib)
                return ParetoVerdict(False, certificate, trial, probes, notes)
    return ParetoVerdict(True, certificate, probes=probes if len(indices) > 1 else 0, notes=notes)


def subgradient_intersection_check(alloc, roster, mu, x, tol=1e-8):
    """Certify optimality by a dual vector lying in the subgradient face of every component."""
    _check_sums(alloc, x)
    faces = []
    for i in alloc.indices:
        spec = roster.spec_for(i)
        if not properties(spec).convex:
            raise UnsupportedMeasureError("{:s} is not convex; subgradients are not defined".format(spec.label))
        faces.append((i, subgradient_face(spec, alloc.component(i))))
    points = [(i, face.point) for i, face in faces if face.is_point]
    systems = [face.system for _, face in faces if not face.is_point]
    kind = CertificateKind.SUBGRADIENT_INTERSECTION
    if points:
        reference = points[0][1].weights
        spread = max(float(np.max(np.abs(q.weights - reference))) for _, q in points)
        if spread > tol:
            tilts = {i: q.tolist() for i, q in points}
            return Rejection(kind, "component tilts differ by {:.3g}".format(spread), tilts, spread)
        witness = points[0][1]
        outside = [k for k, system in enumerate(systems) if not system.contains(witness, tol)]
        if outside:
            return Rejection(kind, "tilt lies outside {:d} coherent face(s)".format(len(outside)), witness.tolist(), spread)
        return OptimalityCertificate(kind, witness, spread)
    stacked = HalfspaceSystem.stack(systems)
    result = lp.solve_lp(np.zeros(stacked.atom_count), stacked.A_ub if len(stacked.b_ub) else None,
                         stacked.b_ub if len(stacked.b_ub) else None, stacked.A_eq, stacked.b_eq)
    if not result.success:
        return Rejection(kind, "subgradient faces do not intersect ({:s})".format(result.status), None, result.residual)
    return OptimalityCertificate(kind, DualVector(result.x, x.space), result.residual)


def flatness_check(alloc, roster, mu, x, strict=None, jump=None):
    """
    For concave distortions: an I-comonotone allocation is optimal iff no component's
    quantile increases at a level u where X's quantile increases and g(u) < g^i(u),
    g being the pointwise minimum of the members' distortions. The singular term of
    the criterion at 0+ vanishes on finite spaces, where F^-1(0+) equals ess inf X.
    """
    strict = TOLERANCES.strict if strict is None else strict
    jump = TOLERANCES.jump if jump is None else jump
    _check_sums(alloc, x)
    specs = {i: canonical(roster.spec_for(i)) for i in alloc.indices}
    for spec in specs.values():
        if spec.kind is MeasureKind.ENTROPIC or not properties(spec).comonotone_additive:
            raise UnsupportedMeasureError("{:s} has no distortion; flatness does not apply".format(spec.label))
    distortions = {i: distortion_of(spec) for i, spec in specs.items()}
    if not all(g.is_concave for g in distortions.values()):
        raise UnsupportedMeasureError("flatness needs concave distortions")
    if not x.space.is_equiprobable:
        raise PreconditionError("flatness check needs an equiprobable space")
    if not is_comonotone_family(alloc):
        raise PreconditionError("flatness check needs an I-comonotone allocation")
    g = DistortionFunction.minimum(distortions.values())
    x_jumps = np.array([u for u, size in quantile_function(x).jumps() if size > jump])
    violations = []
    worst = 0.0
    for i, component in alloc.components.items():
        for u, size in quantile_function(component).jumps():
            if size <= jump or not np.any(np.abs(x_jumps - u) <= 1e-12):
                continue
            gap = float(distortions[i](u) - g(u))
            if gap > strict:
                violations.append({"index": i, "level": float(u), "jump": float(size), "gap": gap})
                worst = max(worst, gap)
    record = {"aggregate": [[float(b), float(v)] for b, v in zip(g.breakpoints, g.values)], "violations": violations,
              "note": "singular term at 0+ vanishes on finite spaces"}
    if violations:
        return Rejection(CertificateKind.FLATNESS, "{:d} quantile jump(s) where g < g^i".format(len(violations)), record, worst)
    return OptimalityCertificate(CertificateKind.FLATNESS, record, 0.0)
