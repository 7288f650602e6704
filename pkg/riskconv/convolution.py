"""
Weighted inf-convolution of a family of risk measures:

    rho_conv(X) = inf { sum_i mu_i rho^i(X^i) : sum_i mu_i X^i = X }

Four independent routes compute it:

    closed_form       recognized families (expected shortfalls, dilations, concave distortions)
    dual_lp           max E_q[-X] over the intersection of the members' dual sets
    penalty_program   max E_q[-X] - sum_i mu_i penalty_i(q) over the simplex
    primal_oracle     direct minimization over allocations of the first n indices

Every result records which route produced it, so the routes can be checked against each other.
"""

import enum
import logging
from collections import namedtuple
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, rel_entr
from .shared import (StructuralError, UnsupportedMeasureError, InconsistencyError, InfeasibleProblem, UnboundedProblem,
                     SolverError, NumericalError, PreconditionError, SizeError, Tolerances, TOLERANCES)
from .space import Position, check_same_space
from . import lp
from .measures import (MeasureKind, RiskMeasureSpec, DualVector, DistortionFunction, HalfspaceSystem, evaluate,
                       penalty, properties, canonical, distortion_of, dual_set_halfspaces, es_decomposition,
                       gibbs_density, choquet_value, spec_for_level)


logger = logging.getLogger(__name__)

Member = namedtuple("Member", "index weight spec")


class ConvolutionMethod(enum.Enum):
    CLOSED_FORM = "closed_form"
    DUAL_LP = "dual_lp"
    PENALTY_PROGRAM = "penalty_program"
    PRIMAL_ORACLE = "primal_oracle"


METHOD_ALIASES = {
    "closed": ConvolutionMethod.CLOSED_FORM,
    "dual": ConvolutionMethod.DUAL_LP,
    "penalty": ConvolutionMethod.PENALTY_PROGRAM,
    "oracle": ConvolutionMethod.PRIMAL_ORACLE,
}


class MeasureRoster:
    """
    The family rho^i, keyed by index. A default measure covers every index
    without an explicit entry (used for tails and self-convolutions).
    """

    def __init__(self, measures=(), default=None):
        self.measures = dict(measures.items() if isinstance(measures, dict) else measures)
        self.default = default

    @classmethod
    def homogeneous(cls, spec):
        return cls((), default=spec)

    @classmethod
    def from_list(cls, specs, first_index=1):
        return cls((first_index + k, spec) for k, spec in enumerate(specs))

    def spec_for(self, index):
        spec = self.measures.get(index, self.default)
        if spec is None:
            raise StructuralError("no risk measure for index {:d}".format(index))
        return spec

    def aligned(self, mu):
        support = mu.support
        members = [Member(i, w, self.spec_for(i)) for i, w in support]
        if mu.tail is None:
            extra = set(self.measures) - set(support.indices)
            if extra:
                raise StructuralError("roster indices {} are outside the weight support".format(sorted(extra)))
        return members

    def __len__(self):
        return len(self.measures)

    def __repr__(self):
        named = ", ".join("{:d}: {}".format(i, s) for i, s in sorted(self.measures.items()))
        if self.default is not None:
            named += "{:s}*: {}".format(", " if named else "", self.default)
        return "MeasureRoster({:s})".format(named)


class Allocation:
    """Components X^i per support index; indices without a component hold the zero position."""

    def __init__(self, components, scheme):
        self.components = dict(components.items() if isinstance(components, dict) else components)
        if not self.components:
            raise StructuralError("allocation without components")
        self.scheme = scheme
        self.space = check_same_space(*self.components.values())
        self.weights = dict(scheme.support.entries)
        unknown = set(self.components) - set(self.weights)
        if unknown:
            raise StructuralError("allocation indices {} are not in the weight support".format(sorted(unknown)))

    def component(self, index):
        if index in self.components:
            return self.components[index]
        return self.space.constant(0.0)

    @property
    def indices(self):
        return [i for i, _ in self.scheme.support.entries]

    def total(self):
        values = sum(self.weights[i] * x.values for i, x in self.components.items())
        return Position(values, self.space)

    def sums_to(self, x, atol=1e-9):
        return self.total().allclose(x, atol)

    def weighted_risk(self, roster):
        return float(sum(w * evaluate(roster.spec_for(i), self.component(i)) for i, w in self.weights.items()))

    def component_risks(self, roster):
        return {i: evaluate(roster.spec_for(i), self.component(i)) for i in self.indices}

    def shifted(self, constants):
        return Allocation({i: self.component(i) + constants.get(i, 0.0) for i in set(self.components) | set(constants)},
                          self.scheme)

    def replaced(self, index, position):
        components = dict(self.components)
        components[index] = position
        return Allocation(components, self.scheme)

    def to_json(self):
        return {str(i): x.tolist() for i, x in sorted(self.components.items())}

    def __repr__(self):
        return "<Allocation {:d} components>".format(len(self.components))


@dataclass
class ConvolutionResult:
    value: float
    method: ConvolutionMethod
    allocation: Allocation = None
    dual_witness: tuple = None
    finite_n_trace: list = None
    diverging: bool = False
    bound: float = None
    notes: list = field(default_factory=list)
    discarded_mass: float = 0.0
    residual: float = None
    cross_method: ConvolutionMethod = None

    def as_dict(self):
        result = {"value": self.value, "method": self.method.value, "diverging": self.diverging,
                  "discarded_mass": self.discarded_mass, "notes": list(self.notes)}
        if self.allocation is not None:
            result["allocation"] = self.allocation.to_json()
        if self.dual_witness is not None:
            q, alpha = self.dual_witness
            result["dual_witness"] = {"q": q.tolist(), "penalty": alpha}
        if self.finite_n_trace is not None:
            result["finite_n_trace"] = [[n, v] for n, v in self.finite_n_trace]
        if self.residual is not None:
            result["residual"] = self.residual
            result["cross_method"] = self.cross_method.value
        if self.bound is not None:
            result["bound"] = self.bound
        return result


def _level(spec):
    """ES level of expected-loss, expected-shortfall and maximum-loss members; None otherwise."""
    if spec.kind is MeasureKind.EXPECTED_LOSS:
        return 1.0
    if spec.kind is MeasureKind.EXPECTED_SHORTFALL:
        return spec.alpha
    if spec.kind is MeasureKind.MAXIMUM_LOSS:
        return 0.0
    return None


def _has_concave_distortion(spec):
    try:
        return distortion_of(spec).is_concave
    except UnsupportedMeasureError:
        return False


def distortion_allocation(members, mu, x):
    """
    Comonotone allocation for concave-distortion members: every increment of X between
    consecutive values x_(k-1) < x_(k) sits on {X >= x_(k)} and is given to the member with
    the smallest distortion at u = P(X < x_(k)). All components share the constant min(X).
    """
    distortions = [distortion_of(m.spec) for m in members]
    levels = np.unique(x.values)
    components = {m.index: np.full(x.space.atom_count, levels[0]) for m in members}
    for k in range(1, len(levels)):
        u = x.probabilities[x.values < levels[k]].sum()
        best = int(np.argmin([g_i(u) for g_i in distortions]))
        owner = members[best]
        components[owner.index] += (levels[k] - levels[k - 1]) / owner.weight * (x.values >= levels[k])
    return Allocation({i: Position(v, x.space) for i, v in components.items()}, mu)


def convolve_closed_form(roster, mu, x):
    """Value (and allocation when known) for the recognized families, or None when none applies."""
    members = roster.aligned(mu)
    discarded = mu.support.discarded_mass
    if len(members) == 1:
        only = members[0]
        return ConvolutionResult(evaluate(only.spec, x), ConvolutionMethod.CLOSED_FORM, Allocation({only.index: x}, mu),
                                 notes=["single active index"], discarded_mass=discarded)

    specs = [canonical(m.spec) for m in members]
    levels = [_level(s) for s in specs]
    if all(level is not None for level in levels):
        best = max(levels)
        winner = spec_for_level(best)
        logger.debug("expected shortfall family, dominant level %g", best)
        return ConvolutionResult(evaluate(winner, x), ConvolutionMethod.CLOSED_FORM,
                                 notes=["expected shortfall family: {:s}".format(winner.label)], discarded_mass=discarded)

    raw = [m.spec for m in members]
    if all(s.kind is MeasureKind.DILATED for s in raw) and len({s.base for s in raw}) == 1 \
            and properties(raw[0].base).convex:
        gammas = np.array([s.gamma for s in raw])
        return _dilated_result(members, mu, x, raw[0].base, gammas, discarded)
    if all(s.kind is MeasureKind.ENTROPIC for s in specs):
        gammas = np.array([1.0 / s.gamma for s in specs])
        return _dilated_result(members, mu, x, RiskMeasureSpec.entropic(1.0), gammas, discarded)

    if all(_has_concave_distortion(s) for s in specs):
        g = DistortionFunction.minimum(distortion_of(s) for s in specs)
        allocation = distortion_allocation(members, mu, x)
        logger.debug("concave distortion family, combined distortion %r", g)
        return ConvolutionResult(choquet_value(g, x), ConvolutionMethod.CLOSED_FORM, allocation,
                                 notes=["distortion family: pointwise minimum of distortions"], discarded_mass=discarded)
    return None


def _dilated_result(members, mu, x, base, gammas, discarded):
    weights = np.array([m.weight for m in members])
    gamma = float(weights @ gammas)
    combined = canonical(RiskMeasureSpec.dilated(base, gamma))
    allocation = Allocation({m.index: x * (g / gamma) for m, g in zip(members, gammas)}, mu)
    logger.debug("dilated family, combined parameter %g", gamma)
    return ConvolutionResult(evaluate(combined, x), ConvolutionMethod.CLOSED_FORM, allocation,
                             notes=["dilated family: {:s}".format(combined.label)], discarded_mass=discarded)


def _distinct(specs):
    seen = []
    for spec in specs:
        if spec not in seen:
            seen.append(spec)
    return seen


def convolve_dual_lp(roster, mu, x, tolerances=TOLERANCES):
    members = roster.aligned(mu)
    for m in members:
        if not properties(m.spec).coherent:
            raise UnsupportedMeasureError("dual LP needs coherent members; {:s} is not coherent".format(m.spec.label))
    specs = _distinct(canonical(m.spec) for m in members)
    system = HalfspaceSystem.stack(dual_set_halfspaces(s, x.space) for s in specs)
    result = lp.solve_lp(x.values, system.A_ub if len(system.b_ub) else None, system.b_ub if len(system.b_ub) else None,
                         system.A_eq, system.b_eq, tol=tolerances.lp_pivot)
    if result.status == lp.INFEASIBLE:
        raise InconsistencyError("intersection of dual sets is empty")
    if result.status == lp.UNBOUNDED:
        raise UnboundedProblem("dual LP unbounded over a bounded dual set", residuals=result.residual)
    if not result.success:
        raise SolverError("dual LP ended with status {:s}".format(result.status), residuals=result.residual)
    q = DualVector(result.x, x.space)
    logger.debug("dual LP solved in %d pivots over %d constraints", result.iterations, system.row_count)
    return ConvolutionResult(-result.fun, ConvolutionMethod.DUAL_LP, dual_witness=(q, 0.0),
                             discarded_mass=mu.support.discarded_mass, notes=["{:d} dual constraints".format(system.row_count)])


def penalty_objective(roster, mu, x, q):
    """E_q[-X] - sum_i mu_i penalty_i(q), term by term."""
    members = roster.aligned(mu)
    total = sum(m.weight * penalty(m.spec, q) for m in members)
    return q.expectation(-x) - total


class PenaltyProgram:
    """
    Concave maximization of E_q[-X] - kappa * KL(q|P) over the coherent members' dual sets,
    where kappa = sum of mu_i / gamma_i over the entropic members. Expected-loss, expected-shortfall
    and maximum-loss members only cap q from above, giving a capped simplex with an exact projection.
    """
    armijo = 1e-4
    face_tolerance = 1e-9
    face_every = 20
    log_floor = 1e-300

    def __init__(self, members, x, tolerances=TOLERANCES):
        self.x = x
        self.p = x.probabilities
        self.tolerances = tolerances
        specs = [(m.weight, canonical(m.spec)) for m in members]
        self.kappa = sum(w / s.gamma for w, s in specs if s.kind is MeasureKind.ENTROPIC)
        coherent = [s for _, s in specs if s.kind is not MeasureKind.ENTROPIC]
        self.upper = np.full(len(self.p), np.inf)
        self.system = None
        for spec in coherent:
            if spec.kind is MeasureKind.EXPECTED_LOSS:
                self.upper = np.minimum(self.upper, self.p)
            elif spec.kind is MeasureKind.EXPECTED_SHORTFALL:
                self.upper = np.minimum(self.upper, self.p / spec.alpha)
        if any(_level(s) is None for s in coherent):
            self.system = HalfspaceSystem.stack(dual_set_halfspaces(s, x.space) for s in _distinct(coherent))
        self.iterations = 0

    def objective(self, q):
        return float(-self.x.values @ q - self.kappa * rel_entr(q, self.p).sum())

    def gradient(self, q):
        if self.kappa == 0:
            return -self.x.values.copy()
        return -self.x.values - self.kappa * (np.log(np.maximum(q, self.log_floor) / self.p) + 1.0)

    def project(self, v):
        """Euclidean projection onto {0 <= q <= upper, sum q = 1}: find the shift lam with sum clip(v - lam) = 1."""
        u = self.upper
        low = np.min(v - np.minimum(u, 1.0))
        finite = np.isfinite(u)
        candidates = np.unique(np.concatenate(([low], v, (v - u)[finite])))
        masses = np.clip(v[None, :] - candidates[:, None], 0.0, u).sum(axis=1)
        above = np.flatnonzero(masses >= 1.0)
        j = int(above[-1]) if len(above) else 0
        if masses[j] <= 1.0 or j == len(candidates) - 1:
            lam = candidates[j]
        else:
            lo, hi = candidates[j], candidates[j + 1]
            lam = lo + (hi - lo) * (masses[j] - 1.0) / (masses[j] - masses[j + 1])
        return np.clip(v - lam, 0.0, u)

    def stationarity(self, q):
        return float(np.max(np.abs(q - self.project(q + self.gradient(q)))))

    def seeds(self):
        p = self.p
        rng = np.random.default_rng(0)
        tilt = gibbs_density(1.0 / self.kappa if self.kappa > 0 else 1.0, self.x).weights
        return [p, tilt, np.full(len(p), 1.0 / len(p)), rng.dirichlet(np.ones(len(p))), rng.dirichlet(np.ones(len(p)))]

    def face_point(self, q):
        """
        Stationary point on the face of the capped simplex where q's capped coordinates stay
        capped: the free coordinates are the tilt p*exp(-x/kappa) scaled to the mass left over,
        and coordinates the tilt pushes past their cap join the capped set. None when the
        resulting point is not stationary (a capped coordinate wants to leave its cap).
        """
        if self.kappa == 0:
            return None
        u = self.upper
        capped = np.isfinite(u) & (q >= u - self.face_tolerance)
        point = None
        for _ in range(len(q) + 1):
            free = ~capped
            room = 1.0 - u[capped].sum()
            if room <= 0 or not free.any():
                return None
            log_w = np.log(self.p[free]) - self.x.values[free] / self.kappa
            point = np.where(capped, u, 0.0)
            point[free] = room * np.exp(log_w - logsumexp(log_w))
            over = free & (point > u)
            if not over.any():
                break
            capped |= over
        if self.stationarity(point) > self.tolerances.stationarity:
            return None
        return point

    def ascend(self, q, max_iters):
        q = self.project(q)
        step = 1.0
        f = self.objective(q)
        slack_scale = 8 * np.finfo(float).eps
        for k in range(max_iters):
            self.iterations += 1
            g = self.gradient(q)
            if np.max(np.abs(q - self.project(q + g))) <= self.tolerances.stationarity:
                return q, f, True
            if k % self.face_every == 0:
                polished = self._polish(q, f)
                if polished is not None:
                    return polished
            step = min(2.0 * step, 1e12)
            while True:
                candidate = self.project(q + step * g)
                fc = self.objective(candidate)
                if fc >= f + self.armijo * (g @ (candidate - q)) - slack_scale * (1.0 + abs(f)):
                    break
                step *= 0.5
                if step < 1e-30:
                    # objective differences are below rounding
                    return self._polish(q, f) or (q, f, False)
            q, f = candidate, fc
        return self._polish(q, f) or (q, f, False)

    def _polish(self, q, f):
        point = self.face_point(q)
        if point is None:
            return None
        value = self.objective(point)
        if value < f - 1e-12 * (1.0 + abs(f)):
            return None
        logger.debug("penalty program finished on a face with %d capped atoms",
                     int(np.sum(np.isfinite(self.upper) & (point >= self.upper - self.face_tolerance))))
        return point, value, True

    def solve_general(self):
        system = self.system
        constraints = [{"type": "eq", "fun": lambda q: system.A_eq @ q - system.b_eq, "jac": lambda q: system.A_eq}]
        if len(system.b_ub):
            constraints.append({"type": "ineq", "fun": lambda q: system.b_ub - system.A_ub @ q, "jac": lambda q: -system.A_ub})
        answer = minimize(lambda q: -self.objective(q), self.p.copy(), jac=lambda q: -self.gradient(q), method="SLSQP",
                          bounds=[(0.0, float(min(u, 1.0))) for u in self.upper], constraints=constraints,
                          options={"maxiter": 1000, "ftol": 1e-14})
        q = np.clip(answer.x, 0.0, None)
        q = q / q.sum()
        if not system.contains(q, 1e-8):
            raise NumericalError("constrained penalty program left the dual set", best_bound=self.objective(self.p))
        return q, self.objective(q), bool(answer.success)

    def solve(self, max_iters=20000):
        if self.system is not None:
            return self.solve_general()
        finished = []
        for seed in self.seeds():
            q, f, converged = self.ascend(seed, max_iters)
            logger.debug("penalty program seed finished at %.12g (converged=%s)", f, converged)
            finished.append((q, f, converged))
        converged = [run for run in finished if run[2]]
        if not converged:
            raise NumericalError("penalty program did not reach stationarity", best_bound=max(f for _, f, _ in finished))
        return max(converged, key=lambda run: run[1])


def convolve_penalty_program(roster, mu, x, max_iters=20000, tolerances=TOLERANCES):
    members = roster.aligned(mu)
    for m in members:
        if not properties(m.spec).convex:
            raise UnsupportedMeasureError("penalty program needs convex members; {:s} is not convex".format(m.spec.label))
    program = PenaltyProgram(members, x, tolerances)
    q, value, _ = program.solve(max_iters)
    witness = DualVector(q, x.space)
    total_penalty = program.kappa * float(rel_entr(witness.weights, x.probabilities).sum())
    notes = []
    if program.kappa > 0 and (program.system is not None or np.any(np.isfinite(program.upper))):
        notes.append("mixed entropic and coherent members: maximum taken over probability vectors")
    return ConvolutionResult(value, ConvolutionMethod.PENALTY_PROGRAM, dual_witness=(witness, total_penalty),
                             discarded_mass=mu.support.discarded_mass, notes=notes)


class _FiniteProgram:
    """min sum_{i<=n} mu_i rho^i(X^i) subject to sum_{i<=n} mu_i X^i = X, for the first n members."""

    def __init__(self, members, x):
        self.members = members
        self.x = x
        self.d = x.space.atom_count
        self.weights = np.array([m.weight for m in members])
        self.pivot = int(np.argmax(self.weights))
        self.others = [k for k in range(len(members)) if k != self.pivot]

    def components(self, z):
        """Full component matrix from the free components; the pivot absorbs the constraint."""
        X = np.zeros((len(self.members), self.d))
        if self.others:
            X[self.others] = z.reshape(len(self.others), self.d)
        rest = self.weights[self.others] @ X[self.others] if self.others else 0.0
        X[self.pivot] = (self.x.values - rest) / self.weights[self.pivot]
        return X

    def objective(self, z):
        X = self.components(z)
        return float(sum(w * evaluate(m.spec, Position(row, self.x.space)) for w, m, row in zip(self.weights, self.members, X)))

    def start(self):
        return np.tile(self.x.values, len(self.others))

    def allocation(self, X, mu):
        return Allocation({m.index: Position(row, self.x.space) for m, row in zip(self.members, X)}, mu)


def _entropic_gradient(spec, values, space):
    return -gibbs_density(spec.gamma, Position(values, space)).weights


def _smooth_minimize(program):
    """BFGS over the free components; every member is entropic."""
    specs = [canonical(m.spec) for m in program.members]
    space = program.x.space
    w = program.weights

    def fun(z):
        X = program.components(z)
        value = sum(wi * evaluate(s, Position(row, space)) for wi, s, row in zip(w, specs, X))
        grads = [_entropic_gradient(s, row, space) for s, row in zip(specs, X)]
        pivot_grad = grads[program.pivot]
        jac = np.concatenate([w[k] * (grads[k] - pivot_grad) for k in program.others]) if program.others else np.zeros(0)
        return float(value), jac

    if not program.others:
        return program.components(np.zeros(0))
    rng = np.random.default_rng(0)
    scale = 1.0 + program.x.sup_norm()
    starts = [program.start(), np.zeros(len(program.others) * program.d),
              rng.normal(scale=scale, size=len(program.others) * program.d)]
    best = None
    for z0 in starts:
        answer = minimize(fun, z0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 20000})
        if best is None or answer.fun < best.fun:
            best = answer
    return program.components(best.x)


def _lifted_rows(program):
    """
    Linear lift of the expected-shortfall pieces: ES^a(Y) = min_t t + E[(-Y - t)+]/a.
    Returns the cost vector, inequality rows, bounds and the smooth (entropic) members.
    """
    n, d = len(program.members), program.d
    p = program.x.probabilities
    cost = [np.zeros(n * d)]
    rows, bounds = [], [(None, None)] * (n * d)
    smooth = []
    extra = 0

    def add_variables(count, coefficients, var_bounds):
        nonlocal extra
        cost.append(np.asarray(coefficients, dtype=float))
        bounds.extend(var_bounds)
        start = n * d + extra
        extra += count
        return start

    pieces = []
    for k, m in enumerate(program.members):
        spec = canonical(m.spec)
        if spec.kind is MeasureKind.ENTROPIC:
            smooth.append((k, spec))
            continue
        for level, mass in es_decomposition(spec):
            pieces.append((k, level, program.weights[k] * mass))
    for k, level, w in pieces:
        block = slice(k * d, (k + 1) * d)
        if level >= 1.0:
            cost[0][block] -= w * p
        elif level <= 0.0:
            t = add_variables(1, [w], [(None, None)])
            rows.append((block, t, None))
        else:
            t = add_variables(1 + d, np.concatenate(([w], w / level * p)), [(None, None)] + [(0.0, None)] * d)
            rows.append((block, t, t + 1))
    size = n * d + extra
    A_ub = []
    for block, t, s in rows:
        for atom in range(d):
            row = np.zeros(size)
            row[block.start + atom] = -1.0
            row[t] = -1.0
            if s is not None:
                row[s + atom] = -1.0
            A_ub.append(row)
    A_eq = np.zeros((d, size))
    for k, w in enumerate(program.weights):
        A_eq[:, k * d:(k + 1) * d] = w * np.eye(d)
    return np.concatenate(cost), np.array(A_ub).reshape(-1, size), A_eq, bounds, smooth


def _lp_minimize(program):
    c, A_ub, A_eq, bounds, _ = _lifted_rows(program)
    answer = linprog(c, A_ub=A_ub if len(A_ub) else None, b_ub=np.zeros(len(A_ub)) if len(A_ub) else None,
                     A_eq=A_eq, b_eq=program.x.values, bounds=bounds, method="highs")
    if answer.status == 3:
        return None
    if answer.status == 2:
        raise InfeasibleProblem("oracle LP infeasible: {:s}".format(answer.message))
    if answer.status != 0:
        raise SolverError("oracle LP failed: {:s}".format(answer.message))
    n, d = len(program.members), program.d
    return answer.x[:n * d].reshape(n, d)


def _mixed_minimize(program):
    c, A_ub, A_eq, bounds, smooth = _lifted_rows(program)
    n, d = len(program.members), program.d
    space = program.x.space
    w = program.weights

    def fun(z):
        value = float(c @ z)
        grad = c.copy()
        for k, spec in smooth:
            row = z[k * d:(k + 1) * d]
            value += w[k] * evaluate(spec, Position(row, space))
            grad[k * d:(k + 1) * d] += w[k] * _entropic_gradient(spec, row, space)
        return value, grad

    z0 = np.zeros(len(c))
    z0[:n * d] = np.tile(program.x.values, n)
    # start the lift variables on their feasible side
    z0[n * d:] = np.abs(program.x.values).max() + 1.0
    constraints = [{"type": "eq", "fun": lambda z: A_eq @ z - program.x.values, "jac": lambda z: A_eq}]
    if len(A_ub):
        constraints.append({"type": "ineq", "fun": lambda z: -(A_ub @ z), "jac": lambda z: -A_ub})
    answer = minimize(fun, z0, jac=True, method="SLSQP", bounds=bounds, constraints=constraints,
                      options={"maxiter": 2000, "ftol": 1e-14})
    return answer.x[:n * d].reshape(n, d)


def _pattern_search(program, floor, budget=2000):
    """Compass search with step expansion; stops early once the objective falls below `floor`."""
    z = program.start()
    if len(z) == 0:
        return program.components(z)
    f = program.objective(z)
    step = 2.0 * program.x.sup_norm() + 1.0
    evaluations = 0
    while evaluations < budget and step > 1e-9 and f > floor:
        improved = False
        for coordinate in range(len(z)):
            for direction in (1.0, -1.0):
                trial = z.copy()
                trial[coordinate] += direction * step
                ft = program.objective(trial)
                evaluations += 1
                if ft < f - 1e-12:
                    z, f, improved = trial, ft, True
                    break
            if improved:
                break
        step = step * 2.0 if improved else step * 0.5
    return program.components(z)


def _oracle_kind(members):
    specs = [canonical(m.spec) for m in members]
    if any(not properties(s).convex for s in specs):
        return "pattern"
    smooth = [s.kind is MeasureKind.ENTROPIC for s in specs]
    if all(smooth):
        return "smooth"
    if any(smooth):
        return "mixed"
    return "lp"


def convolve_primal_oracle(roster, mu, x, n_max=None, tolerances=TOLERANCES):
    members = roster.aligned(mu)
    n_max = len(members) if n_max is None else max(1, min(int(n_max), len(members)))
    floor = -(x.sup_norm() + tolerances.divergence)
    trace = []
    best = None
    diverging = False
    for n in range(1, n_max + 1):
        program = _FiniteProgram(members[:n], x)
        kind = _oracle_kind(program.members)
        if kind == "lp":
            X = _lp_minimize(program)
            if X is None:
                trace.append((n, -np.inf))
                diverging = True
                logger.warning("oracle LP unbounded at n=%d", n)
                break
        elif kind == "smooth":
            X = _smooth_minimize(program)
        elif kind == "mixed":
            X = _mixed_minimize(program)
        else:
            X = _pattern_search(program, floor)
        X[program.pivot] = program.components(np.concatenate([X[k] for k in program.others]) if program.others
                                              else np.zeros(0))[program.pivot]
        value = float(sum(w * evaluate(m.spec, Position(row, x.space)) for w, m, row in zip(program.weights, program.members, X)))
        trace.append((n, value))
        logger.debug("oracle n=%d (%s): %.12g", n, kind, value)
        if best is None or value < best[0]:
            best = (value, program.allocation(X, mu))
        if value < floor:
            diverging = True
            logger.warning("oracle trace fell below %.3g at n=%d: evidence of an unbounded convolution", floor, n)
            break
    notes = ["finite-n oracle over the first {:d} indices".format(trace[-1][0])]
    if diverging:
        notes.append("evidence of value -inf")
        bound = best[0] if best else None
        return ConvolutionResult(-np.inf, ConvolutionMethod.PRIMAL_ORACLE, best[1] if best else None,
                                 finite_n_trace=trace, diverging=True, bound=bound, notes=notes,
                                 discarded_mass=mu.support.discarded_mass)
    return ConvolutionResult(best[0], ConvolutionMethod.PRIMAL_ORACLE, best[1], finite_n_trace=trace, notes=notes,
                             discarded_mass=mu.support.discarded_mass)


def _program_route(members):
    specs = [m.spec for m in members]
    if all(properties(s).coherent for s in specs):
        return ConvolutionMethod.DUAL_LP
    if all(properties(s).convex for s in specs):
        return ConvolutionMethod.PENALTY_PROGRAM
    return ConvolutionMethod.PRIMAL_ORACLE


def _run(method, roster, mu, x, n_max, tolerances):
    if method is ConvolutionMethod.DUAL_LP:
        return convolve_dual_lp(roster, mu, x, tolerances)
    if method is ConvolutionMethod.PENALTY_PROGRAM:
        return convolve_penalty_program(roster, mu, x, tolerances=tolerances)
    if method is ConvolutionMethod.PRIMAL_ORACLE:
        return convolve_primal_oracle(roster, mu, x, n_max, tolerances)
    result = convolve_closed_form(roster, mu, x)
    if result is None:
        raise PreconditionError("closed form needs a single index, an expected shortfall family, "
                                "a dilated family or concave distortions")
    return result


def convolve(roster, mu, x, method="auto", n_max=None, tolerances=TOLERANCES):
    """
    Route dispatch. `auto` prefers the closed form and cross-checks it against one
    program route, reporting the absolute residual; without a closed form it picks
    the strongest applicable program.
    """
    if isinstance(method, str) and method != "auto":
        method = METHOD_ALIASES.get(method) or ConvolutionMethod(method)
    if method != "auto":
        return _run(method, roster, mu, x, n_max, tolerances)
    members = roster.aligned(mu)
    route = _program_route(members)
    closed = convolve_closed_form(roster, mu, x)
    if closed is None:
        logger.debug("no closed form; using %s", route.value)
        if route is ConvolutionMethod.PRIMAL_ORACLE:
            return convolve_primal_oracle(roster, mu, x, n_max, tolerances)
        try:
            return _run(route, roster, mu, x, n_max, tolerances)
        except (SizeError, NumericalError, SolverError) as error:
            logger.warning("%s failed (%s); falling back to the primal oracle", route.value, error)
            result = convolve_primal_oracle(roster, mu, x, n_max, tolerances)
            result.notes.append("{:s} failed: {}".format(route.value, error))
            return result
    try:
        check = _run(route, roster, mu, x, n_max, tolerances)
    except (NumericalError, SolverError, SizeError) as error:
        logger.warning("cross-check via %s failed: %s", route.value, error)
        closed.notes.append("cross-check via {:s} failed".format(route.value))
        return closed
    closed.cross_method = route
    if check.diverging or closed.value == -np.inf:
        closed.residual = np.inf
    else:
        closed.residual = abs(closed.value - check.value)
    if closed.residual > tolerances.oracle:
        logger.warning("closed form %.12g and %s %.12g disagree", closed.value, route.value, check.value)
    if closed.dual_witness is None and check.dual_witness is not None:
        closed.dual_witness = check.dual_witness
    return closed


@dataclass
class MembershipResult:
    accepted: bool
    value: float
    witness: Allocation = None

    def __bool__(self):
        return self.accepted


def acceptance_set_membership_conv(roster, mu, x, tolerances=TOLERANCES):
    """
    X is acceptable for the convolution iff its value is <= 0. When an optimal allocation is
    known, shifting each component by rho^i(X^i) minus the allocation's weighted risk gives every
    component that same risk,
    exhibiting X as a weighted sum of acceptable positions.
    """
    result = convolve(roster, mu, x, tolerances=tolerances)
    accepted = result.value <= Tolerances.probability
    witness = None
    if accepted and np.isfinite(result.value):
        allocation = result.allocation
        if allocation is None:
            try:
                allocation, _ = optimal_allocation(roster, mu, x, tolerances)
            except PreconditionError:
                return MembershipResult(accepted, result.value)
        risks = allocation.component_risks(roster)
        level = allocation.weighted_risk(roster)
        shifted = allocation.shifted({i: r - level for i, r in risks.items()})
        if all(evaluate(roster.spec_for(i), shifted.component(i)) <= tolerances.certificate for i in shifted.indices):
            witness = shifted
    return MembershipResult(accepted, result.value, witness)


def convolved_capacity(roster, mu, space):
    """A -> min_i c^i(A), the capacity of the convolution of concave-distortion members."""
    members = roster.aligned(mu)
    distortions = [distortion_of(m.spec) for m in members]

    def capacity(atoms):
        probability = space.probability_of(atoms)
        return float(min(g(probability) for g in distortions))
    return capacity


def optimal_allocation(roster, mu, x, tolerances=TOLERANCES):
    """Best known allocation: closed form when it carries one, distortion allocation, else the primal oracle."""
    closed = convolve_closed_form(roster, mu, x)
    if closed is not None and closed.allocation is not None:
        return closed.allocation, closed
    members = roster.aligned(mu)
    if closed is not None and all(_has_concave_distortion(canonical(m.spec)) for m in members):
        allocation = distortion_allocation(members, mu, x)
        return allocation, closed
    oracle = convolve_primal_oracle(roster, mu, x, tolerances=tolerances)
    if oracle.diverging:
        raise PreconditionError("the convolution is unbounded below; no optimal allocation exists")
    return oracle.allocation, oracle
