"""
Regulatory arbitrage: the self-convolution rho^i = rho for every index, the gap
tau(X) = rho(X) - rho_conv(X), the classification rules and the explicit VaR descent.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
import numpy as np
from .shared import DomainError, PreconditionError, RiskConvError, TOLERANCES
from .space import FiniteProbabilitySpace
from .measures import MeasureKind, RiskMeasureSpec, evaluate, properties
from .convolution import Allocation, MeasureRoster, convolve


logger = logging.getLogger(__name__)

DEFAULT_M_GRID = tuple(10.0 ** j for j in range(7))


class ArbitrageClass(enum.Enum):
    FREE = "free"
    AT_MOST_FINITE = "at_most_finite"
    FINITE = "finite"
    INFINITE_EVIDENCE = "infinite_evidence"
    UNKNOWN = "unknown"


@dataclass
class Classification:
    arbitrage_class: ArbitrageClass
    reason: str
    evidence: dict = field(default_factory=dict)
    probe: object = None


@dataclass
class ArbitrageReport:
    """
    tau_value is finite. With infinite evidence it is the largest gap seen along the
    descent trace and `unbounded` is set; the trace itself is the certificate.
    """
    tau_value: float
    classification: Classification
    descent_trace: list = field(default_factory=list)
    unbounded: bool = False
    risk: float = None
    convolution: float = None
    notes: list = field(default_factory=list)

    @property
    def arbitrage_class(self):
        return self.classification.arbitrage_class

    def as_dict(self):
        return {"tau": self.tau_value, "unbounded": self.unbounded, "risk": self.risk, "convolution": self.convolution,
                "classification": self.arbitrage_class.value, "reason": self.classification.reason,
                "evidence": self.classification.evidence, "descent_trace": [[m, v] for m, v in self.descent_trace],
                "notes": list(self.notes)}


@dataclass
class ProbeResult:
    certified: bool
    samples: int
    counterexample: Allocation = None
    violation: float = 0.0
    notes: list = field(default_factory=list)

    def __bool__(self):
        return self.certified


def descent_threshold(alpha):
    """Smallest k >= 2 with 1/k < alpha; the construction needs k+1 active weights."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError("VaR level must lie in (0, 1]")
    return max(2, math.floor(1.0 / alpha) + 1)


def _partition_size(alpha, support_size, space):
    k = descent_threshold(alpha)
    if support_size < k + 1:
        raise PreconditionError("insufficient support cardinality: need {:d} active weights, have {:d}".format(k + 1, support_size))
    if not space.is_equiprobable:
        raise PreconditionError("partition into events of probability 1/k needs an equiprobable space")
    d = space.atom_count
    for candidate in range(k, support_size):
        if d % candidate == 0:
            return candidate
    raise PreconditionError("cannot partition {:d} equiprobable atoms into k >= {:d} events of probability 1/k".format(d, k))


def var_descent_construction(alpha, mu, x, m, k=None):
    """
    Allocation X^{i_j} = m (1 - k 1_{B_j}) / ((k-1) mu_{i_j}), j = 1..k, and X^{i_{k+1}} = x / mu_{i_{k+1}}.
    Each of the first k components loses with probability 1/k < alpha, so its VaR is
    -m / ((k-1) mu_{i_j}), and the weighted VaR drops to VaR(x) - m k / (k-1).
    """
    if m < 0:
        raise DomainError("descent parameter m must be nonnegative")
    support = mu.support
    if k is None:
        k = _partition_size(alpha, len(support), x.space)
    elif k < descent_threshold(alpha) or k + 1 > len(support) or x.space.atom_count % k:
        raise PreconditionError("k={:d} does not satisfy the construction's hypotheses".format(k))
    chosen = support.entries[:k + 1]
    d = x.space.atom_count
    block = d // k
    components = {}
    for j, (index, weight) in enumerate(chosen[:k]):
        indicator = np.zeros(d)
        indicator[j * block:(j + 1) * block] = 1.0
        components[index] = x.space.position(m * (1.0 - k * indicator) / ((k - 1) * weight))
    last, weight = chosen[k]
    components[last] = x / weight
    objective = evaluate(RiskMeasureSpec.value_at_risk(alpha), x) - m * k / (k - 1)
    return Allocation(components, mu), objective


def descent_trace(alpha, mu, x, m_grid=DEFAULT_M_GRID):
    return [(float(m), var_descent_construction(alpha, mu, x, m)[1]) for m in m_grid]


def classify(spec, mu, space=None, sample_count=200):
    props = properties(spec)
    support_size = len(mu.support)
    if props.convex:
        return Classification(ArbitrageClass.FREE, "convex risk measures are free of regulatory arbitrage")
    if spec.kind is MeasureKind.VALUE_AT_RISK:
        k = descent_threshold(spec.alpha)
        evidence = {"k": k, "required_support": k + 1, "support": support_size}
        if support_size >= k + 1:
            return Classification(ArbitrageClass.INFINITE_EVIDENCE, "VaR splits into {:d} parts each losing with probability 1/{:d}".format(k, k), evidence)
        probe = i_convexity_probe(spec, mu, sample_count, space)
        return Classification(ArbitrageClass.UNKNOWN, "support smaller than the descent threshold", evidence, probe)
    if props.subadditive:
        return Classification(ArbitrageClass.AT_MOST_FINITE, "subadditive risk measures have at most finite arbitrage")
    if props.loaded and props.limited:
        return Classification(ArbitrageClass.FINITE, "loaded and limited risk measures have finite arbitrage")
    probe = i_convexity_probe(spec, mu, sample_count, space)
    return Classification(ArbitrageClass.UNKNOWN, "no rule applies; probe attached", {}, probe)


def tau(spec, mu, x, m_grid=None):
    """rho(X) - rho_conv(X) for the roster rho^i = rho on the support of mu."""
    classification = classify(spec, mu, x.space, sample_count=50)
    risk = evaluate(spec, x)
    notes = []
    if classification.arbitrage_class is ArbitrageClass.INFINITE_EVIDENCE:
        try:
            trace = descent_trace(spec.alpha, mu, x, DEFAULT_M_GRID if m_grid is None else m_grid)
        except PreconditionError as error:
            if m_grid is not None:
                raise
            notes.append("descent construction unavailable: {}".format(error))
            logger.info("descent construction unavailable (%s); using the convolution routes", error)
        else:
            _certify_trace(trace, classification)
            lowest = min(value for _, value in trace)
            return ArbitrageReport(risk - lowest, classification, trace, True, risk, None, notes)
    roster = MeasureRoster.homogeneous(spec)
    result = convolve(roster, mu, x)
    notes.extend(result.notes)
    if result.diverging:
        bound = result.bound
        return ArbitrageReport(risk - bound, classification, result.finite_n_trace or [], True, risk, None, notes)
    gap = risk - result.value
    if classification.arbitrage_class is ArbitrageClass.FREE:
        if abs(gap) > TOLERANCES.oracle:
            logger.warning("free-of-arbitrage check failed for %s: tau=%.3g", spec.label, gap)
            notes.append("numeric tau exceeds tolerance")
        else:
            notes.append("numeric tau within tolerance")
    return ArbitrageReport(gap, classification, [], False, risk, result.value, notes)


def _certify_trace(trace, classification):
    """The trace must be affine in m with slope -k/(k-1); anything else is not a certificate."""
    k = classification.evidence["k"]
    slopes = [(v1 - v0) / (m1 - m0) for (m0, v0), (m1, v1) in zip(trace, trace[1:]) if m1 != m0]
    expected = -k / (k - 1)
    if slopes:
        # the construction may have used a larger partition than the threshold
        observed = slopes[0]
        if any(abs(s - observed) > 1e-9 * abs(observed) for s in slopes):
            raise RiskConvError("descent trace is not affine in m")
        classification.evidence["slope"] = observed
        classification.evidence["threshold_slope"] = expected


def roster_tau(roster, mu, x):
    """sum_i mu_i rho^i(X) - rho_conv(X): what the weighted regulator loses to redistribution."""
    members = roster.aligned(mu)
    direct = sum(member.weight * evaluate(member.spec, x) for member in members)
    result = convolve(roster, mu, x)
    if result.diverging:
        return np.inf
    return float(direct - result.value)


def i_convexity_probe(spec, mu, sample_count, space=None, seed=0):
    """Sample rho(sum_i mu_i X^i) <= sum_i mu_i rho(X^i) + 1e-9; VaR first tries the descent construction."""
    if sample_count < 1:
        raise DomainError("sample_count must be positive")
    space = FiniteProbabilitySpace.equiprobable(4) if space is None else space
    support = mu.support
    roster = MeasureRoster.homogeneous(spec)
    if spec.kind is MeasureKind.VALUE_AT_RISK:
        try:
            allocation, objective = var_descent_construction(spec.alpha, mu, space.constant(0.0), 1.0)
        except PreconditionError as error:
            logger.debug("descent construction unavailable for the probe: %s", error)
        else:
            violation = 0.0 - allocation.weighted_risk(roster)
            if violation > 1e-9:
                return ProbeResult(False, 0, allocation, violation, ["descent construction"])
    rng = np.random.default_rng(seed)
    for sample in range(sample_count):
        components = {i: space.position(rng.normal(scale=rng.uniform(0.1, 10.0), size=space.atom_count))
                      for i in support.indices}
        allocation = Allocation(components, mu)
        violation = evaluate(spec, allocation.total()) - allocation.weighted_risk(roster)
        if violation > 1e-9:
            return ProbeResult(False, sample + 1, allocation, violation, ["random sampling"])
    return ProbeResult(True, sample_count, notes=["sampled only"])


@dataclass
class HomogeneityProbe:
    scales: list
    values: list
    at_zero: float
    vanishes: bool
    consistent: bool
    notes: list = field(default_factory=lambda: ["sampled only"])


def homogeneity_probe(spec, mu, x, scales=(1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e3)):
    """
    For positively homogeneous members the convolution is either zero at 0 and
    positively homogeneous, or -inf there; sample lambda -> rho_conv(lambda X).
    """
    if not properties(spec).positively_homogeneous:
        raise PreconditionError("{:s} is not positively homogeneous".format(spec.label))
    roster = MeasureRoster.homogeneous(spec)
    at_zero = convolve(roster, mu, x.space.constant(0.0))
    values = []
    for scale in scales:
        result = convolve(roster, mu, x * scale)
        values.append(-np.inf if result.diverging else result.value)
    if at_zero.diverging:
        consistent = all(v == -np.inf for v in values)
        return HomogeneityProbe(list(scales), values, -np.inf, False, consistent)
    reference = values[list(scales).index(1.0)] if 1.0 in scales else values[0] / scales[0]
    consistent = all(np.isfinite(v) and abs(v / s - reference) <= 1e-6 * max(1.0, abs(reference)) for s, v in zip(scales, values))
    return HomogeneityProbe(list(scales), values, at_zero.value, abs(at_zero.value) <= 1e-9, consistent)


@dataclass
class DominanceProbe:
    premise: bool
    transferred: bool
    samples: int
    violations: list = field(default_factory=list)


def dominance_probe(spec_a, spec_b, mu, samples=20, space=None, seed=0):
    """Where rho_a <= rho_b on the samples, check rho_a,conv <= rho_b,conv there too."""
    space = FiniteProbabilitySpace.equiprobable(4) if space is None else space
    rng = np.random.default_rng(seed)
    roster_a, roster_b = MeasureRoster.homogeneous(spec_a), MeasureRoster.homogeneous(spec_b)
    premise, violations = True, []
    for _ in range(samples):
        x = space.position(rng.normal(size=space.atom_count) * 5.0)
        if evaluate(spec_a, x) > evaluate(spec_b, x) + 1e-9:
            premise = False
            continue
        a, b = convolve(roster_a, mu, x), convolve(roster_b, mu, x)
        if not b.diverging and a.value > b.value + TOLERANCES.oracle:
            violations.append({"position": x.tolist(), "a": a.value, "b": b.value})
    return DominanceProbe(premise, not violations, samples, violations)
