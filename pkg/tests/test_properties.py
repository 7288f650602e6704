"""
Property checks on random instances: hypothesis for the cheap closed-form routes,
seeded loops where every instance runs a solver.
"""

import unittest
import numpy as np
from scipy.special import rel_entr
from hypothesis import given, settings
import hypothesis.strategies as st
from riskconv.space import (FiniteProbabilitySpace, upper_partial_moment, is_comonotone_pair, left_quantile, ssd_dominates,
                            conditional_expectation_given)
from riskconv.measures import RiskMeasureSpec, DistortionFunction, DualVector, penalty
from riskconv.weights import WeightScheme
from riskconv.convolution import (MeasureRoster, Allocation, convolve_closed_form, convolve_dual_lp,
                                  convolve_penalty_program, convolve_primal_oracle, penalty_objective)
from riskconv.allocation import comonotone_improve, is_comonotone_family, quantile_additivity_check
from riskconv.arbitrage import ArbitrageClass, classify, i_convexity_probe, tau


HALF = WeightScheme.from_weights([0.5, 0.5])
ES_PAIR = MeasureRoster.from_list([RiskMeasureSpec.expected_shortfall(0.1), RiskMeasureSpec.expected_shortfall(0.3)])
DISTORTIONS = MeasureRoster.from_list([
    RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.2, 1.0], [0.0, 0.7, 1.0])),
    RiskMeasureSpec.spectral(((0.25, 0.5), (1.0, 0.5))),
])
ENTROPIC_PAIR = MeasureRoster.from_list([RiskMeasureSpec.entropic(1.0), RiskMeasureSpec.entropic(3.0)])
ROSTERS = [ES_PAIR, DISTORTIONS, ENTROPIC_PAIR]
SPACE = FiniteProbabilitySpace.equiprobable(6)

values = st.lists(st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False), min_size=6, max_size=6)
rosters = st.sampled_from(ROSTERS)


def conv(roster, x):
    return convolve_closed_form(roster, HALF, SPACE.position(x)).value


class InheritedPropertiesTest(unittest.TestCase):
    @given(rosters, values, st.lists(st.floats(0.0, 5.0), min_size=6, max_size=6))
    @settings(max_examples=500, deadline=None)
    def test_monotone(self, roster, x, bump):
        self.assertGreaterEqual(conv(roster, x) + 1e-8, conv(roster, np.add(x, bump)))

    @given(rosters, values, st.floats(-20.0, 20.0))
    @settings(max_examples=500, deadline=None)
    def test_translation(self, roster, x, c):
        self.assertAlmostEqual(conv(roster, x) - c, conv(roster, np.add(x, c)), delta=1e-8)

    @given(rosters, values, values, st.floats(0.0, 1.0))
    @settings(max_examples=500, deadline=None)
    def test_convex(self, roster, x, y, lam):
        mixed = lam * np.asarray(x) + (1.0 - lam) * np.asarray(y)
        self.assertLessEqual(conv(roster, mixed), lam * conv(roster, x) + (1.0 - lam) * conv(roster, y) + 1e-8)

    @given(st.sampled_from([ES_PAIR, DISTORTIONS]), values, st.floats(0.0, 50.0))
    @settings(max_examples=500, deadline=None)
    def test_positively_homogeneous(self, roster, x, lam):
        self.assertAlmostEqual(lam * conv(roster, x), conv(roster, lam * np.asarray(x)), delta=1e-8 * max(1.0, lam))

    @given(rosters, values)
    @settings(max_examples=500, deadline=None)
    def test_loaded_and_limited(self, roster, x):
        value = conv(roster, x)
        self.assertGreaterEqual(value, -np.mean(x) - 1e-8)
        self.assertLessEqual(value, -min(x) + 1e-8)

    @given(rosters, values, st.permutations(range(6)))
    @settings(max_examples=500, deadline=None)
    def test_law_invariant(self, roster, x, order):
        self.assertAlmostEqual(conv(roster, x), conv(roster, np.asarray(x)[list(order)]), delta=1e-8)

    @given(rosters, values, values)
    @settings(max_examples=500, deadline=None)
    def test_lipschitz(self, roster, x, y):
        bound = float(np.max(np.abs(np.subtract(x, y))))
        self.assertLessEqual(abs(conv(roster, x) - conv(roster, y)), bound + 1e-8)

    @given(values)
    @settings(max_examples=200, deadline=None)
    def test_closed_form_allocation(self, x):
        x = SPACE.position(x)
        result = convolve_closed_form(ENTROPIC_PAIR, HALF, x)
        self.assertTrue(result.allocation.sums_to(x))
        self.assertAlmostEqual(result.value, result.allocation.weighted_risk(ENTROPIC_PAIR), delta=1e-8)


class PenaltyAdditivityTest(unittest.TestCase):
    def setUp(self):
        self.space = FiniteProbabilitySpace.equiprobable(4)
        self.x = self.space.position([0.7, -1.2, 0.1, 2.0])

    def test_decomposition(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = DualVector(rng.dirichlet(np.ones(4)), self.space)
            terms = [0.5 * penalty(spec, q) for spec in (RiskMeasureSpec.entropic(1.0), RiskMeasureSpec.entropic(3.0))]
            self.assertAlmostEqual(q.expectation(-self.x) - sum(terms), penalty_objective(ENTROPIC_PAIR, HALF, self.x, q),
                                   places=12)

    def test_grid_search(self):
        n = 180
        a, b, c = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = a + b + c <= n
        grid = np.stack([a[keep], b[keep], c[keep], n - a[keep] - b[keep] - c[keep]], axis=1) / n
        kappa = 0.5 / 1.0 + 0.5 / 3.0
        objective = -grid @ self.x.values - kappa * rel_entr(grid, self.space.probabilities).sum(axis=1)
        value = convolve_penalty_program(ENTROPIC_PAIR, HALF, self.x).value
        self.assertGreaterEqual(value + 1e-9, objective.max())
        self.assertAlmostEqual(value, objective.max(), delta=1e-4)


class DualIntersectionTest(unittest.TestCase):
    def test_against_oracle(self):
        rng = np.random.default_rng(21)
        g = DistortionFunction([0.0, 0.3, 1.0], [0.0, 0.8, 1.0])
        rosters = [
            MeasureRoster.from_list([RiskMeasureSpec.expected_loss(), RiskMeasureSpec.expected_shortfall(0.25)]),
            MeasureRoster.from_list([RiskMeasureSpec.expected_shortfall(0.15), RiskMeasureSpec.expected_shortfall(0.5)]),
            MeasureRoster.from_list([RiskMeasureSpec.expected_shortfall(0.35), RiskMeasureSpec.from_distortion(g)]),
        ]
        for k in range(30):
            roster = rosters[k % 3]
            d = int(rng.integers(2, 7))
            space = FiniteProbabilitySpace(rng.dirichlet(np.ones(d)))
            x = space.position(rng.normal(size=d) * 2)
            mu = WeightScheme.from_weights(rng.dirichlet(np.full(2, 3.0)))
            dual = convolve_dual_lp(roster, mu, x)
            oracle = convolve_primal_oracle(roster, mu, x)
            self.assertAlmostEqual(dual.value, oracle.value, delta=1e-5)


class ImprovementTest(unittest.TestCase):
    def test_random_allocations(self):
        rng = np.random.default_rng(5)
        space = FiniteProbabilitySpace.equiprobable(8)
        es = RiskMeasureSpec.expected_shortfall(0.25)
        for _ in range(100):
            n = int(rng.integers(2, 5))
            mu = WeightScheme.from_weights(rng.dirichlet(np.full(n, 3.0)))
            weights = mu.support.weights
            x = space.position(rng.normal(size=8) * 3)
            components = {i: space.position(rng.normal(size=8) * 3) for i in range(1, n)}
            rest = x - sum(weights[i - 1] * components[i] for i in range(1, n))
            components[n] = rest / weights[n - 1]
            alloc = Allocation(components, mu)
            roster = MeasureRoster.homogeneous(es)
            improved = comonotone_improve(alloc, x)
            self.assertTrue(is_comonotone_family(improved))
            self.assertTrue(quantile_additivity_check(improved, x))
            self.assertTrue(improved.sums_to(x, 1e-9))
            for i in range(1, n + 1):
                thresholds = np.union1d(alloc.component(i).values, improved.component(i).values)
                after = upper_partial_moment(improved.component(i), thresholds)
                before = upper_partial_moment(alloc.component(i), thresholds)
                self.assertTrue(np.all(after <= before + 1e-9))
            self.assertLessEqual(improved.weighted_risk(roster), alloc.weighted_risk(roster) + 1e-8)


class ArbitrageTaxonomyTest(unittest.TestCase):
    def test_free_measures(self):
        rng = np.random.default_rng(9)
        for k in range(50):
            d = int(rng.integers(2, 7))
            x = FiniteProbabilitySpace(rng.dirichlet(np.ones(d))).position(rng.normal(size=d))
            mu = WeightScheme.from_weights(rng.dirichlet(np.ones(int(rng.integers(1, 5)))))
            spec = RiskMeasureSpec.entropic(float(rng.uniform(0.2, 3.0))) if k % 2 \
                else RiskMeasureSpec.expected_shortfall(float(rng.uniform(0.05, 1.0)))
            report = tau(spec, mu, x)
            self.assertIs(ArbitrageClass.FREE, report.arbitrage_class)
            self.assertLessEqual(abs(report.tau_value), 1e-6)

    def test_var_trace_is_certified(self):
        x = FiniteProbabilitySpace.equiprobable(6).position([3.0, -1.0, 0.0, 2.0, 5.0, -4.0])
        report = tau(RiskMeasureSpec.value_at_risk(0.4), WeightScheme.uniform(4), x)
        self.assertTrue(report.unbounded)
        self.assertAlmostEqual(-1.5, report.classification.evidence["slope"], places=9)

    @given(st.sampled_from(["EL", "ES", "Entropic", "ML", "VaR"]), st.floats(0.05, 1.0), st.integers(1, 6))
    @settings(max_examples=100, deadline=None)
    def test_classify_agrees_with_i_convexity(self, kind, level, support):
        spec = {"EL": RiskMeasureSpec.expected_loss(), "ML": RiskMeasureSpec.maximum_loss(),
                "ES": RiskMeasureSpec.expected_shortfall(level), "Entropic": RiskMeasureSpec.entropic(level * 3),
                "VaR": RiskMeasureSpec.value_at_risk(level)}[kind]
        mu = WeightScheme.uniform(support)
        verdict = classify(spec, mu, sample_count=20)
        probe = i_convexity_probe(spec, mu, 20)
        if verdict.arbitrage_class is ArbitrageClass.FREE:
            self.assertTrue(probe)
        if not probe:
            self.assertIsNot(ArbitrageClass.FREE, verdict.arbitrage_class)


small_ints = st.lists(st.integers(-5, 5), min_size=6, max_size=6)
masses = st.lists(st.floats(0.05, 1.0), min_size=6, max_size=6)


class SpaceInvariantTest(unittest.TestCase):
    @given(small_ints, small_ints)
    @settings(max_examples=500, deadline=None)
    def test_comonotone_symmetric(self, a, b):
        x, y = SPACE.position(a), SPACE.position(b)
        self.assertEqual(is_comonotone_pair(x, y), is_comonotone_pair(y, x))

    @given(small_ints, small_ints)
    @settings(max_examples=500, deadline=None)
    def test_comonotone_under_increasing_maps(self, a, b):
        x, y = SPACE.position(a), SPACE.position(b)
        fx = SPACE.position(np.power(a, 3.0) + np.asarray(a))
        gy = SPACE.position(np.arctan(b))
        self.assertEqual(is_comonotone_pair(x, y), is_comonotone_pair(fx, gy))

    @given(small_ints, masses, st.floats(1e-3, 1.0))
    @settings(max_examples=1000, deadline=None)
    def test_quantiles_add_for_comonotone_pairs(self, a, weights, alpha):
        space = FiniteProbabilitySpace(np.asarray(weights) / np.sum(weights))
        x = space.position(a)
        y = space.position(np.floor(np.asarray(a) / 2.0) + 0.5 * np.asarray(a) ** 3)
        self.assertTrue(is_comonotone_pair(x, y))
        self.assertAlmostEqual(left_quantile(x, alpha) + left_quantile(y, alpha), left_quantile(x + y, alpha),
                               delta=1e-9)

    @given(values, st.lists(st.integers(0, 2), min_size=6, max_size=6), masses)
    @settings(max_examples=500, deadline=None)
    def test_conditional_expectation_is_dominating(self, a, z, weights):
        space = FiniteProbabilitySpace(np.asarray(weights) / np.sum(weights))
        x = space.position(a)
        e = conditional_expectation_given(x, space.position(z))
        self.assertTrue(ssd_dominates(e, x))
        self.assertAlmostEqual(x.mean(), e.mean(), delta=1e-9)


if __name__ == '__main__':
    unittest.main()
