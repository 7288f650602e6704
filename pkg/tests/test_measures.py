import unittest
import numpy as np
from scipy.special import rel_entr
from hypothesis import assume, given, settings
import hypothesis.strategies as st
from riskconv.shared import DomainError, UnsupportedMeasureError, SizeError, ScenarioError
from riskconv.space import FiniteProbabilitySpace
from riskconv.measures import (MeasureKind, DistortionFunction, RiskMeasureSpec, DualVector, HalfspaceSystem, evaluate,
                               acceptance_check, penalty, dual_set_halfspaces, subgradient_face, distortion_of,
                               es_decomposition, capacity_of, choquet_value, quantile_weighted_value, canonical,
                               properties, parse_descriptor, to_descriptor, gibbs_density)
from riskconv import lp


EL = RiskMeasureSpec.expected_loss()
ML = RiskMeasureSpec.maximum_loss()


def es(alpha):
    return RiskMeasureSpec.expected_shortfall(alpha)


class SpecTest(unittest.TestCase):
    def test_parameter_domains(self):
        with self.assertRaises(DomainError):
            es(0.0)
        with self.assertRaises(DomainError):
            es(1.5)
        with self.assertRaises(DomainError):
            RiskMeasureSpec.value_at_risk(0.0)
        with self.assertRaises(DomainError):
            RiskMeasureSpec.entropic(-1.0)
        with self.assertRaises(DomainError):
            RiskMeasureSpec.spectral([(0.5, 0.4)])

    def test_names_do_not_affect_equality(self):
        self.assertEqual(es(0.3), es(0.3).named("desk"))
        self.assertEqual("desk", str(es(0.3).named("desk")))
        self.assertEqual("ES(0.3)", str(es(0.3)))

    def test_canonical_dilation(self):
        self.assertEqual(RiskMeasureSpec.entropic(0.5), canonical(RiskMeasureSpec.dilated(RiskMeasureSpec.entropic(1.0), 2.0)))
        self.assertEqual(es(0.2), canonical(RiskMeasureSpec.dilated(es(0.2), 7.0)))

    def test_properties(self):
        self.assertTrue(properties(es(0.1)).coherent)
        var = properties(RiskMeasureSpec.value_at_risk(0.1))
        self.assertFalse(var.convex)
        self.assertTrue(var.positively_homogeneous)
        ent = properties(RiskMeasureSpec.entropic(1.0))
        self.assertTrue(ent.convex)
        self.assertFalse(ent.positively_homogeneous)


class DistortionTest(unittest.TestCase):
    def test_expected_shortfall_distortion(self):
        g = distortion_of(es(0.5))
        self.assertAlmostEqual(0.6, float(g(0.3)))
        self.assertAlmostEqual(1.0, float(g(0.7)))
        self.assertTrue(g.is_concave)
        self.assertEqual(DistortionFunction.identity(), distortion_of(EL))

    def test_spectral_single_component(self):
        self.assertEqual(distortion_of(es(0.5)), distortion_of(RiskMeasureSpec.spectral([(0.5, 1.0)])))

    def test_var_has_no_concave_distortion(self):
        with self.assertRaises(UnsupportedMeasureError):
            distortion_of(RiskMeasureSpec.value_at_risk(0.5))

    def test_minimum_inserts_crossings(self):
        g1 = DistortionFunction([0.0, 0.5, 1.0], [0.0, 0.9, 1.0])
        g2 = DistortionFunction([0.0, 1.0], [0.0, 1.0])
        g = DistortionFunction.minimum([g1, g2])
        for t in np.linspace(0, 1, 21):
            self.assertAlmostEqual(min(g1(t), g2(t)), float(g(t)))

    def test_validation(self):
        with self.assertRaises(DomainError):
            DistortionFunction([0.0, 1.0], [0.1, 1.0])
        with self.assertRaises(DomainError):
            DistortionFunction([0.0, 0.5, 1.0], [0.0, 0.8, 0.6])

    def test_es_decomposition(self):
        spec = RiskMeasureSpec.spectral([(0.2, 0.25), (0.6, 0.5), (1.0, 0.25)])
        parts = es_decomposition(spec)
        self.assertEqual([0.2, 0.6, 1.0], [a for a, _ in parts])
        self.assertTrue(np.allclose([0.25, 0.5, 0.25], [m for _, m in parts]))


class EvaluateTest(unittest.TestCase):
    def setUp(self):
        self.space = FiniteProbabilitySpace.equiprobable(4)
        self.x = self.space.position([-3, -1, 2, 5])

    def test_expected_shortfall(self):
        self.assertAlmostEqual(2.0, evaluate(es(0.5), self.x), places=12)
        self.assertAlmostEqual(3.0, evaluate(es(0.25), self.x), places=12)
        self.assertAlmostEqual(-self.x.mean(), evaluate(es(1.0), self.x), places=12)

    def test_simple_kinds(self):
        self.assertAlmostEqual(-0.75, evaluate(EL, self.x))
        self.assertAlmostEqual(3.0, evaluate(ML, self.x))
        self.assertAlmostEqual(1.0, evaluate(RiskMeasureSpec.value_at_risk(0.5), self.x))
        self.assertAlmostEqual(-3.0, evaluate(EL, self.space.constant(3.0)))

    def test_entropic_constant(self):
        for gamma in (0.1, 1.0, 5.0):
            self.assertAlmostEqual(-2.5, evaluate(RiskMeasureSpec.entropic(gamma), self.space.constant(2.5)), places=12)

    def test_entropic_formula(self):
        gamma = 0.7
        expected = np.log(np.mean(np.exp(-gamma * self.x.values))) / gamma
        self.assertAlmostEqual(expected, evaluate(RiskMeasureSpec.entropic(gamma), self.x), places=12)

    def test_distortion_on_indicator(self):
        space = FiniteProbabilitySpace([0.3, 0.2, 0.5])
        loss = space.indicator([0], -1.0)
        spec = RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.5, 1.0], [0.0, 1.0, 1.0]))
        self.assertAlmostEqual(0.6, evaluate(spec, loss))
        self.assertAlmostEqual(0.6, evaluate(es(0.5), loss))

    def test_distortion_representations_agree(self):
        rng = np.random.default_rng(3)
        g = DistortionFunction([0.0, 0.1, 0.4, 1.0], [0.0, 0.5, 0.8, 1.0])
        for _ in range(30):
            space = FiniteProbabilitySpace(rng.dirichlet(np.ones(5)))
            x = space.position(rng.normal(size=5))
            self.assertAlmostEqual(choquet_value(g, x), quantile_weighted_value(g, x), places=10)

    def test_spectral_is_es_mixture(self):
        spec = RiskMeasureSpec.spectral([(0.25, 0.5), (1.0, 0.5)])
        self.assertAlmostEqual(0.5 * 3.0 + 0.5 * -0.75, evaluate(spec, self.x), places=12)
        self.assertAlmostEqual(evaluate(spec, self.x), choquet_value(distortion_of(spec), self.x), places=12)

    def test_dilated(self):
        spec = RiskMeasureSpec.dilated(RiskMeasureSpec.entropic(1.0), 2.0)
        self.assertAlmostEqual(evaluate(RiskMeasureSpec.entropic(0.5), self.x), evaluate(spec, self.x), places=12)

    def test_acceptance(self):
        space = FiniteProbabilitySpace.equiprobable(2)
        for spec in (EL, ML, es(0.3), RiskMeasureSpec.entropic(2.0)):
            self.assertTrue(acceptance_check(spec, space.constant(0.0)))
        self.assertTrue(acceptance_check(EL, space.position([-1, 3])))
        self.assertFalse(acceptance_check(ML, space.position([-0.1, 5])))

    def test_capacity(self):
        space = FiniteProbabilitySpace([0.3, 0.2, 0.5])
        capacity = capacity_of(es(0.5), space)
        self.assertAlmostEqual(0.6, capacity([0]))
        self.assertAlmostEqual(1.0, capacity([0, 1]))
        self.assertAlmostEqual(0.0, capacity([]))


class DualTest(unittest.TestCase):
    def test_penalty_at_base_probability(self):
        space = FiniteProbabilitySpace([0.2, 0.3, 0.5])
        p = DualVector.base_probability(space)
        for spec in (EL, ML, es(0.4), RiskMeasureSpec.entropic(3.0)):
            self.assertEqual(0.0, penalty(spec, p))

    def test_entropic_penalty(self):
        q = DualVector([0.75, 0.25], FiniteProbabilitySpace.equiprobable(2))
        self.assertAlmostEqual(0.065406, penalty(RiskMeasureSpec.entropic(2.0), q), places=6)

    def test_coherent_penalty_boundary(self):
        space = FiniteProbabilitySpace.equiprobable(2)
        q = DualVector([1.0, 0.0], space)
        self.assertEqual(0.0, penalty(es(0.5), q))
        self.assertEqual(np.inf, penalty(es(0.8), q))
        self.assertEqual(np.inf, penalty(EL, q))
        self.assertEqual(0.0, penalty(ML, q))

    def test_var_has_no_penalty(self):
        q = DualVector.base_probability(FiniteProbabilitySpace.equiprobable(2))
        with self.assertRaises(UnsupportedMeasureError):
            penalty(RiskMeasureSpec.value_at_risk(0.5), q)

    def test_dual_sets(self):
        space = FiniteProbabilitySpace([0.2, 0.3, 0.5])
        el = dual_set_halfspaces(EL, space)
        self.assertTrue(el.contains(space.probabilities))
        self.assertFalse(el.contains([0.3, 0.2, 0.5]))
        ml = dual_set_halfspaces(ML, space)
        self.assertTrue(ml.contains([1.0, 0.0, 0.0]))
        half = dual_set_halfspaces(es(0.5), FiniteProbabilitySpace.equiprobable(2))
        self.assertTrue(half.contains([1.0, 0.0]))
        self.assertTrue(half.contains([0.5, 0.5]))

    def test_dual_representation_recovers_values(self):
        rng = np.random.default_rng(11)
        specs = [EL, ML, es(0.3), RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.3, 1.0], [0.0, 0.6, 1.0]))]
        for _ in range(10):
            space = FiniteProbabilitySpace(rng.dirichlet(np.ones(4)))
            x = space.position(rng.normal(size=4))
            for spec in specs:
                system = dual_set_halfspaces(spec, space)
                result = lp.solve_lp(x.values, system.A_ub if len(system.b_ub) else None,
                                     system.b_ub if len(system.b_ub) else None, system.A_eq, system.b_eq)
                self.assertTrue(result.success)
                self.assertAlmostEqual(evaluate(spec, x), -result.fun, places=9)

    def test_core_size_limit(self):
        spec = RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.3, 1.0], [0.0, 0.6, 1.0]))
        with self.assertRaises(SizeError):
            dual_set_halfspaces(spec, FiniteProbabilitySpace.equiprobable(21))

    def test_var_has_no_dual_set(self):
        with self.assertRaises(UnsupportedMeasureError):
            dual_set_halfspaces(RiskMeasureSpec.value_at_risk(0.5), FiniteProbabilitySpace.equiprobable(2))

    def test_subgradient_faces(self):
        space = FiniteProbabilitySpace.equiprobable(4)
        flat = subgradient_face(RiskMeasureSpec.entropic(1.0), space.constant(1.0))
        self.assertTrue(flat.is_point)
        self.assertTrue(np.allclose(space.probabilities, flat.point.weights))
        x = space.position([-3, -1, 2, 5])
        face = subgradient_face(es(0.5), x)
        self.assertTrue(face.contains(DualVector([0.5, 0.5, 0.0, 0.0], space)))
        self.assertFalse(face.contains(DualVector([0.25, 0.25, 0.25, 0.25], space)))
        el_face = subgradient_face(EL, x)
        self.assertTrue(el_face.contains(DualVector.base_probability(space)))

    def test_halfspace_stack(self):
        a = HalfspaceSystem(2, [[1.0, 0.0]], [0.6])
        b = HalfspaceSystem(2, [[0.0, 1.0]], [0.6])
        both = HalfspaceSystem.stack([a, b])
        self.assertTrue(both.contains([0.5, 0.5]))
        self.assertFalse(both.contains([0.7, 0.3]))
        self.assertEqual(4, both.row_count)


class DescriptorTest(unittest.TestCase):
    def test_parse(self):
        self.assertEqual(es(0.3), parse_descriptor({"kind": "ES", "alpha": 0.3}))
        self.assertEqual(EL, parse_descriptor({"kind": "expected_loss"}))
        spec = parse_descriptor({"kind": "Dilated", "gamma": 2, "base": {"kind": "Entropic", "gamma": 1}})
        self.assertIs(MeasureKind.DILATED, spec.kind)

    def test_round_trip(self):
        specs = [EL, ML, es(0.3), RiskMeasureSpec.value_at_risk(0.6), RiskMeasureSpec.entropic(2.0),
                 RiskMeasureSpec.spectral([(0.2, 0.5), (0.8, 0.5)]),
                 RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.3, 1.0], [0.0, 0.6, 1.0])),
                 RiskMeasureSpec.dilated(es(0.5), 3.0)]
        for spec in specs:
            self.assertEqual(spec, parse_descriptor(to_descriptor(spec)))

    def test_errors_carry_field(self):
        with self.assertRaises(ScenarioError) as context:
            parse_descriptor({"kind": "ES"}, "roster[0]")
        self.assertIn("roster[0]", str(context.exception))
        with self.assertRaises(ScenarioError):
            parse_descriptor({"kind": "nonsense"})
        with self.assertRaises(ScenarioError):
            parse_descriptor({"kind": "ES", "alpha": 0.0})


AXIOM_SPECS = [
    EL, ML, es(0.3), es(0.8), RiskMeasureSpec.value_at_risk(0.4), RiskMeasureSpec.entropic(0.5),
    RiskMeasureSpec.entropic(3.0), RiskMeasureSpec.spectral(((0.25, 0.5), (1.0, 0.5))),
    RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.3, 1.0], [0.0, 0.6, 1.0])),
    RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.5, 1.0], [0.0, 0.2, 1.0])),
    RiskMeasureSpec.dilated(RiskMeasureSpec.entropic(1.0), 2.0), RiskMeasureSpec.dilated(es(0.5), 3.0),
]
WEIGHTED = FiniteProbabilitySpace([0.05, 0.1, 0.15, 0.2, 0.22, 0.28])
EVEN = FiniteProbabilitySpace.equiprobable(6)
specs = st.sampled_from(AXIOM_SPECS)
vectors = st.lists(st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False), min_size=6, max_size=6)


def rho(spec, values, space=WEIGHTED):
    return evaluate(spec, space.position(values))


class AxiomTest(unittest.TestCase):
    """Every axiom a kind claims in properties() holds on random positions."""

    @given(specs, vectors, st.lists(st.floats(0.0, 5.0), min_size=6, max_size=6))
    @settings(max_examples=300, deadline=None)
    def test_monotone(self, spec, x, bump):
        self.assertGreaterEqual(rho(spec, x) + 1e-8, rho(spec, np.add(x, bump)))

    @given(specs, vectors, st.floats(-20.0, 20.0))
    @settings(max_examples=300, deadline=None)
    def test_cash_invariant(self, spec, x, c):
        self.assertAlmostEqual(rho(spec, x) - c, rho(spec, np.add(x, c)), delta=1e-8)

    @given(specs, vectors, vectors, st.floats(0.0, 1.0))
    @settings(max_examples=300, deadline=None)
    def test_convex(self, spec, x, y, lam):
        assume(properties(spec).convex)
        mixed = lam * np.asarray(x) + (1.0 - lam) * np.asarray(y)
        self.assertLessEqual(rho(spec, mixed), lam * rho(spec, x) + (1.0 - lam) * rho(spec, y) + 1e-8)

    @given(specs, vectors, vectors)
    @settings(max_examples=300, deadline=None)
    def test_subadditive(self, spec, x, y):
        assume(properties(spec).subadditive)
        self.assertLessEqual(rho(spec, np.add(x, y)), rho(spec, x) + rho(spec, y) + 1e-8)

    @given(specs, vectors, st.floats(0.0, 50.0))
    @settings(max_examples=300, deadline=None)
    def test_positively_homogeneous(self, spec, x, lam):
        assume(properties(spec).positively_homogeneous)
        self.assertAlmostEqual(lam * rho(spec, x), rho(spec, lam * np.asarray(x)), delta=1e-8 * max(1.0, lam))

    @given(specs, vectors)
    @settings(max_examples=300, deadline=None)
    def test_comonotone_additive(self, spec, x):
        assume(properties(spec).comonotone_additive)
        x = np.asarray(x)
        y = 2.0 * np.floor(x) + x ** 3 / 50.0
        self.assertAlmostEqual(rho(spec, x) + rho(spec, y), rho(spec, x + y), delta=1e-8)

    @given(specs, vectors, st.permutations(range(6)))
    @settings(max_examples=300, deadline=None)
    def test_law_invariant(self, spec, x, order):
        assume(properties(spec).law_invariant)
        self.assertAlmostEqual(rho(spec, x, EVEN), rho(spec, np.asarray(x)[list(order)], EVEN), delta=1e-8)

    @given(specs, vectors)
    @settings(max_examples=300, deadline=None)
    def test_loaded_and_limited(self, spec, x):
        value = rho(spec, x)
        claims = properties(spec)
        if claims.loaded:
            self.assertGreaterEqual(value, -WEIGHTED.position(x).mean() - 1e-8)
        if claims.limited:
            self.assertLessEqual(value, -min(x) + 1e-8)
        self.assertAlmostEqual(0.0, rho(spec, np.zeros(6)), places=12)

    def test_claims_that_fail(self):
        x = EVEN.position([-3.0, -1.0, 0.0, 1.0, 2.0, 5.0])
        entropic = RiskMeasureSpec.entropic(1.0)
        self.assertNotAlmostEqual(2.0 * evaluate(entropic, x), evaluate(entropic, x * 2.0), places=3)
        var = RiskMeasureSpec.value_at_risk(0.5)
        a, b = EVEN.position([-2.0, -2.0, 0, 0, 0, 0]), EVEN.position([0, 0, -2.0, -2.0, 0, 0])
        self.assertGreater(evaluate(var, (a + b) * 0.5), 0.5 * evaluate(var, a) + 0.5 * evaluate(var, b))
        convex_g = RiskMeasureSpec.from_distortion(DistortionFunction([0.0, 0.5, 1.0], [0.0, 0.2, 1.0]))
        self.assertLess(evaluate(convex_g, x), -x.mean())


class EntropicConjugateTest(unittest.TestCase):
    def setUp(self):
        self.space = FiniteProbabilitySpace.equiprobable(3)
        self.x = self.space.position([0.3, -0.2, 0.1])
        self.spec = RiskMeasureSpec.entropic(1.0)

    def objective(self, a, b):
        q = np.stack([a, b, 1.0 - a - b], axis=-1)
        inside = np.all(q >= 0.0, axis=-1)
        q = np.clip(q, 0.0, None)
        values = -(q @ self.x.values) - rel_entr(q, self.space.probabilities).sum(axis=-1) / self.spec.gamma
        return np.where(inside, values, -np.inf)

    def test_grid_maximum_matches_value(self):
        coarse = np.linspace(0.0, 1.0, 201)
        a, b = np.meshgrid(coarse, coarse, indexing="ij")
        values = self.objective(a, b)
        k = np.unravel_index(np.argmax(values), values.shape)
        fine_a = np.clip(coarse[k[0]] + np.linspace(-0.006, 0.006, 601), 0.0, 1.0)
        fine_b = np.clip(coarse[k[1]] + np.linspace(-0.006, 0.006, 601), 0.0, 1.0)
        a, b = np.meshgrid(fine_a, fine_b, indexing="ij")
        best = max(float(np.max(values)), float(np.max(self.objective(a, b))))
        value = evaluate(self.spec, self.x)
        self.assertLessEqual(best, value + 1e-12)
        self.assertAlmostEqual(value, best, delta=1e-6)

    def test_gibbs_density_attains_value(self):
        for gamma in (0.2, 1.0, 4.0):
            spec = RiskMeasureSpec.entropic(gamma)
            q = gibbs_density(gamma, self.x)
            attained = q.expectation(-self.x) - penalty(spec, q)
            self.assertAlmostEqual(evaluate(spec, self.x), attained, delta=1e-10)
            face = subgradient_face(spec, self.x)
            self.assertTrue(face.contains(q, 1e-12))


if __name__ == '__main__':
    unittest.main()
