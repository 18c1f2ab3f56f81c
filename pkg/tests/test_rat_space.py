import math

import numpy as np
import pytest

from critlab.errors import CaseMismatch, OrbitCollision
from critlab.numerics import INF, ComplexPoly, MobiusTransform, chordal_distance, is_infinite
from critlab.orbits import iterate_orbit
from critlab.rat_space import (
    RationalMap,
    chart_coordinates,
    check_normal_form,
    choose_probe_mobius,
    classify,
    fixed_points,
    map_from_chart,
    mobius_conjugated_space,
)

ONE = ComplexPoly((1,))
Z = ComplexPoly((1, 0))
Z2 = ComplexPoly((1, 0, 0))

RAT_H = RationalMap(2, 0, ONE, Z)
RAT_ND = RationalMap(1, 0, ONE, Z)
RAT_NN = RationalMap(1, 1, ONE, Z)
RAT_PREFIXED = RationalMap(0.5j, 0, ONE, Z)
RAT_POLE = RationalMap(0.5, 0, ONE, Z2)


class TestRationalMap:
    def test_evaluation_and_pole(self):
        assert RAT_H(2) == pytest.approx(4.5)
        assert is_infinite(RAT_H(0))
        assert RAT_H.is_pole(0)
        assert RAT_H.deriv(2) == pytest.approx(2 - 0.25)

    def test_second_derivative(self):
        z, h = 0.7 + 0.2j, 1e-5
        fd = (RAT_POLE.deriv(z + h) - RAT_POLE.deriv(z - h)) / (2 * h)
        assert RAT_POLE.deriv(z, 2) == pytest.approx(fd, rel=1e-8)

    @pytest.mark.parametrize(
        "args",
        [
            (0, 0, ONE, Z),  # sigma = 0
            (1, 0, ComplexPoly((1, 0)), Z),  # deg P = deg Q
            (1, 0, ONE, ComplexPoly((2, 0))),  # Q not monic
            (1, 0, ComplexPoly((1, -1)), ComplexPoly((1, -3, 2))),  # common factor z - 1
        ],
    )
    def test_validation(self, args):
        with pytest.raises(ValueError):
            RationalMap(*args)

    def test_from_fraction(self):
        f = RationalMap.from_fraction(ComplexPoly((2, 0, 1)), Z)
        assert f.sigma == 2 and f.b == 0
        assert f.P.coeffs == pytest.approx((1,))

    def test_degree(self):
        assert RAT_H.degree == 2
        assert RAT_POLE.degree == 3


class TestProfile:
    def test_z_plus_inverse(self):
        prof = RAT_ND.profile
        assert sorted(p.real for p in prof.points) == pytest.approx([-1, 1])
        assert sorted(v.real for v in prof.values) == pytest.approx([-2, 2])

    def test_two_z_plus_inverse(self):
        prof = RAT_H.profile
        r = 1 / math.sqrt(2)
        assert sorted(p.real for p in prof.points) == pytest.approx([-r, r])
        assert sorted(v.real for v in prof.values) == pytest.approx([-2 * math.sqrt(2), 2 * math.sqrt(2)])

    def test_degree_two_count(self):
        assert sum(RAT_PREFIXED.profile.multiplicities) == 2

    def test_multiple_pole_is_critical_with_infinite_value(self):
        prof = RAT_POLE.profile
        assert prof.multiplicities == (1, 1, 1, 1)
        assert is_infinite(prof.value(4))
        assert abs(prof.point(4)) < 1e-12
        assert prof.finite_count == 3


class TestPartials:
    def test_sigma_closed_form(self):
        assert RAT_H.partial("sigma").value(2) == pytest.approx(1.75)

    def test_b_closed_form(self):
        for z in (0.5, 2 + 1j):
            assert RAT_H.partial("b").value(z) == pytest.approx(RAT_H.deriv(z) / 2)

    def test_simple_point_formula(self):
        prof = RAT_H.profile
        for k in (1, 2):
            c = prof.point(k)
            for z in (0.3 + 0.4j, -1.2, 2j):
                expected = RAT_H.deriv(z) / (RAT_H.deriv(c, 2) * (z - c))
                assert RAT_H.partial(k).value(z) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("f", [RAT_H, RAT_PREFIXED, RAT_POLE])
    def test_chart_finite_differences(self, f):
        x0 = chart_coordinates(f)
        slots = ["sigma", "b"] + [k for k in range(1, f.profile.finite_count + 1)]
        z = np.array([0.9 + 0.4j, -1.3 + 0.2j, 0.5 - 1.1j])
        h = 1e-6
        for i, slot in enumerate(slots):
            e = np.zeros_like(x0)
            e[i] = h
            gp, gm = map_from_chart(f, x0 + e), map_from_chart(f, x0 - e)
            fd = (np.array([gp(w) for w in z]) - np.array([gm(w) for w in z])) / (2 * h)
            exact = np.array([f.partial(slot).value(w) for w in z])
            assert np.abs(fd - exact).max() <= 1e-6 * max(1, np.abs(exact).max())


class TestConjugation:
    def test_identity_factors(self):
        space = mobius_conjugated_space(RAT_H, MobiusTransform.identity())
        assert space.factor(1, 2) == 1
        assert space.value_factor(1) == 1

    def test_inversion_factor(self):
        # M(z) = 1/z; (M^-1)'(w) = -1/w^2 and v_2 = -v_1
        m = MobiusTransform(0, 1, 1, 0)
        space = mobius_conjugated_space(RAT_H, m)
        v = RAT_H.profile.values
        assert space.factor(1, 2) == pytest.approx(v[1] ** 2 / v[0] ** 2)
        assert space.factor(1, 2) == pytest.approx(1)

    def test_collision(self):
        # M(inf) = 0 lies on the orbit -1 -> 0 -> inf of the normalized map
        g = classify(RAT_PREFIXED).normalized
        with pytest.raises(OrbitCollision):
            mobius_conjugated_space(g, MobiusTransform(0, 1, 1, 0))

    def test_collision_check_limited_to_indices(self):
        v1 = RAT_POLE.profile.value(1)
        m = MobiusTransform(v1, 0, 1, 1)
        with pytest.raises(OrbitCollision):
            mobius_conjugated_space(RAT_POLE, m, indices=[1])
        mobius_conjugated_space(RAT_POLE, m, indices=[4])

    def test_probe_mobius_clearance(self):
        m = choose_probe_mobius(RAT_POLE)
        forbidden = m(INF)
        for v in RAT_POLE.profile.values:
            for z in iterate_orbit(RAT_POLE, v, 200).points:
                assert chordal_distance(z, forbidden) >= 0.1

    def test_conjugated_map(self):
        m = choose_probe_mobius(RAT_PREFIXED)
        space = mobius_conjugated_space(RAT_PREFIXED, m)
        z = 0.3 + 0.2j
        assert space.map(z) == pytest.approx(m.inverse()(RAT_PREFIXED(m(z))))


class TestClassify:
    def test_fixed_points(self):
        fps = fixed_points(RAT_H)
        assert is_infinite(fps[0].point)
        assert fps[0].multiplier == pytest.approx(0.5)
        # 2z + 1/z = z has finite fixed points z = +-i with multiplier 2 - 1/z^2 = 3
        assert sorted(abs(fp.multiplier) for fp in fps[1:]) == pytest.approx([3, 3])

    def test_case_h(self):
        cls = classify(RAT_H)
        assert cls.case == "H"
        g = cls.normalized
        assert g.sigma == pytest.approx(2)
        assert abs(g.b) < 1e-12
        check_normal_form(cls)

    def test_case_nd(self):
        cls = classify(RAT_ND)
        assert cls.case == "ND"
        vals = [v for v in cls.normalized.profile.values if not is_infinite(v)]
        assert vals[-2:] == pytest.approx([1, 0], abs=1e-12)

    def test_case_nn(self):
        cls = classify(RAT_NN)
        assert cls.case == "NN"
        g = cls.normalized
        assert g.sigma == pytest.approx(1) and g.b == pytest.approx(1)
        assert g.profile.values[-1] == pytest.approx(1)

    def test_normalization_is_conjugacy(self):
        cls = classify(RAT_PREFIXED)
        P = cls.normalizer
        z = 0.4 - 0.3j
        assert cls.normalized(z) == pytest.approx(P(RAT_PREFIXED(P.inverse()(z))))

    def test_requested_case_unavailable(self):
        with pytest.raises(CaseMismatch):
            classify(RAT_H, case="NN")
