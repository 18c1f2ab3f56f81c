import numpy as np
import pytest

from critlab.errors import MultiplicityBroken
from critlab.numerics import ComplexPoly
from critlab.poly_space import (
    PolyMap,
    coeffs_from_critical_values,
    critical_values,
    fd_check_partial,
    hermite_system,
    parse_slot,
    partial_derivative_poly,
    simple_point_partial,
    slot_label,
)

CUBIC = PolyMap(3, (-3, 0))
CUBIC_DOUBLE = PolyMap(3, (0, 0.5))
QUARTIC = PolyMap(4, (-6, 8, 0))


class TestPolyMap:
    def test_evaluation(self):
        assert CUBIC(2) == 2
        assert CUBIC.deriv(2) == 9
        assert CUBIC.deriv(2, 2) == 12

    @pytest.mark.parametrize("d", [1, 13])
    def test_degree_bounds(self, d):
        with pytest.raises(ValueError):
            PolyMap(d, (0,) * max(d - 1, 0))

    def test_coefficient_count(self):
        with pytest.raises(ValueError):
            PolyMap(3, (1,))

    def test_real_flag_rejects_complex(self):
        with pytest.raises(ValueError):
            PolyMap(2, (1j,), real=True)

    def test_real_flag_survives_chart(self):
        f = PolyMap(3, (-3, 0), real=True)
        g = coeffs_from_critical_values(f, [-2.01, 2])
        assert g.real

    def test_from_poly(self):
        assert PolyMap.from_poly(ComplexPoly((1, 0, -3, 0))) == CUBIC
        with pytest.raises(ValueError):
            PolyMap.from_poly(ComplexPoly((1, 1, 0)))

    def test_json_round_trip(self):
        doc = CUBIC.to_json()
        assert doc == {"type": "poly", "degree": 3, "coeffs": [[-3.0, 0.0], [0.0, 0.0]]}


class TestProfile:
    def test_unicritical(self):
        prof = PolyMap(2, (0.3 + 0.1j,)).profile
        assert prof.points == (0,)
        assert prof.values == (0.3 + 0.1j,)

    def test_cubic(self):
        prof = CUBIC.profile
        assert prof.points == pytest.approx((1, -1), abs=1e-15)
        assert prof.multiplicities == (1, 1)
        assert prof.values == pytest.approx((-2, 2), abs=1e-14)

    def test_double_critical_point(self):
        prof = CUBIC_DOUBLE.profile
        assert prof.multiplicities == (2,)
        assert abs(prof.point(1)) < 1e-12
        assert prof.value(1) == pytest.approx(0.5)

    def test_quartic_mixed(self):
        prof = QUARTIC.profile
        assert prof.multiplicities == (2, 1)
        assert prof.values == pytest.approx((3, -24), abs=1e-10)


class TestChart:
    def test_unicritical_identity(self):
        g = coeffs_from_critical_values(PolyMap(2, (0.3,)), [0.25])
        assert g.coeffs == pytest.approx((0.25,), abs=1e-14)

    def test_fixed_point_of_inversion(self):
        g = coeffs_from_critical_values(CUBIC, [-2, 2])
        assert g.coeffs == pytest.approx(CUBIC.coeffs, abs=1e-12)

    def test_perturbed_round_trip(self):
        g = coeffs_from_critical_values(CUBIC, [-2.01, 2])
        assert critical_values(g) == pytest.approx([-2.01, 2], abs=1e-12)

    def test_keeps_critical_order(self):
        g = coeffs_from_critical_values(CUBIC, [2.5, -2.5 + 0.1j])
        assert critical_values(g) == pytest.approx([2.5, -2.5 + 0.1j], abs=1e-12)

    def test_quartic_round_trip(self):
        target = np.array([3.05, -24.1 + 0.2j])
        g = coeffs_from_critical_values(QUARTIC, target)
        assert g.profile.multiplicities == (2, 1)
        assert critical_values(g) == pytest.approx(target, abs=1e-10)

    def test_wrong_length(self):
        with pytest.raises((ValueError, MultiplicityBroken)):
            coeffs_from_critical_values(CUBIC, [1.0])


class TestPartials:
    def test_unicritical_is_one(self):
        p = partial_derivative_poly(PolyMap(2, (0.7,)), 1).poly
        assert p.coeffs == pytest.approx((1,))

    def test_cubic_closed_forms(self):
        p1 = partial_derivative_poly(CUBIC, 1).poly
        p2 = partial_derivative_poly(CUBIC, 2).poly
        assert p1.coeffs == pytest.approx((0.5, 0.5), abs=1e-14)
        assert p2.coeffs == pytest.approx((-0.5, 0.5), abs=1e-14)

    def test_double_point_hermite(self):
        # p must equal 1 to second order at 0 and have degree <= 1: p = 1
        p = partial_derivative_poly(CUBIC_DOUBLE, 1).poly
        assert np.allclose(p.taylor(0.0, 2), [1, 0], atol=1e-13)
        assert p.degree <= 0 or abs(p.coeffs[0]) < 1e-13

    def test_interpolation_conditions(self):
        for k in (1, 2):
            p = partial_derivative_poly(QUARTIC, k).poly
            t1 = p.taylor(1.0, 2)
            t2 = p.taylor(-2.0, 1)
            assert t1 == pytest.approx([1.0 if k == 1 else 0.0, 0.0], abs=1e-12)
            assert t2 == pytest.approx([1.0 if k == 2 else 0.0], abs=1e-12)

    def test_simple_point_closed_form(self):
        for k in (1, 2):
            a = simple_point_partial(CUBIC, k)
            b = partial_derivative_poly(CUBIC, k).poly
            z = np.linspace(-1, 1, 7) + 0.3j
            assert np.abs(a(z) - b(z)).max() < 1e-13

    def test_simple_point_rejects_double(self):
        with pytest.raises(ValueError):
            simple_point_partial(CUBIC_DOUBLE, 1)

    def test_hermite_rows(self):
        A = hermite_system([2.0], [3], 3)
        # value, first and second Taylor coefficients of 1, z, z^2 at 2
        assert np.allclose(A, [[1, 2, 4], [0, 1, 4], [0, 0, 1]])

    @pytest.mark.parametrize(
        "f,k,limit",
        [(PolyMap(2, (0.2,)), 1, 1e-10), (CUBIC, 1, 1e-6), (CUBIC, 2, 1e-6), (CUBIC_DOUBLE, 1, 1e-6), (QUARTIC, 1, 1e-6)],
    )
    def test_fd_check(self, f, k, limit):
        assert fd_check_partial(f, k) <= limit


class TestSlots:
    @pytest.mark.parametrize("raw,slot", [(3, ("v", 3)), ("v2", ("v", 2)), ("u4", ("v", 4)), ("sigma", ("sigma", None)), ("b", ("b", None))])
    def test_parse(self, raw, slot):
        assert parse_slot(raw) == slot

    def test_label_round_trip(self):
        for raw in ("v1", "sigma", "b"):
            assert slot_label(parse_slot(raw)) == raw

    def test_bad_slot(self):
        with pytest.raises(ValueError):
            parse_slot("w2")
