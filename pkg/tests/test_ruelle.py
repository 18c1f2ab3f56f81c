import numpy as np
import pytest

from critlab.errors import CriticalValueCollision, DivergenceDetected
from critlab.numerics import ComplexPoly
from critlab.poly_space import PolyMap
from critlab.rat_space import RationalMap, classify
from critlab.report import probe_points
from critlab.ruelle import (
    KernelCombination,
    apply_T,
    fixed_point_residual,
    h_combination,
    kernel_identity_residual,
    local_L_coefficients,
    local_L_eval,
    preimages,
    regularize,
    resolvent_identity_residual,
    varphi_eval,
)

SQUARE = PolyMap(2, (0,))
CHEB = PolyMap(2, (-2,))
MISI = PolyMap(2, (1j,))
CUBIC = PolyMap(3, (-3, 0))
CUBIC_DOUBLE = PolyMap(3, (0, 0.5))
QUARTIC = PolyMap(4, (-6, 8, 0))
ONE, Z = ComplexPoly((1,)), ComplexPoly((1, 0))
RAT_H = RationalMap(2, 0, ONE, Z)
RAT_ND = RationalMap(1, 0, ONE, Z)
PREFIXED = classify(RationalMap(0.5j, 0, ONE, Z)).normalized


def probes(f, n, seed=7):
    return probe_points(f, n, seed)


class TestPreimages:
    def test_square(self):
        assert sorted(preimages(SQUARE, 1).real) == pytest.approx([-1, 1])

    def test_chebyshev(self):
        assert sorted(preimages(CHEB, 2).real) == pytest.approx([-2, 2])

    def test_rational(self):
        assert sorted(preimages(RAT_ND, 2.5).real) == pytest.approx([0.5, 2])

    def test_critical_value_rejected(self):
        with pytest.raises(CriticalValueCollision):
            preimages(CHEB, -2)


class TestApplyT:
    def test_zero(self):
        assert apply_T(SQUARE, lambda w: 0 * w, 1) == 0

    def test_two_preimage_sum(self):
        assert apply_T(SQUARE, lambda w: 1 / (2 - w), 1) == pytest.approx(1 / 3)

    def test_constant(self):
        assert apply_T(SQUARE, lambda w: np.ones_like(w), 1) == pytest.approx(0.5)


class TestKernelIdentity:
    def test_square_by_hand(self):
        assert kernel_identity_residual(SQUARE, 2, 1) <= 1e-12

    @pytest.mark.parametrize("f", [CUBIC, CUBIC_DOUBLE, QUARTIC, RAT_H, PREFIXED])
    def test_random_probes(self, f):
        xs, zs = probes(f, 50)
        assert max(kernel_identity_residual(f, z, x) for z, x in zip(zs, xs)) <= 1e-9


class TestLocalL:
    def test_simple(self):
        assert local_L_coefficients(SQUARE, 1) == pytest.approx([0.5])

    def test_double(self):
        assert local_L_coefficients(CUBIC_DOUBLE, 1) == pytest.approx([1 / 3, 0], abs=1e-14)

    @pytest.mark.parametrize("f,j", [(CUBIC, 1), (QUARTIC, 1), (QUARTIC, 2), (RAT_H, 1)])
    def test_principal_part(self, f, j):
        # p_j/f' minus its principal part stays bounded at c_j
        c, m = f.profile.point(j), f.profile.multiplicity(j)
        diffs, scaled = [], []
        for r in (1e-2, 1e-3, 1e-4):
            z = c + r * np.exp(0.7j)
            diffs.append(abs(f.partial(j).over_derivative(z) - local_L_eval(f, j, z)))
            scaled.append(abs(local_L_eval(f, j, z)) * r**m)
        assert max(diffs) < 10 * (1 + diffs[0])
        # a pole of exact order m
        assert scaled[-1] > 0
        assert scaled[-1] == pytest.approx(scaled[-2], rel=1e-2)


class TestVarphi:
    def test_lambda_zero(self):
        s = varphi_eval(CHEB, 0.3, 0.0, 1.1j)
        assert s.value == pytest.approx(1 / (0.3 - 1.1j))

    def test_chebyshev_closed_form(self):
        s = varphi_eval(CHEB, -2, 1.0, 1j)
        assert s.value == pytest.approx(1 / (-2 - 1j) - (1 / 3) / (2 - 1j), abs=1e-12)

    def test_two_terms_before_pole(self):
        x, lam = 0.7 + 0.2j, 0.6
        s = varphi_eval(RAT_ND, 1j, lam, x)
        assert s.status == "truncated_at_infinity"
        assert s.terms_used == 2
        assert s.value == pytest.approx(1 / (1j - x) + lam / (2 * (0 - x)))


class TestResolvent:
    def test_lambda_zero_is_exact(self):
        r = resolvent_identity_residual(CUBIC, 0.4 + 1.3j, 0.0, -0.9 + 0.5j)
        assert r.residual == 0

    def test_chebyshev_critical_value(self):
        xs, _ = probes(CHEB, 20)
        for x in xs:
            r = resolvent_identity_residual(CHEB, -2, 1.0, x)
            assert r.residual <= r.bound

    def test_cubic_half(self):
        xs, zs = probes(CUBIC, 30)
        assert max(resolvent_identity_residual(CUBIC, z, 0.5, x).residual for z, x in zip(zs, xs)) <= 1e-8

    def test_truncated_residual_is_boundary_term(self):
        # with a short budget the residual is the boundary term itself
        r = resolvent_identity_residual(CHEB, -2, 1.0, 0.3 + 0.4j, budget=4)
        assert r.residual == pytest.approx(r.truncation_bound, rel=1e-9)

    def test_critical_orbit_rejected(self):
        with pytest.raises(DivergenceDetected):
            resolvent_identity_residual(PolyMap(2, (-1,)), -1, 0.5, 0.7j)


class TestFixedPoint:
    def test_chebyshev(self):
        assert fixed_point_residual(CHEB, 1, 1j, budget=60).residual <= 1e-10

    def test_misiurewicz(self):
        assert fixed_point_residual(MISI, 1, 0.3 + 0.2j).residual <= 1e-9

    @pytest.mark.parametrize("j", [1, 2])
    def test_cubic(self, j):
        xs, _ = probes(CUBIC, 20)
        assert max(fixed_point_residual(CUBIC, j, x).residual for x in xs) <= 1e-9

    @pytest.mark.parametrize("j", [1, 2])
    def test_rational_prefixed(self, j):
        xs, _ = probes(PREFIXED, 20)
        for x in xs:
            r = fixed_point_residual(PREFIXED, j, x)
            assert r.residual <= max(r.bound, 1e-9)


class TestRegularize:
    def test_single_pole(self):
        r = regularize(KernelCombination((1.0,), (0.0,)))
        assert (r.A, r.B) == (1, 0)

    def test_chebyshev(self):
        r = regularize(h_combination(CHEB, 1, budget=60))
        assert r.A == pytest.approx(2 / 3, abs=1e-14)
        assert r.B == pytest.approx(-8 / 3, abs=1e-14)

    def test_symmetric_poles(self):
        r = regularize(KernelCombination((0.5, 0.5), (1.5 + 1j, -1.5 - 1j)))
        assert r.B == 0

    def test_decay_at_infinity(self):
        r = regularize(h_combination(CUBIC, 1))
        x = np.array([1e2, 1e3]) * np.exp(0.4j)
        scaled = np.abs(r(x)) * np.abs(x) ** 3
        assert scaled[1] == pytest.approx(scaled[0], rel=0.05)

    def test_rational_expansion(self):
        r = regularize(h_combination(PREFIXED, 1), f=PREFIXED)
        assert r.asymptotic_error < 10
