"""End-to-end acceptance checks, one marker per criterion.

Every expected number comes from an oracle that does not share code with the
library: exact rational arithmetic, mpmath at 60 digits, or the quadratic
formula.
"""

import json
import subprocess
import sys
import time
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from critlab.fixtures import fixture_names, load_fixture
from critlab.numerics import is_infinite
from critlab.orbits import iterate_orbit, ratio_sequence, similarity_factor
from critlab.poly_space import fd_check_partial, partial_derivative_poly, simple_point_partial
from critlab.rat_space import chart_coordinates, map_from_chart
from critlab.report import AnalysisConfig, _prepare, analyze, dumps, probe_points, ratio_table
from critlab.ruelle import fixed_point_residual, kernel_identity_residual
from critlab.transversality import (
    assemble_matrix,
    find_periodic_orbits,
    multiplier_partials,
    multiplier_partials_fd,
    rank_verdict,
)

CONFIG = AnalysisConfig()


def fixture_map(name):
    return load_fixture(name).map


def working_map(name):
    """The map the analyses run on: rational fixtures in normal form."""
    return _prepare(fixture_map(name), CONFIG)[0]


def matrix_entries(name):
    g = working_map(name)
    M = assemble_matrix(g)
    return [(name, j, c) for j in M.rows for c in M.column_labels]


ALL_ENTRIES = [e for n in fixture_names() for e in matrix_entries(n)]


# -- 1 ----------------------------------------------------------------------


@pytest.mark.criterion(1, "z^2-2 similarity factor is 2/3 within 60 terms, under 0.1 s")
def test_chebyshev_similarity_factor():
    f = fixture_map("chebyshev")
    start = time.perf_counter()
    s = similarity_factor(f, 1, 1)
    elapsed = time.perf_counter() - start
    # direct summation in exact arithmetic: (f^n)'(-2) = -4^n, p = 1
    direct = 1 - sum(Fraction(1, 4**n) for n in range(1, 61))
    assert abs(direct - Fraction(2, 3)) < Fraction(1, 10**30)
    assert abs(s.value - 2 / 3) <= 1e-12
    assert s.terms_used <= 60
    assert elapsed < 0.1


# -- 2 ----------------------------------------------------------------------


def mp_unicritical_factor(c, terms):
    with mp.workdps(50):
        x, der, total = mp.mpc(c), mp.mpc(1), mp.mpc(1)
        for _ in range(terms):
            der *= 2 * x
            x = x * x + c
            total += 1 / der
        return complex(total)


@pytest.mark.criterion(2, "z^2+i similarity factor is 0.8-0.4i within 200 terms")
def test_misiurewicz_similarity_factor():
    s = similarity_factor(fixture_map("misiurewicz_i"), 1, 1)
    assert abs(mp_unicritical_factor(1j, 400) - (0.8 - 0.4j)) <= 1e-14
    assert abs(s.value - (0.8 - 0.4j)) <= 1e-10
    assert s.terms_used <= 200


# -- 3 ----------------------------------------------------------------------


@pytest.mark.criterion(3, "z^3-3z matrix, singular values (1.125, 0.75), maximal rank")
def test_cubic_matrix():
    # c_1 = 1 -> v_1 = -2 (fixed, f' = 9); c_2 = -1 -> v_2 = 2 (fixed, f' = 9)
    # L(c_j, v_k) = delta + p_k(v_j) sum 9^-n with p_1 = (z+1)/2, p_2 = (1-z)/2
    p = [lambda z: Fraction(z + 1, 2), lambda z: Fraction(1 - z, 2)]
    v = [-2, 2]
    exact = [[int(j == k) + p[k](v[j]) * Fraction(1, 8) for k in range(2)] for j in range(2)]
    M = assemble_matrix(fixture_map("cubic_pm1"))
    assert np.abs(M.entries - np.array(exact, dtype=float)).max() <= 1e-10
    a, b = exact[0]
    assert M.spectrum.values == pytest.approx((float(a + b), float(a - b)), abs=1e-10)
    assert rank_verdict(M).maximal


# -- 4 ----------------------------------------------------------------------

KERNEL_FIXTURES = ["chebyshev", "misiurewicz_i", "cubic_pm1", "rat_h", "rat_nd"]


@pytest.mark.criterion(4, "kernel identity <= 1e-9 on 100 seeded probes, 5 fixtures, under 5 s")
def test_kernel_identity_suite():
    start = time.perf_counter()
    worst = {}
    for name in KERNEL_FIXTURES:
        f = fixture_map(name)
        xs, zs = probe_points(f, 100, CONFIG.seed)
        worst[name] = max(kernel_identity_residual(f, z, x) for z, x in zip(zs, xs))
    elapsed = time.perf_counter() - start
    assert max(worst.values()) <= 1e-9, worst
    assert elapsed < 5


# -- 5 ----------------------------------------------------------------------

FIXED_POINT_CASES = [(n, j) for n in fixture_names() for j in assemble_matrix(working_map(n)).rows]


@pytest.mark.criterion(5, "fixed-point relation <= 1e-9 at budget 200, non-increasing as budget doubles")
@pytest.mark.parametrize("name,j", FIXED_POINT_CASES)
def test_fixed_point_relation(name, j):
    g = working_map(name)
    xs, _ = probe_points(g, 10, CONFIG.seed)
    ladder = [2, 4, 8, 16, 32, 64, 128, 200, 400]
    res = {B: max(fixed_point_residual(g, j, x, B).residual for x in xs) for B in ladder}
    assert res[200] <= 1e-9
    assert all(res[b] <= res[a] for a, b in zip(ladder, ladder[1:])), res


def test_every_fixture_is_covered_by_criterion_five():
    # quartic_mixed, cubic_double, rat_h, rat_nd and rat_pole have no summable
    # finite-valued critical point; the rest must all appear
    assert {n for n, _ in FIXED_POINT_CASES} == {"chebyshev", "misiurewicz_i", "cubic_pm1", "rat_prefixed"}


# -- 6 ----------------------------------------------------------------------


def mp_poly(coeffs, z):
    acc = mp.mpc(0)
    for a in coeffs:
        acc = acc * z + a
    return acc


def mp_deriv_coeffs(coeffs):
    n = len(coeffs) - 1
    return [a * (n - i) for i, a in enumerate(coeffs[:-1])] or [0]


class MpFamily:
    """``f + t u`` evaluated in mpmath, with ``u`` the chart direction."""

    def __init__(self, g, slot):
        self.num = [mp.mpc(c) for c in g.numerator.coeffs]
        self.den = [mp.mpc(c) for c in g.denominator.coeffs]
        self.sigma = mp.mpc(getattr(g, "sigma", 1))
        self.slot = slot
        N = g.partial(slot).numerator
        self.unum = None if N is None else [mp.mpc(c) for c in N.coeffs]

    def f(self, z):
        return mp_poly(self.num, z) / mp_poly(self.den, z)

    def fprime(self, z):
        n, d = self.num, self.den
        D = mp_poly(d, z)
        return (mp_poly(mp_deriv_coeffs(n), z) * D - mp_poly(n, z) * mp_poly(mp_deriv_coeffs(d), z)) / D**2

    def u(self, z):
        if self.slot == "sigma":
            return z * self.fprime(z) / self.sigma
        if self.slot == "b":
            return self.fprime(z) / self.sigma
        return mp_poly(self.unum, z) / mp_poly(self.den, z) ** 2

    def ft(self, t, z):
        return self.f(z) + t * self.u(z)

    def orbit_point(self, t, c0, m):
        """``f_t^m(c_j(t))`` with ``c_j(t)`` the critical point near ``c0``."""
        c = mp.findroot(lambda z: mp.diff(lambda w: self.ft(t, w), z), mp.mpc(c0))
        z = c
        for _ in range(m):
            z = self.ft(t, z)
        return z


def chart_slot(column):
    return column if column in ("sigma", "b") else int(column[1:])


@pytest.mark.criterion(6, "ratio sequence within tail bound of L; chart derivatives match ratio * (f^(m-1))'")
@pytest.mark.parametrize("name,j,column", ALL_ENTRIES)
def test_ratio_limit_agreement(name, j, column):
    g = working_map(name)
    slot = chart_slot(column)
    L = similarity_factor(g, j, slot)
    final = ratio_table(g, j, slot, L.terms_used + 1)["rows"][-1]
    assert final["abs_error"] <= final["tail_bound"]

    seq = ratio_sequence(g, j, slot, 12)
    trace = iterate_orbit(g, g.profile.value(j), 12)
    fam = MpFamily(g, slot)
    c0 = g.profile.point(j)
    with mp.workdps(60):
        for m in range(1, 13):
            if m - 1 >= len(trace.points) or is_infinite(trace.points[m - 1]):
                break
            expected = seq[m - 1] * (trace.derivatives[m - 1] if m > 1 else 1)
            fd = complex(mp.diff(lambda t: fam.orbit_point(t, c0, m), 0))
            # the direction's coefficients are doubles, so a zero target is
            # only zero to their rounding; relative error is meaningless there
            assert abs(fd - expected) <= 1e-5 * abs(expected) + 1e-12, (m, fd, expected)


# -- 7 ----------------------------------------------------------------------

POLY_FIXTURES = [n for n in fixture_names() if not fixture_map(n).is_rational]
RATIONAL_FIXTURES = [n for n in fixture_names() if fixture_map(n).is_rational]


@pytest.mark.criterion(7, "chart partials match finite differences; simple-point closed form matches Hermite solve")
@pytest.mark.parametrize("name", POLY_FIXTURES)
def test_polynomial_partials(name):
    f = fixture_map(name)
    prof = f.profile
    for k in range(1, len(prof) + 1):
        assert fd_check_partial(f, k) <= 1e-6
    if all(m == 1 for m in prof.multiplicities):
        z = probe_points(f, 20, CONFIG.seed)[0]
        for k in range(1, len(prof) + 1):
            closed = simple_point_partial(f, k)
            hermite = partial_derivative_poly(f, k).poly
            assert max(abs(closed(w) - hermite(w)) for w in z) <= 1e-12


def test_double_point_fixture_is_present():
    assert 2 in fixture_map("cubic_double").profile.multiplicities


@pytest.mark.criterion(7, "chart partials match finite differences; simple-point closed form matches Hermite solve")
@pytest.mark.parametrize("name", RATIONAL_FIXTURES)
def test_rational_partials(name):
    f = fixture_map(name)
    x0 = chart_coordinates(f)
    slots = ["sigma", "b"] + list(range(1, len(f.profile) + 1))
    z = np.array(probe_points(f, 20, CONFIG.seed)[0])
    h = 1e-6
    for i, slot in enumerate(slots):
        if isinstance(slot, int) and not f.profile.finite[slot - 1]:
            continue
        e = np.zeros_like(x0)
        e[i] = h
        gp, gm = map_from_chart(f, x0 + e), map_from_chart(f, x0 - e)
        fd = np.array([(gp(w) - gm(w)) / (2 * h) for w in z])
        exact = np.array([f.partial(slot).value(w) for w in z])
        assert (np.abs(fd - exact) / np.maximum(1, np.abs(exact))).max() <= 1e-6


# -- 8 ----------------------------------------------------------------------


@pytest.mark.criterion(8, "infinite critical value gives a standard basis row; ratios freeze after hitting infinity")
def test_infinity_row():
    g = working_map("rat_pole")
    M = assemble_matrix(g)
    C = M.conjugated
    row = C.entries[C.row_labels.index("c4")]
    basis = np.array([1.0 if c == "v4" else 0.0 for c in C.column_labels])
    assert np.abs(row - basis).max() <= 1e-12


@pytest.mark.criterion(8, "infinite critical value gives a standard basis row; ratios freeze after hitting infinity")
@pytest.mark.parametrize("j", [1, 2])
@pytest.mark.parametrize("column", ["sigma", 1])
def test_ratio_freezes_after_infinity(j, column):
    g = working_map("rat_prefixed")
    trace = iterate_orbit(g, g.profile.value(j), 50)
    assert trace.termination == "hit_infinity"
    hit = trace.hit_index
    seq = ratio_sequence(g, j, column, 40)
    assert len(set(seq[hit:])) == 1
    assert seq[-1] == similarity_factor(g, j, column).value


# -- 9 ----------------------------------------------------------------------


def mp_multiplier(v, sign):
    # fixed points of z^2 + v: beta = (1 + sign sqrt(1 - 4v))/2, multiplier 2 beta
    return 1 + sign * mp.sqrt(1 - 4 * v)


@pytest.mark.criterion(9, "multiplier derivative on z^2-2 fixed points: implicit = FD = quadratic formula")
@pytest.mark.parametrize("beta,sign", [(2, 1), (-1, -1)])
def test_multiplier_partials(beta, sign):
    f = fixture_map("chebyshev")
    orbit = next(o for o in find_periodic_orbits(f, 1) if abs(o.start - beta) < 1e-9)
    implicit = multiplier_partials(f, orbit, 1)
    fd = multiplier_partials_fd(f, orbit, 1)
    # d rho/dv = 2 beta' with beta' = 1/(1 - 2 beta) from beta^2 - beta + v = 0
    formula = 2 / (1 - 2 * beta)
    with mp.workdps(40):
        oracle = complex(mp.diff(lambda v: mp_multiplier(v, sign), -2))
    assert abs(formula - oracle) <= 1e-15
    assert abs(implicit - formula) <= 1e-12
    assert abs(implicit - fd) <= 1e-6


# -- 10 ---------------------------------------------------------------------


def cli_analyze(name, seed):
    cmd = [sys.executable, "-m", "critlab", "analyze", "--map", name, "--seed", str(seed), "--probes", "25"]
    return subprocess.run(cmd, capture_output=True, check=True).stdout


@pytest.mark.criterion(10, "equal seeds give byte-identical analyze reports")
@pytest.mark.parametrize("name", fixture_names())
def test_determinism(name):
    first, second = cli_analyze(name, 11), cli_analyze(name, 11)
    assert first == second
    config = AnalysisConfig(seed=11, probes=25)
    assert dumps(analyze(fixture_map(name), config)).encode() == first
    assert json.loads(first)["config"]["seed"] == 11
