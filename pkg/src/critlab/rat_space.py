"""Rational maps ``f(z) = sigma z + b + P(z)/Q(z)`` fixing infinity.

``Q`` is monic of degree ``d - 1`` and ``deg P <= d - 2``.  Critical points
are the roots of the Wronskian ``W = P^' Q - P^ Q'`` with ``P^ = (sigma z + b) Q + P``;
a pole of order ``r`` is a critical point of multiplicity ``r - 1`` with
infinite critical value.  Local coordinates are ``sigma``, ``b``, the finite
critical values and the reciprocals ``1/v`` of the infinite ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    AmbiguousClassification,
    CaseMismatch,
    MultiplicityBroken,
    NonConvergence,
    OrbitCollision,
    SingularJacobian,
)
from .numerics import (
    INF,
    ComplexPoly,
    GeneralRational,
    MobiusTransform,
    chordal_distance,
    find_roots,
    is_infinite,
    newton_solve,
    ratio_taylor,
    sort_key,
    trim_leading,
)
from .poly_space import CriticalProfile, SlotPartial, hermite_system, match_order, parse_slot, solve_hermite

ONE_TOL = 1e-8
AMBIGUOUS_TOL = 1e-5


@dataclass(frozen=True)
class RationalMap:
    sigma: complex
    b: complex
    P: ComplexPoly
    Q: ComplexPoly
    order_hint: tuple[complex, ...] | None = field(default=None, compare=False, repr=False)

    is_rational = True

    def __post_init__(self):
        object.__setattr__(self, "sigma", complex(self.sigma))
        object.__setattr__(self, "b", complex(self.b))
        P = self.P if isinstance(self.P, ComplexPoly) else ComplexPoly(tuple(self.P))
        Q = self.Q if isinstance(self.Q, ComplexPoly) else ComplexPoly(tuple(self.Q))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)
        if self.sigma == 0:
            raise ValueError("sigma must be nonzero")
        if Q.degree < 1 or Q.lead != 1:
            raise ValueError("Q must be monic of degree at least 1")
        if P.is_zero():
            raise ValueError("P must be nonzero")
        if P.degree > Q.degree - 1:
            raise ValueError(f"deg P must be at most {Q.degree - 1}")
        scale = float(np.abs(P.array).max())
        for r in find_roots(Q):
            if abs(P(r.center)) <= 1e-10 * scale * max(1.0, abs(r.center)) ** P.degree:
                raise ValueError("P and Q share a root; the fraction is not in lowest terms")

    @classmethod
    def from_fraction(cls, num: ComplexPoly, den: ComplexPoly, order_hint=None) -> "RationalMap":
        """Write ``num/den`` (with ``deg num = deg den + 1``) in normal form."""
        if num.degree != den.degree + 1:
            raise ValueError("numerator degree must exceed denominator degree by one")
        lead = den.lead
        num = num * (1.0 / lead)
        den = den * (1.0 / lead)
        q, r = np.polydiv(num.array, den.array)
        q = np.concatenate([np.zeros(2 - q.size, complex), q]) if q.size < 2 else q
        P = ComplexPoly(tuple(r)) if r.size else ComplexPoly((0j,))
        P = trim_leading(P, den.degree - 1)
        Q = ComplexPoly((1.0,) + den.coeffs[1:])
        return cls(q[0], q[1], P, Q, order_hint=order_hint)

    @property
    def degree(self) -> int:
        return self.Q.degree + 1

    @cached_property
    def numerator(self) -> ComplexPoly:
        return ComplexPoly((self.sigma, self.b)) * self.Q + self.P

    @property
    def denominator(self) -> ComplexPoly:
        return self.Q

    @cached_property
    def critical_polynomial(self) -> ComplexPoly:
        N = self.numerator
        return trim_leading(N.deriv() * self.Q - N * self.Q.deriv(), 2 * self.degree - 2)

    @cached_property
    def poles(self) -> tuple:
        return tuple(find_roots(self.Q))

    @property
    def infinity_multiplier(self) -> complex:
        return 1.0 / self.sigma

    @property
    def fraction(self) -> GeneralRational:
        return GeneralRational(self.numerator, self.Q)

    def is_pole(self, z, rel: float = 1e-12) -> bool:
        if is_infinite(z):
            return False
        qz = abs(self.Q(z))
        return qz <= rel * self.Q.abs_scale(max(1.0, abs(z)))

    def __call__(self, z):
        if is_infinite(z):
            return INF
        q = self.Q(z)
        if q == 0:
            return INF
        return self.sigma * z + self.b + self.P(z) / q

    def deriv(self, z, k: int = 1):
        if k == 1:
            q = self.Q(z)
            if q == 0:
                return INF
            return self.critical_polynomial(z) / q**2
        t = ratio_taylor(self.numerator, self.Q, z, k + 1)
        return t[k] * math.factorial(k)

    @cached_property
    def profile(self) -> CriticalProfile:
        return rational_critical_profile(self)

    @cached_property
    def _partials(self) -> dict:
        return {}

    def partial(self, which) -> SlotPartial:
        slot = parse_slot(which)
        if slot not in self._partials:
            self._partials[slot] = rational_partial_derivative(self, slot)
        return self._partials[slot]

    def with_order(self, points: Sequence[complex]) -> "RationalMap":
        return replace(self, order_hint=tuple(complex(z) for z in points))

    def to_json(self) -> dict:
        pair = lambda c: [c.real, c.imag]
        return {
            "type": "rational",
            "sigma": pair(self.sigma),
            "b": pair(self.b),
            "P": self.P.to_pairs(),
            "Q": self.Q.to_pairs(),
        }


def rational_critical_profile(f: RationalMap, tol: float = 1e-10) -> CriticalProfile:
    """Critical points on the plane, finite-valued ones first.

    A critical point sitting on a pole gets the value ``INF``.  Within each
    group points are in descending (real, imag) order unless the map carries
    an ordering hint, which then fixes the order completely.
    """
    clusters = find_roots(f.critical_polynomial, tol=tol)
    pole_pts = [r.center for r in f.poles]
    pts, mult, vals = [], [], []
    for c in clusters:
        z = c.center
        near = [p for p in pole_pts if abs(p - z) <= 1e-6 * (1 + abs(z))]
        if near:
            z = near[0]
            vals.append(INF)
        else:
            vals.append(f(z))
        pts.append(z)
        mult.append(c.multiplicity)
    if f.order_hint is not None:
        order = match_order(pts, f.order_hint)
    else:
        order = sorted(range(len(pts)), key=lambda i: (is_infinite(vals[i]),) + sort_key(pts[i]))
    return CriticalProfile(
        tuple(pts[i] for i in order), tuple(mult[i] for i in order), tuple(vals[i] for i in order), tol
    )


def rational_partial_derivative(f: RationalMap, which) -> SlotPartial:
    """Derivative of ``f`` along ``sigma``, ``b`` or a critical-value slot.

    Slot ``v_k`` refers to ``v_k`` when that value is finite and to ``1/v_k``
    otherwise.  For critical-value slots the derivative is ``N / Q^2`` with
    ``deg N <= 2d - 3`` fixed by Hermite conditions at every critical point.
    """
    slot = parse_slot(which)
    kind, k = slot
    sigma = f.sigma
    if kind == "sigma":
        return SlotPartial(
            slot,
            None,
            lambda z: z * f.deriv(z) / sigma,
            lambda z: z / sigma,
            lambda z: (f.deriv(z) + z * f.deriv(z, 2)) / sigma,
        )
    if kind == "b":
        return SlotPartial(
            slot,
            None,
            lambda z: f.deriv(z) / sigma,
            lambda z: 1.0 / sigma + 0 * z,
            lambda z: f.deriv(z, 2) / sigma,
        )
    prof = f.profile
    if not 1 <= k <= len(prof):
        raise ValueError(f"critical index {k} out of range 1..{len(prof)}")
    N = hermite_numerator(f, prof, k)
    Q, W = f.Q, f.critical_polynomial
    Q2 = Q * Q
    dN, dQ = N.deriv(), Q.deriv()
    return SlotPartial(
        slot,
        N,
        lambda z: N(z) / Q2(z),
        lambda z: N(z) / W(z),
        lambda z: (dN(z) * Q(z) - 2 * N(z) * dQ(z)) / Q(z) ** 3,
    )


def hermite_numerator(f: RationalMap, prof: CriticalProfile, k: int) -> ComplexPoly:
    n = 2 * f.degree - 2
    A = hermite_system(prof.points, prof.multiplicities, n)
    rhs = np.zeros(n, dtype=complex)
    row = 0
    Q2 = f.Q * f.Q
    N2 = f.numerator * f.numerator
    for j, (c, m, v) in enumerate(zip(prof.points, prof.multiplicities, prof.values), start=1):
        if j == k:
            if is_infinite(v):
                rhs[row:row + m] = -N2.taylor(c, m)
            else:
                rhs[row:row + m] = Q2.taylor(c, m)
        row += m
    sol, _ = solve_hermite(A, rhs)
    return ComplexPoly(tuple(sol[::-1]))


def chart_coordinates(f: RationalMap) -> np.ndarray:
    """``(sigma, b, v_1, ..., v_p, 0, ..., 0)``: reciprocal slots start at 0."""
    vals = [0j if is_infinite(v) else v for v in f.profile.values]
    return np.array([f.sigma, f.b] + vals, dtype=complex)


def _unpack(d: int, x: np.ndarray) -> tuple[complex, complex, ComplexPoly, ComplexPoly, np.ndarray]:
    sigma, b = x[0], x[1]
    Q = ComplexPoly((1.0,) + tuple(x[2:d + 1]))
    P = ComplexPoly(tuple(x[d + 1:2 * d]))
    return sigma, b, P, Q, x[2 * d:]


def _rational_chart_residual(d, mult, infinite, x, target):
    sigma, b, P, Q, cs = _unpack(d, x)
    N = ComplexPoly((sigma, b)) * Q + P
    out = [sigma - target[0], b - target[1]]
    for j, (m, inf) in enumerate(zip(mult, infinite)):
        t = ratio_taylor(Q, N, cs[j], m + 1) if inf else ratio_taylor(N, Q, cs[j], m + 1)
        out.append(t[0] - target[2 + j])
        out.extend(t[1:])
    return np.array(out, dtype=complex)


def map_from_chart(f0: RationalMap, target: Sequence[complex], tol: float = 1e-11) -> RationalMap:
    """Inverse of the local chart ``g -> (sigma, b, v_1..v_p, 1/v_{p+1}..)``
    around ``f0``; slot order follows ``f0.profile``."""
    prof = f0.profile
    d = f0.degree
    infinite = [not f for f in prof.finite]
    target = np.asarray(target, dtype=complex)
    if target.shape != (2 + len(prof),):
        raise ValueError(f"expected {2 + len(prof)} coordinates")
    P = np.concatenate([np.zeros(d - 1 - len(f0.P.coeffs), complex), f0.P.array])
    x0 = np.concatenate([[f0.sigma, f0.b], f0.Q.array[1:], P, np.array(prof.points, complex)])
    F = lambda x: _rational_chart_residual(d, prof.multiplicities, infinite, x, target)
    scale = 1.0 + float(np.abs(target).max())
    try:
        res = newton_solve(F, x0, tol=0.1 * tol * scale)
    except SingularJacobian as exc:
        raise NonConvergence(str(exc)) from exc
    sigma, b, Pn, Qn, cs = _unpack(d, res.x)
    g = RationalMap(sigma, b, trim_leading(Pn, d - 2) if not Pn.is_zero() else Pn, Qn, order_hint=tuple(cs))
    return g


# ---------------------------------------------------------------------------
# Mobius changes of coordinates


@dataclass(frozen=True)
class ConjugatedSpace:
    """A map conjugated by ``M``: ``g = M^{-1} o f o M``.

    ``points`` and ``values`` are the critical data of ``g``; the factors
    convert similarity factors of ``f`` into those of ``g``.
    """

    map: GeneralRational
    mobius: MobiusTransform
    points: tuple[complex, ...]
    values: tuple[complex, ...]
    source_values: tuple[complex, ...]

    def value_factor(self, j: int) -> complex:
        """``(M^{-1})'(v_j)``; the conversion factor for the sigma and b columns."""
        return self.mobius.inverse().derivative(self.source_values[j - 1])

    def factor(self, j: int, k: int) -> complex:
        inv = self.mobius.inverse()
        return inv.derivative(self.source_values[j - 1]) / inv.derivative(self.source_values[k - 1])

    def reciprocal_factor(self, j: int) -> complex:
        """Factor for a reciprocal slot: ``(M^{-1})'(v_j) (iota o M)'(beta)``."""
        m = self.mobius
        beta = m.inverse()(INF)
        # (1/M)'(beta) = -M'(beta)/M(beta)^2 with M(beta) = inf; in matrix form
        # 1/M = (c z + d)/(a z + b), whose derivative is -det/(a z + b)^2.
        recip = -m.det / (m.a * beta + m.b) ** 2
        return self.value_factor(j) * recip


def mobius_conjugated_space(
    f: RationalMap,
    M: MobiusTransform,
    budget: int = 200,
    threshold: float = 1e-6,
    indices: Sequence[int] | None = None,
) -> ConjugatedSpace:
    """Conjugate ``f`` by ``M`` after checking that no budgeted orbit of the
    critical values at ``indices`` (default all) passes within ``threshold``
    (chordal) of ``M(inf)``.  The identity needs no check."""
    forbidden = M(INF)
    prof = f.profile
    if indices is None:
        indices = range(1, len(prof) + 1)
    if M.is_identity():
        indices = ()
    for j in indices:
        z = prof.values[j - 1]
        for _ in range(budget + 1):
            if chordal_distance(z, forbidden) < threshold:
                raise OrbitCollision(f"a critical orbit passes {forbidden} = M(inf)")
            if is_infinite(z):
                break
            z = f(z)
    inv = M.inverse()
    g = f.fraction.conjugate(M)
    return ConjugatedSpace(
        g,
        M,
        tuple(inv(c) for c in prof.points),
        tuple(inv(v) for v in prof.values),
        tuple(prof.values),
    )


def _probe_alphas():
    golden = (math.sqrt(5) - 1) / 2
    n = 0
    while True:
        n += 1
        r = 0.5 + 2.5 * ((n * golden * 0.7548776662) % 1.0)
        yield r * complex(math.cos(2 * math.pi * n * golden), math.sin(2 * math.pi * n * golden))


def choose_probe_mobius(f: RationalMap, budget: int = 200, min_distance: float = 0.1, attempts: int = 500) -> MobiusTransform:
    """``M(z) = alpha z / (alpha - z)`` with ``M(inf) = -alpha`` kept at
    chordal distance ``min_distance`` from every budgeted critical orbit."""
    orbit = []
    for v in f.profile.values:
        z = v
        for _ in range(budget + 1):
            orbit.append(z)
            if is_infinite(z) or abs(z) > 1e12:
                break
            z = f(z)
    orbit_arr = [z for z in orbit]
    for n, alpha in enumerate(_probe_alphas()):
        if n >= attempts:
            break
        if all(chordal_distance(-alpha, z) >= min_distance for z in orbit_arr):
            return MobiusTransform(alpha, 0, -1, alpha)
    raise OrbitCollision("no admissible probe Mobius map found")


# ---------------------------------------------------------------------------
# Classification and normalization


@dataclass(frozen=True)
class FixedPoint:
    point: complex
    multiplier: complex


@dataclass(frozen=True)
class SpaceClassification:
    """Normalization case with the conjugating map and the normalized map.

    ``normalized = P o f o P^{-1}`` with ``P = normalizer``.  The normalized
    map lists its designated critical points last among the finite-valued
    ones (value 1 for H and NN; values 1 then 0 for ND).
    """

    case: str
    normalizer: MobiusTransform
    normalized: RationalMap
    fixed_points: tuple[FixedPoint, ...]
    chosen: FixedPoint
    designated: tuple[int, ...]


def fixed_points(f: RationalMap) -> list[FixedPoint]:
    """Fixed points on the sphere with multipliers; infinity is listed first."""
    out = [FixedPoint(INF, f.infinity_multiplier)]
    eq = f.numerator - ComplexPoly((1.0, 0.0)) * f.Q
    if eq.degree >= 1:
        for r in find_roots(eq):
            out.append(FixedPoint(r.center, f.deriv(r.center)))
    return out


def _second_derivative_scale(f: RationalMap, a: complex) -> tuple[complex, float]:
    return f.deriv(a, 2), 1.0 + abs(f.sigma) + float(np.abs(f.numerator.array).max())


def _is_nondegenerate(f: RationalMap, fp: FixedPoint) -> bool:
    if is_infinite(fp.point):
        return abs(f.b) > 1e-10
    val, scale = _second_derivative_scale(f, fp.point)
    return abs(val) > 1e-8 * scale


def _to_infinity(f: RationalMap, a: complex) -> tuple[RationalMap, MobiusTransform]:
    """Move the finite fixed point ``a`` to infinity with ``z -> 1/(z - a)``."""
    P0 = MobiusTransform(0, 1, 1, -a)
    g = f.fraction.conjugate(P0.inverse())
    d = f.degree
    num = trim_leading(g.num, d)
    den = trim_leading(g.den, d - 1)
    return RationalMap.from_fraction(num, den), P0


def classify(
    f: RationalMap,
    case: str | None = None,
    petals: tuple[int, int] | None = None,
    designated: int | None = None,
) -> SpaceClassification:
    """Choose the normalization case and conjugate ``f`` into normal form.

    ``H``: a fixed point with multiplier outside {0, 1}, moved to infinity,
    with ``b = 0`` and the last finite critical value equal to 1.
    ``NN``: a nondegenerate multiplier-1 fixed point, ``sigma = b = 1``.
    ``ND``: all multiplier-1 fixed points degenerate; ``sigma = 1, b = 0`` and
    the ``petals`` critical points (1-based, of the normalized profile before
    reordering) get values 1 and 0.
    """
    fps = fixed_points(f)
    ambiguous = [fp for fp in fps if ONE_TOL < abs(fp.multiplier - 1) <= AMBIGUOUS_TOL]
    if ambiguous and case is None:
        raise AmbiguousClassification(
            f"multiplier {ambiguous[0].multiplier} is within {AMBIGUOUS_TOL} of 1; assert a case"
        )
    hyper = [fp for fp in fps if abs(fp.multiplier) > 1e-12 and abs(fp.multiplier - 1) > ONE_TOL]
    parab = [fp for fp in fps if abs(fp.multiplier - 1) <= (AMBIGUOUS_TOL if case else ONE_TOL)]
    nn = [fp for fp in parab if _is_nondegenerate(f, fp)]
    if case is None:
        case = "H" if hyper else ("NN" if nn else "ND")
    if case == "H":
        pool = hyper
    elif case == "NN":
        pool = nn
    elif case == "ND":
        pool = [fp for fp in parab if fp not in nn]
    else:
        raise ValueError(f"unknown case {case!r}")
    if not pool:
        raise CaseMismatch(f"no fixed point qualifies for case {case}")
    at_inf = [fp for fp in pool if is_infinite(fp.point)]
    if at_inf:
        chosen = at_inf[0]
    else:
        chosen = sorted(pool, key=lambda fp: (-round(abs(fp.multiplier), 12),) + sort_key(fp.point))[0]
    if is_infinite(chosen.point):
        g, P0 = f, MobiusTransform.identity()
    else:
        g, P0 = _to_infinity(f, chosen.point)
    prof = g.profile
    finite_idx = [j for j in range(1, len(prof) + 1) if prof.finite[j - 1]]
    if case == "H":
        e = -g.b / (g.sigma - 1)
        cands = [j for j in finite_idx if abs(prof.value(j) - e) > 1e-10 * (1 + abs(e))]
        if designated is not None:
            cands = [designated] if designated in cands else []
        if not cands:
            raise CaseMismatch("every finite critical value equals the fixed point of the affine part")
        jp = cands[-1]
        A = MobiusTransform.affine(prof.value(jp) - e, e)
        marks = (jp,)
    elif case == "NN":
        if abs(g.b) <= 1e-12:
            raise CaseMismatch("parabolic point is degenerate")
        cands = finite_idx if designated is None else [designated]
        if not cands:
            raise CaseMismatch("no finite critical value to normalize")
        jp = cands[-1]
        A = MobiusTransform.affine(g.b, prof.value(jp) - g.b)
        marks = (jp,)
    else:
        if petals is None:
            if len(finite_idx) < 2:
                raise CaseMismatch("case ND needs two finite critical values")
            petals = (finite_idx[-2], finite_idx[-1])
        j1, j0 = petals
        v1, v0 = prof.value(j1), prof.value(j0)
        if is_infinite(v1) or is_infinite(v0) or abs(v1 - v0) <= 1e-12:
            raise CaseMismatch("petal critical values must be finite and distinct")
        A = MobiusTransform.affine(v1 - v0, v0)
        marks = (j1, j0)
    normalizer = A.inverse().compose(P0)
    h = RationalMap.from_fraction(*_conj_affine(g, A))
    h = _designate_last(h, [A.inverse()(prof.point(j)) for j in marks])
    hp = h.profile
    n_fin = hp.finite_count
    designated_out = tuple(range(n_fin - len(marks) + 1, n_fin + 1))
    return SpaceClassification(case, normalizer, h, tuple(fps), chosen, designated_out)


def _conj_affine(g: RationalMap, A: MobiusTransform) -> tuple[ComplexPoly, ComplexPoly]:
    c = g.fraction.conjugate(A)
    d = g.degree
    return trim_leading(c.num, d), trim_leading(c.den, d - 1)


def _designate_last(h: RationalMap, marked: Sequence[complex]) -> RationalMap:
    prof = h.profile
    marked_idx = [prof.index_of(z) for z in marked]
    fin = [j for j in range(1, len(prof) + 1) if prof.finite[j - 1] and j not in marked_idx]
    inf = [j for j in range(1, len(prof) + 1) if not prof.finite[j - 1]]
    order = fin + marked_idx + inf
    return h.with_order([prof.point(j) for j in order])


def check_normal_form(cls: SpaceClassification, tol: float = 1e-10) -> None:
    """Raise ``CaseMismatch`` when the normalized map violates its case."""
    h = cls.normalized
    prof = h.profile
    vals = [prof.value(j) for j in cls.designated]
    if cls.case == "H":
        ok = abs(h.b) <= tol and abs(vals[0] - 1) <= tol and abs(h.sigma - 1) > ONE_TOL
    elif cls.case == "NN":
        ok = abs(h.sigma - 1) <= tol and abs(h.b - 1) <= tol and abs(vals[0] - 1) <= tol
    else:
        ok = abs(h.sigma - 1) <= tol and abs(h.b) <= tol and abs(vals[0] - 1) <= tol and abs(vals[1]) <= tol
    if not ok:
        raise CaseMismatch(f"normalized map is not in case-{cls.case} normal form")
