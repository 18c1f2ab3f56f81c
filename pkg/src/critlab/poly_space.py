"""Monic centered polynomials parametrized by their critical values.

A map ``f(z) = z^d + a_1 z^{d-2} + ... + a_{d-1}`` is stored through its
lower coefficients.  Near a base map with a fixed multiplicity pattern the
critical values are local coordinates; ``coeffs_from_critical_values``
inverts that chart and ``partial_derivative_poly`` gives the derivative of
``f`` along one critical-value coordinate.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import MultiplicityBroken, NonConvergence, SingularJacobian, SingularSystem
from .numerics import INF, ComplexPoly, find_roots, is_infinite, newton_solve, poly_taylor

MAX_DEGREE = 12
_REAL_TOL = 1e-12


@dataclass(frozen=True)
class CriticalProfile:
    """Critical points with multiplicities and values, in index order.

    Indices used throughout the package are 1-based positions in this
    profile.  Infinite critical values are stored as ``INF``.
    """

    points: tuple[complex, ...]
    multiplicities: tuple[int, ...]
    values: tuple[complex, ...]
    tolerance: float = 1e-10

    def __len__(self) -> int:
        return len(self.points)

    @property
    def finite(self) -> tuple[bool, ...]:
        return tuple(not is_infinite(v) for v in self.values)

    @property
    def finite_count(self) -> int:
        return sum(self.finite)

    def point(self, j: int) -> complex:
        return self.points[j - 1]

    def value(self, j: int) -> complex:
        return self.values[j - 1]

    def multiplicity(self, j: int) -> int:
        return self.multiplicities[j - 1]

    def index_of(self, z: complex) -> int:
        return int(np.argmin([abs(z - c) for c in self.points])) + 1

    def reordered(self, order: Sequence[int]) -> "CriticalProfile":
        """Profile with entries taken at the given 0-based positions."""
        return CriticalProfile(
            tuple(self.points[i] for i in order),
            tuple(self.multiplicities[i] for i in order),
            tuple(self.values[i] for i in order),
            self.tolerance,
        )


def match_order(points: Sequence[complex], hint: Sequence[complex]) -> list[int]:
    """Positions into ``points`` that best match ``hint`` one to one."""
    if len(points) != len(hint):
        raise MultiplicityBroken(
            f"expected {len(hint)} distinct critical points, found {len(points)}"
        )
    cost = np.abs(np.subtract.outer(np.asarray(hint, complex), np.asarray(points, complex)))
    rows, cols = linear_sum_assignment(cost)
    order = [0] * len(hint)
    for r, c in zip(rows, cols):
        order[r] = int(c)
    return order


_SLOT = re.compile(r"^(v|u)_?(\d+)$")


def parse_slot(which) -> tuple[str, int | None]:
    """Normalize a coordinate name: ``3 -> ('v', 3)``, ``'sigma'``, ``'b'``."""
    if isinstance(which, (int, np.integer)):
        return ("v", int(which))
    if isinstance(which, tuple):
        return which
    s = str(which).strip().lower()
    if s in ("sigma", "s"):
        return ("sigma", None)
    if s == "b":
        return ("b", None)
    m = _SLOT.match(s)
    if m:
        return ("v", int(m.group(2)))
    raise ValueError(f"unknown coordinate {which!r}")


def slot_label(slot: tuple[str, int | None]) -> str:
    kind, k = slot
    return kind if k is None else f"{kind}{k}"


@dataclass(frozen=True)
class SlotPartial:
    """Derivative of a family of maps along one coordinate.

    ``value(z)`` is the derivative of ``f(z)``, ``over_derivative(z)`` that
    quantity divided by ``f'(z)`` and ``derivative(z)`` its ``z``-derivative.
    """

    slot: tuple[str, int | None]
    numerator: ComplexPoly | None
    _value: object = field(repr=False, compare=False)
    _over: object = field(repr=False, compare=False)
    _deriv: object = field(repr=False, compare=False)

    def value(self, z):
        return self._value(z)

    def over_derivative(self, z):
        return self._over(z)

    def derivative(self, z):
        return self._deriv(z)


@dataclass(frozen=True)
class PolyMap:
    """``z^d + a_1 z^{d-2} + ... + a_{d-1}``; ``coeffs = (a_1, ..., a_{d-1})``."""

    degree: int
    coeffs: tuple[complex, ...]
    real: bool = False
    order_hint: tuple[complex, ...] | None = field(default=None, compare=False, repr=False)

    is_rational = False

    def __post_init__(self):
        d = int(self.degree)
        if d < 2 or d > MAX_DEGREE:
            raise ValueError(f"degree must be between 2 and {MAX_DEGREE}, got {d}")
        object.__setattr__(self, "degree", d)
        c = tuple(complex(x) for x in self.coeffs)
        if len(c) != d - 1:
            raise ValueError(f"a degree-{d} map needs {d - 1} coefficients, got {len(c)}")
        if self.real:
            if any(abs(x.imag) > _REAL_TOL for x in c):
                raise ValueError("real map has coefficients with nonzero imaginary part")
            c = tuple(complex(x.real, 0.0) for x in c)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_poly(cls, p: ComplexPoly, real: bool = False) -> "PolyMap":
        if p.degree < 2 or abs(p.lead - 1) > 1e-14 or abs(p.coeffs[1]) > 1e-14:
            raise ValueError("polynomial must be monic and centered")
        return cls(p.degree, p.coeffs[2:], real=real)

    @cached_property
    def poly(self) -> ComplexPoly:
        return ComplexPoly((1.0, 0.0) + self.coeffs)

    @property
    def numerator(self) -> ComplexPoly:
        return self.poly

    @property
    def denominator(self) -> ComplexPoly:
        return ComplexPoly((1.0,))

    @cached_property
    def critical_polynomial(self) -> ComplexPoly:
        return self.poly.deriv()

    @cached_property
    def _second(self) -> ComplexPoly:
        return self.poly.deriv(2)

    @property
    def escape_radius(self) -> float:
        return 1.0 + max(2.0, sum(abs(a) for a in self.coeffs))

    def __call__(self, z):
        if is_infinite(z):
            return INF
        return self.poly(z)

    def deriv(self, z, k: int = 1):
        if k == 1:
            return self.critical_polynomial(z)
        if k == 2:
            return self._second(z)
        return self.poly.deriv(k)(z)

    def is_pole(self, z) -> bool:
        return False

    @cached_property
    def profile(self) -> CriticalProfile:
        return critical_profile(self)

    @cached_property
    def _partials(self) -> dict:
        return {}

    def partial(self, which) -> SlotPartial:
        slot = parse_slot(which)
        if slot[0] != "v":
            raise ValueError("polynomial maps only have critical-value coordinates")
        if slot not in self._partials:
            p = partial_derivative_poly(self, slot[1]).poly
            dp = p.deriv()
            fp = self.critical_polynomial
            self._partials[slot] = SlotPartial(slot, p, p, lambda z: p(z) / fp(z), dp)
        return self._partials[slot]

    def with_order(self, points: Sequence[complex]) -> "PolyMap":
        return replace(self, order_hint=tuple(complex(z) for z in points))

    def to_json(self) -> dict:
        out = {"type": "poly", "degree": self.degree, "coeffs": [[c.real, c.imag] for c in self.coeffs]}
        if self.real:
            out["real"] = True
        return out


def critical_profile(f: PolyMap, tol: float = 1e-10) -> CriticalProfile:
    """Critical points (roots of ``f'``), multiplicities and critical values.

    Points are ordered by descending (real, imag) unless the map carries an
    explicit ordering hint.
    """
    clusters = find_roots(f.critical_polynomial, tol=tol)
    pts = [c.center for c in clusters]
    mult = [c.multiplicity for c in clusters]
    if f.real:
        if any(abs(z.imag) > _REAL_TOL for z in pts):
            raise ValueError("real map has non-real critical points")
        pts = [complex(z.real, 0.0) for z in pts]
    order = match_order(pts, f.order_hint) if f.order_hint is not None else range(len(pts))
    pts = [pts[i] for i in order]
    mult = [mult[i] for i in order]
    vals = [f(z) for z in pts]
    return CriticalProfile(tuple(pts), tuple(mult), tuple(vals), tol)


def _chart_residual(d: int, mult: Sequence[int], x: np.ndarray, target: np.ndarray) -> np.ndarray:
    p = len(mult)
    poly = np.concatenate([[1.0, 0.0], x[: d - 1]])
    out = []
    for j in range(p):
        t = poly_taylor(poly, x[d - 1 + j], mult[j] + 1)
        out.append(t[0] - target[j])
        out.extend(t[1:])
    return np.array(out, dtype=complex)


def _chart_jacobian(d: int, mult: Sequence[int], x: np.ndarray) -> np.ndarray:
    p = len(mult)
    n = d - 1 + p
    poly = np.concatenate([[1.0, 0.0], x[: d - 1]])
    rows = []
    for j in range(p):
        c = x[d - 1 + j]
        m = mult[j]
        t = poly_taylor(poly, c, m + 2)
        for r in range(m + 1):
            row = np.zeros(n, dtype=complex)
            for i in range(d - 1):
                e = d - 2 - i
                if e >= r:
                    row[i] = math.comb(e, r) * c ** (e - r)
            row[d - 1 + j] = (r + 1) * t[r + 1]
            rows.append(row)
    return np.array(rows)


def _solve_chart(f0: PolyMap, target: np.ndarray, tol: float) -> tuple[np.ndarray, tuple]:
    prof = f0.profile
    d, mult = f0.degree, prof.multiplicities
    x0 = np.concatenate([np.array(f0.coeffs, complex), np.array(prof.points, complex)])
    start = np.array(prof.values, complex)
    scale = 1.0 + float(np.abs(target).max(initial=0.0))
    newton_tol = 0.1 * tol * scale

    def run(x, tgt):
        res = newton_solve(
            lambda y: _chart_residual(d, mult, y, tgt),
            x,
            jac=lambda y: _chart_jacobian(d, mult, y),
            tol=newton_tol,
        )
        return res.x, res

    try:
        return run(x0, target)
    except (NonConvergence, SingularJacobian):
        pass
    # continuation along the straight segment from V(f0) to the target
    for steps in (4, 16, 64):
        try:
            x = x0
            for s in range(1, steps + 1):
                x, res = run(x, start + (target - start) * s / steps)
            return x, res
        except (NonConvergence, SingularJacobian):
            continue
    raise NonConvergence("critical-value chart inversion failed; target too far from the base map")


def coeffs_from_critical_values(f0: PolyMap, target: Sequence[complex], tol: float = 1e-12) -> PolyMap:
    """The map ``g`` near ``f0`` with the same multiplicity pattern and
    critical values ``target`` (ordered as in ``f0.profile``).

    The result carries its critical points as an ordering hint, so index
    ``j`` of ``g.profile`` continues index ``j`` of ``f0.profile``.
    """
    prof = f0.profile
    target = np.asarray(target, dtype=complex)
    if target.shape != (len(prof),):
        raise ValueError(f"expected {len(prof)} critical values, got {target.shape}")
    x, _ = _solve_chart(f0, target, tol)
    d = f0.degree
    real = f0.real and bool(np.all(np.abs(target.imag) <= _REAL_TOL))
    coeffs = x[: d - 1]
    if real:
        coeffs = coeffs.real.astype(complex)
    g = PolyMap(d, tuple(coeffs), real=real, order_hint=tuple(x[d - 1:]))
    gp = g.profile
    if gp.multiplicities != prof.multiplicities:
        raise MultiplicityBroken(f"multiplicities {gp.multiplicities} differ from {prof.multiplicities}")
    err = np.abs(np.array(gp.values) - target).max()
    if err > tol * (1.0 + np.abs(target).max()):
        raise NonConvergence(f"critical values reproduced only to {err:.3g}")
    return g


def critical_values(f: PolyMap) -> np.ndarray:
    return np.array(f.profile.values, dtype=complex)


@dataclass(frozen=True)
class PartialDerivativePoly:
    index: int
    poly: ComplexPoly
    condition: float


def hermite_system(points: Sequence[complex], mult: Sequence[int], ncoef: int) -> np.ndarray:
    """Confluent Vandermonde matrix: row ``(j, r)`` gives the ``r``-th Taylor
    coefficient at ``points[j]`` of ``sum_i b_i z^i``."""
    rows = []
    for c, m in zip(points, mult):
        for r in range(m):
            rows.append([math.comb(i, r) * c ** (i - r) if i >= r else 0.0 for i in range(ncoef)])
    return np.array(rows, dtype=complex)


def solve_hermite(A: np.ndarray, rhs: np.ndarray, rcond: float = 1e-13) -> tuple[np.ndarray, float]:
    """Solve a square system by column-pivoted QR; raise if numerically singular."""
    Qm, R, piv = scipy.linalg.qr(A, pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return np.zeros(0, dtype=complex), 1.0
    ratio = diag[-1] / diag[0] if diag[0] > 0 else 0.0
    if ratio < rcond:
        raise SingularSystem(f"Hermite system is singular (pivot ratio {ratio:.3g})")
    y = scipy.linalg.solve_triangular(R, Qm.conj().T @ rhs)
    sol = np.empty_like(y)
    sol[piv] = y
    return sol, 1.0 / ratio


def partial_derivative_poly(f: PolyMap, k: int) -> PartialDerivativePoly:
    """The derivative of ``f`` along the critical-value coordinate ``v_k``.

    It is the unique polynomial of degree at most ``d - 2`` such that
    ``p - [j == k]`` vanishes to order ``m_j`` at every critical point ``c_j``.
    """
    prof = f.profile
    if not 1 <= k <= len(prof):
        raise ValueError(f"critical index {k} out of range 1..{len(prof)}")
    n = f.degree - 1
    A = hermite_system(prof.points, prof.multiplicities, n)
    rhs = np.zeros(n, dtype=complex)
    row = sum(prof.multiplicities[: k - 1])
    rhs[row] = 1.0
    b, cond = solve_hermite(A, rhs)
    return PartialDerivativePoly(k, ComplexPoly(tuple(b[::-1])), cond)


def simple_point_partial(f: PolyMap, k: int) -> ComplexPoly:
    """Closed form ``f'(z) / (f''(c_k)(z - c_k))`` valid when ``c_k`` is simple."""
    prof = f.profile
    if prof.multiplicity(k) != 1:
        raise ValueError("closed form needs a simple critical point")
    c = prof.point(k)
    q, _ = np.polydiv(f.critical_polynomial.array, np.array([1.0, -c]))
    return ComplexPoly(tuple(q / f.deriv(c, 2)))


def _default_grid() -> np.ndarray:
    xs = np.linspace(-1.5, 1.5, 5)
    return (xs[:, None] + 1j * xs[None, :]).ravel()


def fd_check_partial(f: PolyMap, k: int, h: float = 1e-6, probes: Sequence[complex] | None = None) -> float:
    """Largest relative error between the Hermite partial and a central
    difference of ``f`` through the chart, over a probe grid."""
    z = np.asarray(probes if probes is not None else _default_grid(), dtype=complex)
    v = critical_values(f)
    e = np.zeros_like(v)
    e[k - 1] = h
    gp = coeffs_from_critical_values(f, v + e)
    gm = coeffs_from_critical_values(f, v - e)
    fd = (gp.poly(z) - gm.poly(z)) / (2 * h)
    exact = f.partial(k).value(z)
    return float((np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))).max())
