"""Complex polynomial arithmetic, root finding, Newton iteration and SVD rank.

Polynomials are stored as tuples of complex coefficients, highest degree
first, which matches ``numpy.polyval`` conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonConvergence, SingularJacobian

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ComplexPoly:
    """Polynomial with complex coefficients, highest degree first."""

    coeffs: tuple[complex, ...]

    def __post_init__(self):
        c = [complex(x) for x in self.coeffs]
        while len(c) > 1 and c[0] == 0:
            c.pop(0)
        if not c:
            c = [0j]
        object.__setattr__(self, "coeffs", tuple(c))

    @classmethod
    def from_roots(cls, roots: Iterable[complex], lead: complex = 1.0) -> "ComplexPoly":
        r = np.asarray(list(roots), dtype=complex)
        if r.size == 0:
            return cls((lead,))
        return cls(tuple(lead * np.poly(r)))

    @classmethod
    def constant(cls, value: complex) -> "ComplexPoly":
        return cls((value,))

    @classmethod
    def monomial(cls, degree: int, value: complex = 1.0) -> "ComplexPoly":
        return cls((value,) + (0j,) * degree)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=complex)

    @property
    def lead(self) -> complex:
        return self.coeffs[0]

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def __call__(self, z):
        if np.isscalar(z):
            acc = 0j
            for a in self.coeffs:
                acc = acc * z + a
            return acc
        return np.polyval(self.array, np.asarray(z, dtype=complex))

    def deriv(self, k: int = 1) -> "ComplexPoly":
        if k == 0:
            return self
        if self.degree < k:
            return ComplexPoly((0j,))
        return ComplexPoly(tuple(np.polyder(self.array, k)))

    def __add__(self, other: "ComplexPoly") -> "ComplexPoly":
        return ComplexPoly(tuple(np.polyadd(self.array, _as_poly(other).array)))

    def __sub__(self, other: "ComplexPoly") -> "ComplexPoly":
        return ComplexPoly(tuple(np.polysub(self.array, _as_poly(other).array)))

    def __mul__(self, other) -> "ComplexPoly":
        if isinstance(other, ComplexPoly):
            return ComplexPoly(tuple(np.polymul(self.array, other.array)))
        return ComplexPoly(tuple(self.array * complex(other)))

    __rmul__ = __mul__

    def __neg__(self) -> "ComplexPoly":
        return self * -1.0

    def monic(self) -> "ComplexPoly":
        return ComplexPoly(tuple(self.array / self.lead))

    def compose(self, inner: "ComplexPoly") -> "ComplexPoly":
        out = ComplexPoly((0j,))
        for a in self.coeffs:
            out = out * inner + ComplexPoly((a,))
        return out

    def taylor(self, center: complex, order: int) -> np.ndarray:
        """Coefficients ``t_0..t_{order-1}`` of ``p(center + h)`` in powers of ``h``."""
        return poly_taylor(self.array, center, order)

    def abs_scale(self, z: complex) -> float:
        """Sum of ``|a_k| |z|^k``; the natural size of a rounding error in ``p(z)``."""
        return float(np.polyval(np.abs(self.array), abs(z)))

    def to_pairs(self) -> list[list[float]]:
        return [[c.real, c.imag] for c in self.coeffs]


def _as_poly(p) -> ComplexPoly:
    return p if isinstance(p, ComplexPoly) else ComplexPoly((complex(p),))


def poly_taylor(coeffs: np.ndarray, center: complex, order: int) -> np.ndarray:
    """Taylor coefficients at ``center`` by repeated synthetic division."""
    work = np.array(coeffs, dtype=complex)
    out = np.zeros(order, dtype=complex)
    for r in range(order):
        if work.size == 0:
            break
        acc = 0j
        quot = np.empty(work.size - 1, dtype=complex)
        for i, a in enumerate(work):
            acc = acc * center + a
            if i < work.size - 1:
                quot[i] = acc
        out[r] = acc
        work = quot
    return out


def series_divide(num: np.ndarray, den: np.ndarray, order: int) -> np.ndarray:
    """Power-series quotient of two ascending coefficient arrays."""
    if den[0] == 0:
        raise ZeroDivisionError("series denominator vanishes at the expansion point")
    out = np.zeros(order, dtype=complex)
    for i in range(order):
        acc = num[i] if i < len(num) else 0j
        for k in range(1, min(i, len(den) - 1) + 1):
            acc -= den[k] * out[i - k]
        out[i] = acc / den[0]
    return out


def ratio_taylor(num: ComplexPoly, den: ComplexPoly, center: complex, order: int) -> np.ndarray:
    """Taylor coefficients of ``num/den`` at a point where ``den`` does not vanish."""
    return series_divide(num.taylor(center, order), den.taylor(center, order), order)


@dataclass(frozen=True)
class RootCluster:
    center: complex
    multiplicity: int
    radius: float
    tolerance: float = 0.0


def _aberth(a: np.ndarray, maxiter: int) -> np.ndarray:
    n = a.size - 1
    absa = np.abs(a)
    k = np.arange(1, n + 1)
    bounds = absa[1:] ** (1.0 / k)
    bounds[-1] = (absa[-1] / 2.0) ** (1.0 / n)
    radius = 2.0 * bounds.max()
    if radius == 0:
        radius = 1.0
    angles = 2 * np.pi * (k - 1) / n + 0.4
    z = radius * (1 + 0.05 * np.cos(3 * k)) * np.exp(1j * angles)
    da = np.polyder(a)
    done = np.zeros(n, dtype=bool)
    for _ in range(maxiter):
        pz = np.polyval(a, z)
        bound = 4 * n * EPS * np.polyval(absa, np.abs(z))
        done |= np.abs(pz) <= bound
        if done.all():
            return z
        act = ~done
        dpz = np.polyval(da, z[act])
        flat = dpz == 0
        if flat.any():
            dpz[flat] = EPS * (1 + np.abs(z[act][flat]))
        ratio = pz[act] / dpz
        diff = z[act, None] - z[None, :]
        idx = np.nonzero(act)[0]
        diff[np.arange(idx.size), idx] = np.inf
        s = (1.0 / diff).sum(axis=1)
        z[act] = z[act] - ratio / (1.0 - ratio * s)
    raise NonConvergence(f"Aberth iteration did not converge in {maxiter} steps")


def _inclusion_radii(a: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``n |W_i|`` with ``W_i`` the Weierstrass correction; disks contain roots."""
    n = z.size
    diff = z[:, None] - z[None, :]
    np.fill_diagonal(diff, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.abs(np.polyval(a, z) / diff.prod(axis=1))
    w[~np.isfinite(w)] = np.inf
    return n * w


def _cluster(points: np.ndarray, threshold: float, radii: np.ndarray | None = None) -> list[list[int]]:
    n = points.size
    if radii is None:
        radii = np.zeros(n)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(points[i] - points[j]) <= max(threshold, radii[i] + radii[j]):
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def sort_key(z: complex) -> tuple[float, float]:
    """Descending lexicographic (real, imag) order, robust to rounding noise."""
    return (-round(z.real, 9) + 0.0, -round(z.imag, 9) + 0.0)


def find_roots(
    p: ComplexPoly | Sequence[complex],
    tol: float = 1e-10,
    cluster_tol: float = 1e-6,
    maxiter: int = 1000,
) -> list[RootCluster]:
    """All roots of ``p`` grouped into clusters with multiplicities.

    Aberth-Ehrlich iteration from a perturbed circle of Fujiwara-bound radius,
    stopped on a backward-error criterion, then single-linkage clustering.
    Cluster centers of multiple roots are polished by Newton on the
    ``(m-1)``-th derivative.
    """
    p = p if isinstance(p, ComplexPoly) else ComplexPoly(tuple(p))
    if p.degree < 1:
        raise ValueError("find_roots needs a nonconstant polynomial")
    a = p.array / p.lead
    zeros = 0
    while a[-1] == 0:
        a = a[:-1]
        zeros += 1
    roots = np.zeros(zeros, dtype=complex)
    if a.size > 1:
        roots = np.concatenate([roots, _aberth(a, maxiter)])
    threshold = cluster_tol * (1 + np.abs(roots).max())
    radii = _inclusion_radii(p.array / p.lead, roots) if roots.size > 1 else np.zeros(roots.size)
    clusters = []
    for group in _cluster(roots, threshold, radii):
        pts = roots[group]
        center = complex(pts.mean())
        m = len(group)
        radius = float(np.abs(pts - center).max())
        center = _polish_multiple(p, center, m, radius + threshold)
        scale = p.abs_scale(max(1.0, abs(center))) / abs(p.lead)
        if abs(p(center)) / abs(p.lead) > tol * scale:
            raise NonConvergence(f"root {center} fails the residual check")
        clusters.append(RootCluster(center, m, radius, tol))
    clusters.sort(key=lambda c: sort_key(c.center))
    return clusters


def _polish_multiple(p: ComplexPoly, center: complex, m: int, reach: float) -> complex:
    """A few guarded Newton steps on ``p^(m-1)``, which has a simple root there."""
    g, dg = p.deriv(m - 1), p.deriv(m)
    z = center
    for _ in range(3):
        d = dg(z)
        if d == 0:
            break
        znew = z - g(z) / d
        if abs(g(znew)) >= abs(g(z)) or abs(znew - center) > reach:
            break
        z = znew
    return z


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    residual_norms: tuple[float, ...]
    iterations: int
    tolerance: float
    jacobian: str


def fd_jacobian(F: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel_step: float = 1e-7) -> np.ndarray:
    """Central finite-difference Jacobian of a holomorphic map ``C^n -> C^m``."""
    x = np.asarray(x, dtype=complex)
    cols = []
    for i in range(x.size):
        h = rel_step * (1 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * h))
    return np.column_stack(cols)


def newton_solve(
    F: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[complex],
    jac: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-12,
    maxiter: int = 60,
    cond_limit: float = 1e14,
) -> NewtonResult:
    """Damped Newton iteration for a square complex system ``F(x) = 0``.

    Stops when ``||F(x)||_inf <= tol``. Without ``jac`` a central-difference
    Jacobian with step ``1e-7 (1 + |x_i|)`` is used.
    """
    x = np.array(x0, dtype=complex)
    J = jac if jac is not None else (lambda y: fd_jacobian(F, y))
    r = np.asarray(F(x), dtype=complex)
    norms = [float(np.abs(r).max(initial=0.0))]
    for it in range(maxiter):
        if norms[-1] <= tol:
            return NewtonResult(x, tuple(norms), it, tol, "analytic" if jac else "fd")
        A = np.asarray(J(x), dtype=complex)
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] == 0 or s[0] / s[-1] > cond_limit:
            raise SingularJacobian(f"Jacobian condition number {s[0] / max(s[-1], 1e-300):.3g}")
        step = np.linalg.solve(A, -r)
        t = 1.0
        for _ in range(12):
            trial = x + t * step
            rt = np.asarray(F(trial), dtype=complex)
            nt = float(np.abs(rt).max(initial=0.0))
            if np.isfinite(nt) and nt < norms[-1]:
                break
            t *= 0.5
        else:
            raise NonConvergence(f"Newton stalled at residual {norms[-1]:.3g} (tol {tol:.3g})")
        x, r = trial, rt
        norms.append(nt)
    if norms[-1] <= tol:
        return NewtonResult(x, tuple(norms), maxiter, tol, "analytic" if jac else "fd")
    raise NonConvergence(f"Newton residual {norms[-1]:.3g} above {tol:.3g} after {maxiter} steps")


@dataclass(frozen=True)
class SingularSpectrum:
    values: tuple[float, ...]
    rank: int
    tolerance: float

    @property
    def smallest(self) -> float:
        return self.values[-1] if self.values else 0.0


def singular_values(M, tol: float = 1e-10) -> SingularSpectrum:
    """Singular values (descending) and numerical rank ``#{s > tol * s_max}``."""
    A = np.atleast_2d(np.asarray(M, dtype=complex))
    if A.size == 0:
        return SingularSpectrum((), 0, tol)
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.count_nonzero(s > tol * s[0])) if s[0] > 0 else 0
    return SingularSpectrum(tuple(float(v) for v in s), rank, tol)


def chordal_distance(a: complex, b: complex) -> float:
    """Chordal distance on the Riemann sphere; infinite entries allowed."""
    ainf, binf = is_infinite(a), is_infinite(b)
    if ainf and binf:
        return 0.0
    if ainf:
        return 2.0 / math.sqrt(1 + abs(b) ** 2)
    if binf:
        return 2.0 / math.sqrt(1 + abs(a) ** 2)
    return 2.0 * abs(a - b) / math.sqrt((1 + abs(a) ** 2) * (1 + abs(b) ** 2))


INF = complex(math.inf, 0.0)


def is_infinite(z) -> bool:
    return z is None or math.isinf(abs(complex(z)))


@dataclass(frozen=True)
class MobiusTransform:
    """``z -> (a z + b) / (c z + d)`` acting on the Riemann sphere."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, complex(getattr(self, name)))
        if self.det == 0:
            raise ValueError("degenerate Mobius transformation")

    @classmethod
    def identity(cls) -> "MobiusTransform":
        return cls(1, 0, 0, 1)

    @classmethod
    def affine(cls, scale: complex, shift: complex) -> "MobiusTransform":
        return cls(scale, shift, 0, 1)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def is_identity(self) -> bool:
        return self.b == 0 and self.c == 0 and self.a == self.d

    def __call__(self, z):
        if is_infinite(z):
            return INF if self.c == 0 else self.a / self.c
        den = self.c * z + self.d
        if den == 0:
            return INF
        return (self.a * z + self.b) / den

    def derivative(self, z) -> complex:
        den = self.c * z + self.d
        if den == 0:
            return INF
        return self.det / den**2

    def inverse(self) -> "MobiusTransform":
        return MobiusTransform(self.d, -self.b, -self.c, self.a)

    def compose(self, inner: "MobiusTransform") -> "MobiusTransform":
        """``self o inner``."""
        a = np.array([[self.a, self.b], [self.c, self.d]]) @ np.array([[inner.a, inner.b], [inner.c, inner.d]])
        return MobiusTransform(a[0, 0], a[0, 1], a[1, 0], a[1, 1])

    def to_pairs(self) -> list[list[float]]:
        return [[v.real, v.imag] for v in (self.a, self.b, self.c, self.d)]


def homogenize(p: ComplexPoly, m: MobiusTransform, degree: int) -> ComplexPoly:
    """``(c w + d)^degree * p(M(w))`` as a polynomial in ``w``."""
    num = ComplexPoly((m.a, m.b))
    den = ComplexPoly((m.c, m.d))
    coeffs = (0j,) * (degree - p.degree) + p.coeffs if p.degree < degree else p.coeffs
    out = ComplexPoly((0j,))
    one = ComplexPoly((1.0,))
    powers_num = [one]
    powers_den = [one]
    for _ in range(degree):
        powers_num.append(powers_num[-1] * num)
        powers_den.append(powers_den[-1] * den)
    for i, a in enumerate(coeffs):
        e = degree - i
        if a != 0:
            out = out + powers_num[e] * powers_den[degree - e] * a
    return out


@dataclass(frozen=True)
class GeneralRational:
    """Rational map ``num/den`` in lowest terms, without any normal form."""

    num: ComplexPoly
    den: ComplexPoly

    @property
    def degree(self) -> int:
        return max(self.num.degree, self.den.degree)

    @property
    def wronskian(self) -> ComplexPoly:
        return self.num.deriv() * self.den - self.num * self.den.deriv()

    def __call__(self, z):
        if is_infinite(z):
            if self.num.degree > self.den.degree:
                return INF
            if self.num.degree < self.den.degree:
                return 0j
            return self.num.lead / self.den.lead
        d = self.den(z)
        if d == 0:
            return INF
        return self.num(z) / d

    def deriv(self, z) -> complex:
        d = self.den(z)
        if d == 0:
            return INF
        return self.wronskian(z) / d**2

    def conjugate(self, m: MobiusTransform) -> "GeneralRational":
        """``M^{-1} o self o M``."""
        deg = self.degree
        n2 = homogenize(self.num, m, deg)
        d2 = homogenize(self.den, m, deg)
        inv = m.inverse()
        return GeneralRational(n2 * inv.a + d2 * inv.b, n2 * inv.c + d2 * inv.d)


def trim_leading(p: ComplexPoly, keep_degree: int) -> ComplexPoly:
    """Drop leading coefficients known to vanish in exact arithmetic."""
    c = p.coeffs
    if len(c) - 1 > keep_degree:
        c = c[len(c) - 1 - keep_degree:]
    return ComplexPoly(c)
