"""Transfer operator ``T_f psi(x) = sum_{f(w) = x} psi(w) / f'(w)^2`` and the
kernel identities relating it to similarity factors.

For a point ``z`` that is not critical and a finite critical value set,

    T_f[1/(z - .)](x) = 1/(f'(z)(f(z) - x)) + sum_k L_k(z)/(x - v_k)

with ``L_k = (df/dv_k) / f'``.  Summing along orbits gives the resolvent and
fixed-point relations checked below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CriticalValueCollision, DivergenceDetected, SingularSystem
from .numerics import EPS, ComplexPoly, find_roots, is_infinite, ratio_taylor, series_divide
from .orbits import OrbitWalker, series_escape, SeriesValue, similarity_factor, sum_series

COLLISION_TOL = 1e-12


def _finite_indices(f) -> list[int]:
    return [j for j, fin in enumerate(f.profile.finite, start=1) if fin]


def preimages(f, x: complex) -> np.ndarray:
    """The ``d`` preimages of ``x``; ``x`` must not be a critical value."""
    prof = f.profile
    for v in prof.values:
        if not is_infinite(v) and abs(v - x) <= COLLISION_TOL * (1 + abs(x)):
            raise CriticalValueCollision(f"{x} is a critical value")
    eq = f.numerator - f.denominator * x
    roots = find_roots(eq)
    if any(r.multiplicity > 1 for r in roots):
        raise CriticalValueCollision(f"{x} has a multiple preimage")
    return np.array([r.center for r in roots], dtype=complex)


def apply_T(f, phi: Callable[[np.ndarray], np.ndarray], x: complex) -> complex:
    """``(T_f phi)(x)``; ``phi`` is evaluated on the array of preimages."""
    w = preimages(f, x)
    fp = np.array([f.deriv(z) for z in w], dtype=complex)
    return complex(np.sum(np.asarray(phi(w), dtype=complex) / fp**2))


def kernel_identity_residual(f, z: complex, x: complex) -> float:
    """``|T[1/(z - .)](x) - 1/(f'(z)(f(z) - x)) - sum_k L_k(z)/(x - v_k)|``."""
    lhs = apply_T(f, lambda w: 1.0 / (z - w), x)
    rhs = 1.0 / (f.deriv(z) * (f(z) - x))
    for k in _finite_indices(f):
        rhs += f.partial(k).over_derivative(z) / (x - f.profile.value(k))
    return float(abs(lhs - rhs))


def local_L_coefficients(f, j: int) -> list[complex]:
    """``q_0..q_{m-1}`` with ``L_j(z) = sum_i q_{m-i} / (z - c_j)^i`` (i = 1..m)."""
    prof = f.profile
    c, m = prof.point(j), prof.multiplicity(j)
    if f.is_rational:
        t = ratio_taylor(f.critical_polynomial, f.denominator * f.denominator, c, 2 * m)
    else:
        t = f.critical_polynomial.taylor(c, 2 * m)
    r = t[m:2 * m]
    scale = float(np.abs(t).max())
    if abs(r[0]) <= 1e-12 * max(scale, 1.0):
        raise SingularSystem("leading local coefficient of f' vanishes")
    one = np.zeros(m, dtype=complex)
    one[0] = 1.0
    return [complex(q) for q in series_divide(one, r, m)]


def local_L_eval(f, j: int, z: complex) -> complex:
    """Principal-part form of ``L_j`` at ``z``; stable next to ``c_j``."""
    q = local_L_coefficients(f, j)
    c, m = f.profile.point(j), f.profile.multiplicity(j)
    h = z - c
    return complex(sum(q[m - i] / h**i for i in range(1, m + 1)))


@dataclass(frozen=True)
class IdentityResidual:
    residual: float
    truncation_bound: float
    roundoff_bound: float
    budget: int

    @property
    def bound(self) -> float:
        return self.truncation_bound + self.roundoff_bound


def _orbit_arrays(f, z: complex, n: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Points ``x_0..x_N`` and cumulative derivatives, ``N <= n``.

    ``N < n`` only when the orbit stops early: at infinity (``x_N = inf``)
    or after escaping or overflowing, where ``x_N`` is still usable.
    """
    w = OrbitWalker(f, z, series_escape(f))
    w.extend(n)
    if w.termination in ("hit_critical", "underflow"):
        raise DivergenceDetected(f"orbit {w.termination.replace('_', ' ')}")
    pts = np.array(w.points[: n + 1], dtype=complex)
    der = np.array(w.derivs[: n + 1], dtype=complex)
    return pts, der, len(pts) - 1


def _boundary(pts, der, lam, N, x) -> float:
    """``|lam^N / ((f^N)'(z)(f^N z - x))|``; zero once the orbit is at infinity."""
    if is_infinite(pts[N]) or not np.isfinite(der[N]):
        return 0.0
    return float(abs(lam) ** N / abs(der[N]) / abs(pts[N] - x))


def varphi_eval(f, z: complex, lam: complex, x: complex, budget: int = 2000, tol: float = 1e-14) -> SeriesValue:
    """``sum_{n >= 0} lam^n / ((f^n)'(z)(f^n(z) - x))``."""
    walker = OrbitWalker(f, z, series_escape(f))
    return sum_series(walker, lambda n, p, D: lam**n / D / (p - x), 0, 0j, tol, budget)


def _phi_partial(pts, der, lam, N, w) -> tuple[np.ndarray, np.ndarray]:
    """Truncated ``phi_N`` at the points ``w`` and the sum of term magnitudes."""
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    k = np.arange(N)
    coef = lam**k / der[:N]
    terms = coef[:, None] / (pts[:N, None] - w[None, :])
    return terms.sum(axis=0), np.abs(terms).sum(axis=0)


def resolvent_identity_residual(f, z: complex, lam: complex, x: complex, budget: int | None = None) -> IdentityResidual:
    """Residual of ``phi - lam T phi = 1/(z - x) + sum_k Phi_k/(v_k - x)``
    with all series cut at a common budget ``N``.

    ``Phi_k = sum_{n >= 0} lam^(n+1) L_k(f^n z)/(f^n)'(z)``.  In exact
    arithmetic the truncated residual equals ``|lam^N/((f^N)'(z)(f^N z - x))|``.
    """
    if budget is None:
        budget = max(varphi_eval(f, z, lam, x).terms_used, 1)
    pts, der, N = _orbit_arrays(f, z, budget)
    boundary = _boundary(pts, der, lam, N, x)
    phi_x, mag_x = _phi_partial(pts, der, lam, N, x)
    w = preimages(f, x)
    fp = np.array([f.deriv(y) for y in w], dtype=complex)
    phi_w, mag_w = _phi_partial(pts, der, lam, N, w)
    Tphi = np.sum(phi_w / fp**2)
    rhs = 1.0 / (z - x)
    scale = abs(phi_x[0]) + float(mag_x[0]) + abs(lam) * float(np.sum(mag_w / np.abs(fp) ** 2)) + abs(rhs)
    for k in _finite_indices(f):
        Lk = np.array([f.partial(k).over_derivative(p) for p in pts[:N]], dtype=complex)
        Phi = np.sum(lam ** (np.arange(N) + 1) * Lk / der[:N])
        vk = f.profile.value(k)
        rhs += Phi / (vk - x)
        scale += float(np.sum(np.abs(lam ** (np.arange(N) + 1) * Lk / der[:N]))) / abs(vk - x)
    res = abs(phi_x[0] - lam * Tphi - rhs)
    return IdentityResidual(float(res), float(boundary), float(1e3 * EPS * scale), N)


def fixed_point_residual(f, j: int, x: complex, budget: int = 200) -> IdentityResidual:
    """Residual of ``H_j - T H_j = sum_k L(c_j, v_k)/(v_k - x)`` with
    ``H_j = sum_n 1/((f^n)'(v_j)(f^n v_j - x))`` cut after ``budget`` terms."""
    prof = f.profile
    v = prof.value(j)
    pts, der, N = _orbit_arrays(f, v, budget)
    boundary = _boundary(pts, der, 1.0, N, x)
    H_x, mag_x = _phi_partial(pts, der, 1.0, N, x)
    w = preimages(f, x)
    fp = np.array([f.deriv(y) for y in w], dtype=complex)
    H_w, mag_w = _phi_partial(pts, der, 1.0, N, w)
    rhs = 0j
    trunc = boundary
    scale = abs(H_x[0]) + float(mag_x[0]) + float(np.sum(mag_w / np.abs(fp) ** 2))
    for k in _finite_indices(f):
        L = similarity_factor(f, j, k, tol=1e-15, max_terms=5000)
        vk = prof.value(k)
        rhs += L.value / (vk - x)
        Lk = np.array([f.partial(k).over_derivative(p) for p in pts[:N]], dtype=complex)
        partial = (1.0 if k == j else 0.0) + np.sum(Lk / der[:N])
        trunc += (abs(L.value - partial) + L.tail_bound) / abs(vk - x)
        scale += (abs(L.value) + float(np.sum(np.abs(Lk / der[:N])))) / abs(vk - x)
    res = abs(H_x[0] - np.sum(H_w / fp**2) - rhs)
    return IdentityResidual(float(res), float(trunc), float(1e3 * EPS * scale), N)


@dataclass(frozen=True)
class KernelCombination:
    """``x -> sum_i weights[i] / (poles[i] - x)``."""

    weights: tuple[complex, ...]
    poles: tuple[complex, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=complex)
        out = np.zeros_like(x)
        for a, b in zip(self.weights, self.poles):
            out = out + a / (b - x)
        return out if out.ndim else complex(out)

    def merged(self, tol: float = 1e-12) -> "KernelCombination":
        ws: list[complex] = []
        ps: list[complex] = []
        for a, b in zip(self.weights, self.poles):
            for i, p in enumerate(ps):
                if abs(p - b) <= tol * (1 + abs(b)):
                    ws[i] += a
                    break
            else:
                ws.append(complex(a))
                ps.append(complex(b))
        return KernelCombination(tuple(ws), tuple(ps))


def h_combination(f, j: int, budget: int = 200) -> KernelCombination:
    """``H_j`` cut after ``budget`` terms, with coincident poles merged."""
    pts, der, N = _orbit_arrays(f, f.profile.value(j), budget)
    return KernelCombination(tuple(1.0 / der[:N]), tuple(pts[:N])).merged()


@dataclass(frozen=True)
class RegularizedSeries:
    """``H(x) + A/x + B/x^2``, which decays like ``x^-3`` at infinity."""

    base: KernelCombination
    A: complex
    B: complex
    asymptotic_error: float | None = None

    def __call__(self, x):
        return self.base(x) + self.A / x + self.B / x**2


def regularize(H: KernelCombination, f=None, probe: float = 1e3) -> RegularizedSeries:
    """Add ``A/x + B/x^2`` with ``A = sum alpha_i`` and ``B = sum alpha_i b_i``.

    For a rational ``f`` the scaled asymptotic error
    ``|T(1/.)(x) - 1/(sigma x) - b/(sigma x^2)| |x|^3`` at ``|x| = probe``
    is reported as a consistency check of the expansion at infinity.
    """
    H = H.merged()
    A = complex(sum(H.weights))
    B = complex(sum(a * b for a, b in zip(H.weights, H.poles)))
    err = None
    if f is not None and f.is_rational:
        x = probe * complex(math.cos(0.3), math.sin(0.3))
        val = apply_T(f, lambda w: 1.0 / w, x)
        err = float(abs(val - 1 / (f.sigma * x) - f.b / (f.sigma * x**2)) * abs(x) ** 3)
    return RegularizedSeries(H, A, B, err)
