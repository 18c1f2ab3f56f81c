"""Critical orbits, summability and similarity-factor series.

The similarity factor of a critical point ``c_j`` along a coordinate ``x`` is

    L(c_j, x) = [x == v_j] + sum_{n >= 1} L_x(f^{n-1}(v_j)) / (f^{n-1})'(v_j)

with ``L_x = (df/dx) / f'``.  When the orbit lands on infinity at step ``l``
the sum stops after ``n = l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DivergenceDetected
from .numerics import INF, chordal_distance, is_infinite
from .poly_space import parse_slot

RATIONAL_ESCAPE = 1e8
SERIES_ESCAPE = 1e150
DERIVATIVE_CEILING = 1e250
DERIVATIVE_FLOOR = 1e-250
CRITICAL_HIT = 1e-10
FIT_WINDOW = 10
SLOW_RATE = 0.95
# fitted rates carry rounding error, so an exactly geometric tail can exceed
# env * rho / (1 - rho) by a few ulps of rho; the factor keeps it a bound
TAIL_SAFETY = 2.0


@dataclass(frozen=True)
class OrbitTrace:
    """Orbit ``x_n = f^n(v)`` with cumulative derivatives ``(f^n)'(v)``.

    ``termination`` is one of ``budget_exhausted``, ``hit_infinity``,
    ``hit_critical``, ``escaped``, ``overflow`` or ``underflow`` (the
    derivative left floating-point range); ``hit_index`` is the index of the
    point that triggered it.
    """

    start: complex
    points: tuple[complex, ...]
    derivatives: tuple[complex, ...]
    spherical_terms: tuple[float, ...]
    termination: str
    hit_index: int | None
    escape_radius: float
    infinity_rate: float | None

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SeriesValue:
    value: complex
    tail_bound: float
    terms_used: int
    status: str
    tolerance: float = 0.0


class OrbitWalker:
    """Lazily extended orbit with termination bookkeeping."""

    def __init__(self, f, v: complex, escape_radius: float, critical_points: Sequence[complex] | None = None):
        self.f = f
        self.escape_radius = escape_radius
        self.points: list[complex] = [v]
        self.derivs: list[complex] = [1.0 + 0j]
        self.termination: str | None = None
        self.hit_index: int | None = None
        self.crit = np.array(f.profile.points if critical_points is None else critical_points, dtype=complex)
        if is_infinite(v):
            self.points[0] = INF
            self._stop("hit_infinity", 0)
        elif self._near_critical(v):
            self._stop("hit_critical", 0)

    def _stop(self, kind: str, index: int):
        self.termination = kind
        self.hit_index = index

    def _near_critical(self, z: complex) -> bool:
        if self.crit.size == 0:
            return False
        return bool((np.abs(self.crit - z) <= CRITICAL_HIT * (1 + np.abs(self.crit))).any())

    def critical_at(self, i: int) -> bool:
        """Whether ``points[i]`` is (numerically) a critical point."""
        return self.termination == "hit_critical" and self.hit_index is not None and self.hit_index <= i

    def extend(self, n: int) -> bool:
        """Make ``points[n]`` available; ``False`` once the orbit has stopped."""
        f = self.f
        while len(self.points) <= n:
            if self.termination is not None:
                return False
            x, D = self.points[-1], self.derivs[-1]
            i = len(self.points)
            if f.is_rational and f.is_pole(x):
                self.points.append(INF)
                self.derivs.append(INF)
                self._stop("hit_infinity", i)
                return False
            with np.errstate(all="ignore"):
                xn = f(x)
                Dn = D * f.deriv(x)
            if not is_infinite(xn) and not (math.isfinite(abs(xn)) and math.isfinite(abs(Dn))):
                self._stop("overflow", i - 1)
                return False
            self.points.append(xn)
            self.derivs.append(Dn)
            if is_infinite(xn):
                self.derivs[-1] = INF
                self._stop("hit_infinity", i)
            elif self._near_critical(xn):
                self._stop("hit_critical", i)
            elif abs(xn) > self.escape_radius:
                self._stop("escaped", i)
            elif abs(Dn) > DERIVATIVE_CEILING:
                self._stop("overflow", i)
            elif abs(Dn) < DERIVATIVE_FLOOR:
                self._stop("underflow", i)
        return True


def series_escape(f) -> float:
    """Escape radius for series along orbits: degree-``d`` numerators must
    stay finite at the last point, so ``R^(2d)`` is kept below 1e300."""
    return min(SERIES_ESCAPE, 10.0 ** (150.0 / f.degree))


def _default_escape(f) -> float:
    return RATIONAL_ESCAPE if f.is_rational else f.escape_radius


def _spherical_terms(f, points, derivs) -> list[float]:
    v = points[0]
    if is_infinite(v):
        return [1.0]
    base = 1 + abs(v) ** 2
    out = []
    for n, (x, D) in enumerate(zip(points, derivs)):
        if is_infinite(x):
            y = points[n - 1]
            N, Q, W = f.numerator, f.denominator, f.critical_polynomial
            local = (abs(Q(y)) ** 2 + abs(N(y)) ** 2) / abs(W(y))
            out.append(local / (base * abs(derivs[n - 1])))
        elif not math.isfinite(abs(D)) or D == 0:
            out.append(math.inf if D == 0 else 0.0)
        else:
            out.append((1 + abs(x) ** 2) / (base * abs(D)))
    return out


def iterate_orbit(f, v: complex, budget: int = 200, escape_radius: float | None = None) -> OrbitTrace:
    """Iterate ``f`` from ``v`` for at most ``budget`` steps."""
    R = _default_escape(f) if escape_radius is None else escape_radius
    w = OrbitWalker(f, v, R)
    w.extend(budget)
    term = w.termination or "budget_exhausted"
    hit = w.hit_index if w.termination else None
    rate = abs(f.sigma) if f.is_rational else None
    return OrbitTrace(
        w.points[0],
        tuple(w.points),
        tuple(w.derivs),
        tuple(_spherical_terms(f, w.points, w.derivs)),
        term,
        hit,
        R,
        rate,
    )


def _fit_rate(mags: np.ndarray) -> tuple[float, float]:
    """Geometric rate of a window of magnitudes and the smallest envelope
    ``E rho^(k - i)`` dominating it, evaluated at the last index."""
    nz = mags > 0
    if not nz.any():
        return 0.0, 0.0
    idx = np.arange(mags.size)[nz]
    logs = np.log(mags[nz])
    if idx.size == 1:
        # a lone nonzero term followed by exact zeros: nothing left to sum
        return (1.0, float(mags.max())) if idx[0] == mags.size - 1 else (0.0, 0.0)
    slope = np.polyfit(idx, logs, 1)[0]
    rho = float(math.exp(min(slope, 50.0)))
    env = float(np.max(mags[nz] * rho ** (mags.size - 1 - idx)))
    return rho, env


def tail_estimate(mags: Sequence[float]) -> tuple[float, float]:
    """Fitted rate and tail bound from the last ``FIT_WINDOW`` term magnitudes."""
    window = np.asarray(mags[-FIT_WINDOW:], dtype=float)
    rho, env = _fit_rate(window)
    if rho >= SLOW_RATE:
        return rho, math.inf
    return rho, TAIL_SAFETY * env * rho / (1 - rho)


def sum_series(
    walker: OrbitWalker,
    term: Callable[[int, complex, complex], complex],
    start_index: int,
    offset: complex,
    tol: float,
    max_terms: int,
) -> SeriesValue:
    """Sum ``offset + sum_n term(n, x, D)`` along the walker's orbit.

    ``term(n, x, D)`` receives the orbit point and cumulative derivative with
    index ``n - start_index``.  Stops once the fitted geometric tail is below
    ``tol``; an orbit reaching infinity makes the sum finite.
    """
    total = complex(offset)
    mags: list[float] = []
    used = 0
    for n in range(start_index, start_index + max_terms):
        i = n - start_index
        if not walker.extend(i) or is_infinite(walker.points[i]):
            kind = walker.termination
            if kind == "hit_infinity":
                return SeriesValue(total, 0.0, used, "truncated_at_infinity", tol)
            if kind == "hit_critical":
                raise DivergenceDetected("the orbit lands on a critical point")
            if kind == "underflow":
                raise DivergenceDetected("orbit derivative underflows; the series grows without bound")
            rho, tail = tail_estimate(mags) if len(mags) >= 2 else (math.inf, math.inf)
            if tail <= tol:
                return SeriesValue(total, tail, used, "converged", tol)
            raise DivergenceDetected(f"orbit {kind} before the series converged (rate {rho:.3g})")
        if walker.critical_at(i):
            raise DivergenceDetected("the orbit lands on a critical point")
        t = term(n, walker.points[i], walker.derivs[i])
        if not np.isfinite(t):
            raise DivergenceDetected("non-finite series term")
        total += t
        used += 1
        mags.append(abs(t))
        if len(mags) >= FIT_WINDOW:
            rho, tail = tail_estimate(mags)
            if tail <= tol:
                return SeriesValue(total, tail, used, "converged", tol)
    rho, tail = tail_estimate(mags) if len(mags) >= 2 else (math.inf, math.inf)
    if rho >= 1:
        raise DivergenceDetected(f"series terms do not decay (fitted rate {rho:.3g})")
    return SeriesValue(total, tail, used, "budget_exhausted", tol)


def _critical_value(f, j: int) -> complex:
    prof = f.profile
    if not 1 <= j <= len(prof):
        raise ValueError(f"critical index {j} out of range 1..{len(prof)}")
    v = prof.value(j)
    if is_infinite(v):
        raise ValueError(f"critical value v_{j} is infinite; use the Mobius-conjugated row")
    return v


def similarity_factor(f, j: int, which, tol: float = 1e-12, max_terms: int = 2000) -> SeriesValue:
    """``L(c_j, x)`` for a coordinate ``x`` (``'v3'``, ``3``, ``'sigma'``, ``'b'``)."""
    v = _critical_value(f, j)
    slot = parse_slot(which)
    partial = f.partial(slot)
    delta = 1.0 if slot == ("v", j) else 0.0
    walker = OrbitWalker(f, v, series_escape(f))
    return sum_series(walker, lambda n, x, D: partial.over_derivative(x) / D, 1, delta, tol, max_terms)


def ratio_sequence(f, j: int, which, m_max: int) -> list[complex]:
    """Entries ``m = 1..m_max`` of the ratio sequence converging to ``L(c_j, x)``.

    Entry ``m`` is the partial sum through ``n = m - 1``; after the orbit
    reaches infinity the entries stay constant.
    """
    v = _critical_value(f, j)
    slot = parse_slot(which)
    partial = f.partial(slot)
    walker = OrbitWalker(f, v, series_escape(f))
    acc = 1.0 + 0j if slot == ("v", j) else 0j
    out = [acc]
    for n in range(1, m_max):
        if walker.extend(n - 1) and not is_infinite(walker.points[n - 1]):
            if walker.critical_at(n - 1):
                raise DivergenceDetected("the orbit lands on a critical point")
            t = partial.over_derivative(walker.points[n - 1]) / walker.derivs[n - 1]
            if not np.isfinite(t):
                raise DivergenceDetected("the orbit lands on a critical point")
            acc += t
        elif walker.termination == "hit_critical":
            raise DivergenceDetected("the orbit lands on a critical point")
        elif walker.termination in ("escaped", "overflow", "underflow"):
            raise ValueError(f"orbit {walker.termination} before step {m_max}")
        out.append(acc)
    return out


def direction_limit(f, tangent: dict, j: int, tol: float = 1e-12, max_terms: int = 2000) -> complex:
    """``sum_k a_k L(c_j, x_k)`` for a tangent vector ``{coordinate: a_k}``."""
    total = 0j
    for which, a in tangent.items():
        if a != 0:
            total += a * similarity_factor(f, j, which, tol, max_terms).value
    return total


def omega_estimate(trace: OrbitTrace, burn_in: int, tol: float = 1e-6) -> list[complex]:
    """Distinct points of the orbit tail after ``burn_in``, merged at ``tol``."""
    out: list[complex] = []
    for z in trace.points[burn_in:]:
        if all(chordal_distance(z, w) > tol for w in out):
            out.append(z)
    return out


def summability_diagnostic(trace: OrbitTrace, tol: float = 1e-10, block: int = 50) -> SeriesValue:
    """Sum of the spherical derivative terms ``(1+|x_n|^2)/((1+|v|^2)|(f^n)'(v)|)``."""
    s = np.asarray(trace.spherical_terms, dtype=float)
    kind = trace.termination
    if kind in ("hit_critical", "underflow") or not np.isfinite(s).all():
        return SeriesValue(complex(np.nansum(s[np.isfinite(s)])), math.inf, s.size, "diverged", tol)
    if kind == "hit_infinity":
        rate = trace.infinity_rate
        if rate is None or rate >= 1:
            return SeriesValue(complex(s.sum()), math.inf, s.size, "diverged", tol)
        return SeriesValue(complex(s.sum() + s[-1] * rate / (1 - rate)), 0.0, s.size, "converged", tol)
    # the sum is declared converged as soon as a fitted tail drops below tol;
    # later terms are below rounding level relative to the partial sum
    for n in range(FIT_WINDOW, s.size + 1):
        rho, tail = tail_estimate(list(s[:n]))
        if tail <= tol:
            return SeriesValue(complex(s[:n].sum()), float(tail), n, "converged", tol)
    total = complex(s.sum())
    if kind in ("escaped", "overflow"):
        return SeriesValue(total, math.inf, s.size, "diverged", tol)
    if s.size >= 2 * block:
        nb = s.size // block
        blocks = s[s.size - nb * block:].reshape(nb, block).sum(axis=1)
        if blocks[-1] >= blocks[-2]:
            return SeriesValue(total, math.inf, s.size, "diverged", tol)
        r = blocks[-1] / blocks[-2]
        tail = blocks[-1] * r / (1 - r)
    else:
        rho, tail = tail_estimate(list(s)) if s.size >= 2 else (math.inf, math.inf)
        if rho >= 1:
            return SeriesValue(total, math.inf, s.size, "diverged", tol)
    return SeriesValue(total, float(tail), s.size, "budget_exhausted", tol)


def summable_indices(f, budget: int = 200, tol: float = 1e-10) -> list[int]:
    """1-based indices of critical points whose orbits pass the summability test."""
    out = []
    for j, v in enumerate(f.profile.values, start=1):
        diag = summability_diagnostic(iterate_orbit(f, v, budget), tol)
        if diag.status == "converged":
            out.append(j)
    return out
