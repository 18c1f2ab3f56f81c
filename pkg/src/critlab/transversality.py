"""Similarity-factor matrices, rank verdicts and periodic-orbit extensions.

For a polynomial the matrix has one row per summable critical point and one
column per critical value.  For a rational map in normal form the columns
depend on the case (H: sigma, v_1..v_{p-1}; NN: v_1..v_{p-1}; ND:
v_1..v_{p-2}) and infinite critical values are handled in coordinates
conjugated by a Mobius map.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CaseMismatch, Inconclusive, NonConvergence, SingularSystem
from .numerics import (
    EPS,
    INF,
    ComplexPoly,
    MobiusTransform,
    SingularSpectrum,
    is_infinite,
    newton_solve,
    singular_values,
)
from .orbits import similarity_factor, summable_indices
from .poly_space import coeffs_from_critical_values, critical_values, parse_slot, slot_label
from .rat_space import (
    ONE_TOL,
    RationalMap,
    chart_coordinates,
    choose_probe_mobius,
    map_from_chart,
    mobius_conjugated_space,
)

NORMAL_TOL = 1e-10


@dataclass(frozen=True)
class TransversalityMatrix:
    """Rows are critical points (or periodic orbits), columns coordinates."""

    entries: np.ndarray
    tail_bounds: np.ndarray
    row_labels: tuple[str, ...]
    column_labels: tuple[str, ...]
    spectrum: SingularSpectrum
    case: str
    rows: tuple[int, ...] = ()
    rank_accounting: dict | None = None
    conjugated: "TransversalityMatrix | None" = None
    mobius: MobiusTransform | None = None
    tolerance: float = 1e-12

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class RankVerdict:
    maximal: bool
    margin: float
    tail_total: float
    tolerance: float


def normal_form_case(f: RationalMap, tol: float = NORMAL_TOL) -> str | None:
    """The case whose normal form ``f`` satisfies, or ``None``."""
    prof = f.profile
    fin = [prof.values[i] for i in range(len(prof)) if prof.finite[i]]
    if abs(f.sigma - 1) > ONE_TOL:
        if abs(f.b) <= tol and fin and abs(fin[-1] - 1) <= tol:
            return "H"
        return None
    if abs(f.b - 1) <= tol and fin and abs(fin[-1] - 1) <= tol:
        return "NN"
    if abs(f.b) <= tol and len(fin) >= 2 and abs(fin[-2] - 1) <= tol and abs(fin[-1]) <= tol:
        return "ND"
    return None


def case_columns(f, case: str) -> list[str]:
    if case == "poly":
        return [f"v{k}" for k in range(1, len(f.profile) + 1)]
    p = f.profile.finite_count
    if case == "H":
        return ["sigma"] + [f"v{k}" for k in range(1, p)]
    if case == "NN":
        return [f"v{k}" for k in range(1, p)]
    if case == "ND":
        return [f"v{k}" for k in range(1, p - 1)]
    raise ValueError(f"unknown case {case!r}")


def _resolve_case(f, case: str) -> str:
    if not f.is_rational:
        if case not in ("auto", "poly"):
            raise CaseMismatch(f"polynomial maps have no case {case!r}")
        return "poly"
    found = normal_form_case(f)
    if case == "auto":
        if found is None:
            raise CaseMismatch("map is not in normal form; normalize it with classify() first")
        return found
    if found != case:
        raise CaseMismatch(f"map is in {found or 'no'} normal form, not case {case}")
    return case


def _fill(f, rows: Sequence[int], cols: Sequence[str], tol: float, max_terms: int, workers: int):
    jobs = [(j, c) for j in rows for c in cols]

    def one(job):
        return similarity_factor(f, job[0], job[1], tol, max_terms)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = list(pool.map(one, jobs))
    else:
        vals = [one(j) for j in jobs]
    E = np.array([v.value for v in vals], dtype=complex).reshape(len(rows), len(cols))
    T = np.array([v.tail_bound for v in vals], dtype=float).reshape(len(rows), len(cols))
    return E, T


def assemble_matrix(
    f,
    S: Sequence[int] | None = None,
    case: str = "auto",
    tol: float = 1e-12,
    max_terms: int = 2000,
    budget: int = 200,
    rank_tol: float = 1e-10,
    mobius: MobiusTransform | None = None,
    workers: int = 1,
) -> TransversalityMatrix:
    """Similarity-factor matrix over the summable critical points ``S``.

    Rational maps must already be in normal form.  The returned matrix holds
    the finite-valued rows; ``conjugated`` carries the full matrix in
    Mobius-conjugated coordinates (all rows of ``S``, reciprocal columns for
    infinite critical values) and ``rank_accounting`` the counts
    ``r = |S|``, ``nu`` (finite rows), ``r0 = rank`` and ``r' = r - nu + r0``.
    """
    case = _resolve_case(f, case)
    prof = f.profile
    if S is None:
        S = summable_indices(f, budget)
    S = sorted(int(j) for j in S)
    cols = case_columns(f, case)
    fin_rows = [j for j in S if prof.finite[j - 1]]
    E, T = _fill(f, fin_rows, cols, tol, max_terms, workers)
    spectrum = singular_values(E, rank_tol) if E.size else SingularSpectrum((), 0, rank_tol)
    labels = tuple(f"c{j}" for j in fin_rows)
    if not f.is_rational:
        return TransversalityMatrix(E, T, labels, tuple(cols), spectrum, case, tuple(fin_rows), tolerance=tol)
    nu = len(fin_rows)
    acct = {"r": len(S), "nu": nu, "r0": spectrum.rank, "r_prime": len(S) - nu + spectrum.rank}
    conj = conjugated_matrix(f, S, cols, E, T, fin_rows, rank_tol, mobius, budget)
    return TransversalityMatrix(
        E, T, labels, tuple(cols), spectrum, case, tuple(fin_rows), acct, conj, conj.mobius, tol
    )


def conjugated_matrix(
    f: RationalMap,
    S: Sequence[int],
    cols: Sequence[str],
    E: np.ndarray,
    T: np.ndarray,
    fin_rows: Sequence[int],
    rank_tol: float = 1e-10,
    mobius: MobiusTransform | None = None,
    budget: int = 200,
) -> TransversalityMatrix:
    """Matrix in coordinates conjugated by ``M`` (identity when every
    critical value is finite), with rows for infinite critical values."""
    prof = f.profile
    p = prof.finite_count
    recip = [f"v{k}" for k in range(p + 1, len(prof) + 1)]
    all_cols = list(cols) + recip
    if mobius is None:
        mobius = MobiusTransform.identity() if not recip else choose_probe_mobius(f, budget)
    space = mobius_conjugated_space(f, mobius, budget, indices=S)
    rows_out, tails_out = [], []
    for j in S:
        if prof.finite[j - 1]:
            i = list(fin_rows).index(j)
            extra = [similarity_factor(f, j, c) for c in recip]
            row, tail = [], []
            for c, val, t in zip(cols, E[i], T[i]):
                slot = parse_slot(c)
                fac = space.value_factor(j) if slot[1] is None else space.factor(j, slot[1])
                row.append(fac * val)
                tail.append(abs(fac) * t)
            for s in extra:
                fac = space.reciprocal_factor(j)
                row.append(fac * s.value)
                tail.append(abs(fac) * s.tail_bound)
        else:
            row = [_infinity_entry(f, space, j, c) for c in all_cols]
            tail = [0.0] * len(all_cols)
        rows_out.append(row)
        tails_out.append(tail)
    M = np.array(rows_out, dtype=complex).reshape(len(S), len(all_cols))
    Tm = np.array(tails_out, dtype=float).reshape(len(S), len(all_cols))
    spectrum = singular_values(M, rank_tol) if M.size else SingularSpectrum((), 0, rank_tol)
    return TransversalityMatrix(
        M, Tm, tuple(f"c{j}" for j in S), tuple(all_cols), spectrum, "conjugated", tuple(S), mobius=mobius
    )


def _infinity_entry(f: RationalMap, space, j: int, col: str) -> complex:
    """Row entry for a critical point with infinite value: ``N'(0)`` times
    the derivative of ``1/f`` at ``c_j`` along the slot, times the slot's
    coordinate change; ``N = M^{-1} o (1/z)``."""
    m = space.mobius
    inv = m.inverse()
    # N(w) = M^{-1}(1/w) = (a' + b' w)/(c' + d' w), so N'(0) = -det/c'^2
    Nprime0 = -inv.det / inv.c**2
    c = f.profile.point(j)
    slot = parse_slot(col)
    Phat = f.numerator(c)
    if slot[0] in ("sigma", "b"):
        # d(1/f)/dx = -(df/dx)/f^2 and df/dx is a multiple of f'; 1/f has a
        # zero of order m_j + 1 >= 2 at c_j, so the entry is exactly zero
        return 0j
    k = slot[1]
    N = f.partial(slot).numerator
    val = Nprime0 * (-N(c) / Phat**2)
    vk = f.profile.value(k)
    if is_infinite(vk):
        beta = inv(INF)
        dx = -m.det / (m.a * beta + m.b) ** 2
    else:
        dx = 1.0 / inv.derivative(vk)
    return complex(val * dx)


def rank_verdict(M: TransversalityMatrix, tol: float = 1e-10) -> RankVerdict:
    """Decide whether the matrix has full row rank.

    With ``s`` the smallest singular value and ``t`` the summed entry tail
    bounds (a bound on the spectral-norm perturbation), the verdict is
    maximal when ``s > tol + t``, not maximal when ``s + t <= tol``, and
    ``Inconclusive`` otherwise.
    """
    rows, cols = M.entries.shape if M.entries.ndim == 2 else (0, 0)
    t = float(np.sum(M.tail_bounds)) if M.tail_bounds.size else 0.0
    if rows == 0:
        return RankVerdict(True, math.inf, t, tol)
    if rows > cols:
        return RankVerdict(False, 0.0, t, tol)
    s = M.spectrum.values[rows - 1] if len(M.spectrum.values) >= rows else 0.0
    if s > tol + t:
        return RankVerdict(True, s, t, tol)
    if s + t <= tol:
        return RankVerdict(False, s, t, tol)
    raise Inconclusive(f"smallest singular value {s:.3g} is within the tail bound {t:.3g}")


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass(frozen=True)
class PeriodicOrbitRecord:
    points: tuple[complex, ...]
    period: int
    multiplier: complex

    @property
    def start(self) -> complex:
        return self.points[0]


def _iterate_fraction(num: ComplexPoly, den: ComplexPoly, T: int) -> tuple[ComplexPoly, ComplexPoly]:
    """Numerator and denominator of the ``T``-th iterate of ``num/den``."""
    d = max(num.degree, den.degree)
    pad = lambda p: (0j,) * (d - p.degree) + p.coeffs
    nc, dc = pad(num), pad(den)
    N, D = num, den
    for _ in range(T - 1):
        Npow = [ComplexPoly((1.0,))]
        Dpow = [ComplexPoly((1.0,))]
        for _ in range(d):
            Npow.append(Npow[-1] * N)
            Dpow.append(Dpow[-1] * D)
        newN = ComplexPoly((0j,))
        newD = ComplexPoly((0j,))
        for i in range(d + 1):
            e = d - i
            term = Npow[e] * Dpow[d - e]
            if nc[i] != 0:
                newN = newN + term * nc[i]
            if dc[i] != 0:
                newD = newD + term * dc[i]
        N, D = newN, newD
    return N, D


def _iterate_with_derivative(f, z: complex, T: int) -> tuple[complex, complex]:
    w, D = z, 1.0 + 0j
    for _ in range(T):
        D *= f.deriv(w)
        w = f(w)
    return w, D


def _polish_periodic(f, z: complex, T: int) -> complex:
    for _ in range(8):
        w, D = _iterate_with_derivative(f, z, T)
        if is_infinite(w) or D == 1:
            break
        step = (w - z) / (D - 1)
        if not np.isfinite(step):
            break
        z_new = z - step
        if abs(step) <= 1e-15 * (1 + abs(z)):
            return z_new
        z = z_new
    return z


def _same(a: complex, b: complex, tol: float = 1e-7) -> bool:
    return abs(a - b) <= tol * (1 + abs(a))


def _homogeneous(f) -> tuple[np.ndarray, np.ndarray]:
    num, den = f.numerator, f.denominator
    d = max(num.degree, den.degree)
    pad = lambda p: np.array((0j,) * (d - p.degree) + p.coeffs, dtype=complex)
    return pad(num), pad(den)


def _fixed_point_equation(f, T: int):
    """Pointwise ``p = N_T - z D_T`` and ``p'`` for ``f^T = N_T/D_T``.

    The pair ``(N, D)`` is pushed through the homogeneous form of ``f`` and
    rescaled each step, so nothing overflows; only ``p/p'`` is meaningful.
    """
    nc, dc = _homogeneous(f)
    d = nc.size - 1
    ex = np.arange(d, -1, -1)

    def evaluate(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N, D = z.copy(), np.ones_like(z)
        dN, dD = np.ones_like(z), np.zeros_like(z)
        for _ in range(T):
            Xp = N[:, None] ** ex[None, :]
            Yp = D[:, None] ** ex[None, ::-1]
            Xd = np.where(ex > 0, ex * N[:, None] ** np.maximum(ex - 1, 0), 0)
            Yd = np.where(ex[::-1] > 0, ex[::-1] * D[:, None] ** np.maximum(ex[::-1] - 1, 0), 0)
            N, D, dN, dD = (
                (Xp * Yp) @ nc,
                (Xp * Yp) @ dc,
                (Xd * Yp) @ nc * dN + (Xp * Yd) @ nc * dD,
                (Xd * Yp) @ dc * dN + (Xp * Yd) @ dc * dD,
            )
            scale = np.maximum(np.abs(N), np.abs(D))
            scale[scale == 0] = 1.0
            N, D, dN, dD = N / scale, D / scale, dN / scale, dD / scale
        return N - z * D, dN - D - z * dD

    return evaluate


def _fixed_point_count(f, T: int) -> int:
    """Number of finite fixed points of ``f^T`` with multiplicity."""
    n = f.degree**T
    sigma = getattr(f, "sigma", None)
    if sigma is None or abs(sigma**T - 1) > 1e-9:
        return n
    # infinity is a multiple fixed point; read the drop off the expansion
    N, D = _iterate_fraction(f.numerator, f.denominator, T)
    c = (N - D * ComplexPoly((1.0, 0.0))).array
    big = np.abs(c).max()
    k = 0
    while k < c.size - 1 and abs(c[k]) <= 1e-9 * big:
        k += 1
    return c.size - 1 - k


def _aberth_pointwise(evaluate, n: int, radius: float, maxiter: int | None = None) -> np.ndarray:
    maxiter = maxiter or max(500, 3 * n)
    k = np.arange(n)
    z = radius * (1 + 0.05 * np.cos(3 * k)) * np.exp(1j * (2 * np.pi * k / n + 0.4))
    step = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    for _ in range(maxiter):
        act = ~done
        p, dp = evaluate(z[act])
        flat = dp == 0
        dp[flat] = EPS
        ratio = p / dp
        diff = z[act, None] - z[None, :]
        diff[np.arange(act.sum()), np.nonzero(act)[0]] = np.inf
        s = (1.0 / diff).sum(axis=1)
        corr = ratio / (1.0 - ratio * s)
        corr[~np.isfinite(corr)] = 0
        z[act] -= corr
        step[act] = np.abs(corr)
        done |= step <= 1e-14 * (1 + np.abs(z))
        if done.all():
            return z
    # clustered multiple roots converge slowly; accept them once steps stall
    if (step <= 1e-6 * (1 + np.abs(z))).all():
        return z
    raise NonConvergence(f"periodic point search did not converge in {maxiter} steps")


def _start_radius(f) -> float:
    # periodic points crowd the Julia set, whose extent the fixed points
    # indicate; a circle much wider costs Aberth O(n) extra sweeps
    ev = _fixed_point_equation(f, 1)
    n = _fixed_point_count(f, 1)
    if n == 0:
        num = f.numerator
        return 1 + float(np.abs(num.array).sum() / abs(num.lead))
    z = _aberth_pointwise(ev, n, 1 + float(np.abs(f.numerator.array).sum()))
    return 1.2 * max(1.0, float(np.abs(z).max()))


def find_periodic_orbits(f, T_max: int, tol: float = 1e-10, max_degree: int = 1100) -> list[PeriodicOrbitRecord]:
    """All cycles of exact period ``T <= T_max`` in the plane, with multipliers."""
    out: list[PeriodicOrbitRecord] = []
    radius = _start_radius(f)
    for T in range(1, T_max + 1):
        if f.degree**T > max_degree:
            raise ValueError(f"period {T} needs a degree-{f.degree**T} equation; cap is {max_degree}")
        n = _fixed_point_count(f, T)
        if n == 0:
            continue
        roots = _aberth_pointwise(_fixed_point_equation(f, T), n, radius)
        pts = [_polish_periodic(f, complex(r), T) for r in roots]
        used = [False] * len(pts)
        for i, z in enumerate(pts):
            if used[i]:
                continue
            # exact period: skip points of a shorter period dividing T
            cycle = [z]
            w = z
            minimal = True
            for t in range(1, T):
                w = f(w)
                if is_infinite(w):
                    minimal = False
                    break
                if _same(w, z):
                    minimal = False
                    break
                cycle.append(w)
            if not minimal:
                used[i] = True
                continue
            for w in cycle:
                for k, y in enumerate(pts):
                    if not used[k] and _same(w, y):
                        used[k] = True
                        break
            # strongly repelling cycles drift under forward iteration and
            # can be seeded twice; a cycle matching a recorded one is skipped
            if any(o.period == T and all(any(_same(w, y) for y in o.points) for w in cycle) for o in out):
                continue
            rho = complex(np.prod([f.deriv(w) for w in cycle]))
            out.append(PeriodicOrbitRecord(tuple(cycle), T, rho))
    return out


def multiplier_partials(f, orbit: PeriodicOrbitRecord, which) -> complex:
    """Derivative of the cycle multiplier along a coordinate, by implicit
    differentiation of the cycle equations ``b_{i+1} = f(b_i)``."""
    b = list(orbit.points)
    T = len(b)
    fp = np.array([f.deriv(z) for z in b], dtype=complex)
    rho = complex(np.prod(fp))
    if abs(rho - 1) <= 1e-8:
        raise SingularSystem("multiplier 1: the cycle does not move analytically")
    u = f.partial(which)
    rhs = np.array([u.value(z) for z in b], dtype=complex)
    # equation i: db_{i+1} - f'(b_i) db_i = u(b_i)
    Asys = np.zeros((T, T), dtype=complex)
    for i in range(T):
        Asys[i, (i + 1) % T] += 1.0
        Asys[i, i] -= fp[i]
    db = np.linalg.solve(Asys, rhs)
    fpp = np.array([f.deriv(z, 2) for z in b], dtype=complex)
    du = np.array([u.derivative(z) for z in b], dtype=complex)
    total = 0j
    for i in range(T):
        others = np.prod(np.delete(fp, i)) if T > 1 else 1.0
        total += (fpp[i] * db[i] + du[i]) * others
    return complex(total)


def _track_cycle(g, orbit: PeriodicOrbitRecord) -> complex:
    T = orbit.period
    z = orbit.start
    for _ in range(30):
        w, D = _iterate_with_derivative(g, z, T)
        step = (w - z) / (D - 1)
        z = z - step
        if abs(step) <= 1e-15 * (1 + abs(z)):
            break
    _, D = _iterate_with_derivative(g, z, T)
    return D


def multiplier_partials_fd(f, orbit: PeriodicOrbitRecord, which, h: float = 1e-6) -> complex:
    """Central difference of the multiplier through the critical-value chart."""
    slot = parse_slot(which)
    if f.is_rational:
        x = chart_coordinates(f)
        idx = {"sigma": 0, "b": 1}.get(slot[0], 1 + (slot[1] or 0))
        e = np.zeros_like(x)
        e[idx] = h
        gp, gm = map_from_chart(f, x + e), map_from_chart(f, x - e)
    else:
        v = critical_values(f)
        e = np.zeros_like(v)
        e[slot[1] - 1] = h
        gp, gm = coeffs_from_critical_values(f, v + e), coeffs_from_critical_values(f, v - e)
    return complex((_track_cycle(gp, orbit) - _track_cycle(gm, orbit)) / (2 * h))


def extended_matrix(
    f,
    S: Sequence[int] | None,
    orbits: Sequence[PeriodicOrbitRecord],
    case: str = "auto",
    rank_tol: float = 1e-10,
    **kwargs,
) -> TransversalityMatrix:
    """The similarity-factor matrix with one extra row of multiplier
    derivatives per attracting or superattracting cycle."""
    base = assemble_matrix(f, S, case, rank_tol=rank_tol, **kwargs)
    prof = f.profile
    extra, labels = [], []
    for orb in orbits:
        if abs(orb.multiplier - 1) <= 1e-8:
            raise SingularSystem("cycles with multiplier 1 cannot be added")
        if abs(orb.multiplier) <= 1e-12:
            hits = [j for j in range(1, len(prof) + 1) if any(_same(w, prof.point(j), 1e-8) for w in orb.points)]
            if len(hits) != 1 or prof.multiplicity(hits[0]) != 1:
                raise ValueError("a superattracting cycle must contain exactly one simple critical point")
            if hits[0] in base.rows:
                raise ValueError("the critical point of a superattracting cycle cannot be summable")
        extra.append([multiplier_partials(f, orb, c) for c in base.column_labels])
        labels.append(f"cycle{orb.period}@{orb.start.real:.6g}{orb.start.imag:+.6g}j")
    if extra:
        E = np.vstack([base.entries.reshape(-1, len(base.column_labels)), np.array(extra, dtype=complex)])
        Tb = np.vstack([base.tail_bounds.reshape(-1, len(base.column_labels)), np.zeros((len(extra), len(base.column_labels)))])
    else:
        E, Tb = base.entries, base.tail_bounds
    spectrum = singular_values(E, rank_tol) if E.size else SingularSpectrum((), 0, rank_tol)
    return TransversalityMatrix(
        E, Tb, base.row_labels + tuple(labels), base.column_labels, spectrum, base.case, base.rows,
        base.rank_accounting, base.conjugated, base.mobius, base.tolerance,
    )
