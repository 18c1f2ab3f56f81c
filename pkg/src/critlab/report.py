"""Analysis pipelines behind the command-line interface.

Every function here returns plain JSON-ready data: complex numbers become
``[re, im]`` pairs and infinities become ``None``.  Nothing depends on wall
time or thread scheduling, so equal inputs give byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DivergenceDetected, Inconclusive
from .fixtures import all_fixtures
from .numerics import MobiusTransform, is_infinite
from .orbits import iterate_orbit, ratio_sequence, similarity_factor, summability_diagnostic
from .poly_space import parse_slot, slot_label
from .rat_space import classify
from .ruelle import fixed_point_residual, kernel_identity_residual, resolvent_identity_residual
from .transversality import assemble_matrix, rank_verdict

SCHEMA_VERSION = "1.0"
PROBE_ANNULUS = (0.5, 3.0)
PROBE_CLEARANCE = 1e-3


@dataclass(frozen=True)
class AnalysisConfig:
    tolerance: float = 1e-10
    max_terms: int = 2000
    escape_radius: float | None = None
    probes: int = 100
    seed: int = 42
    output_format: str = "json"
    case: str = "auto"
    budget: int = 200
    lambdas: tuple[float, ...] = (0.0, 0.25, 0.5)
    assert_non_exceptional: bool = False
    assert_c_compact: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_terms < 1 or self.budget < 1:
            raise ValueError("max_terms and budget must be positive")
        if self.probes < 0:
            raise ValueError("probe count cannot be negative")
        if self.escape_radius is not None and not self.escape_radius > 0:
            raise ValueError("escape radius must be positive")
        if self.output_format not in ("json", "csv"):
            raise ValueError(f"unknown output format {self.output_format!r}")
        if self.case not in ("auto", "H", "NN", "ND"):
            raise ValueError(f"unknown case {self.case!r}")


def encode(obj):
    """Recursively convert to JSON-ready values."""
    if isinstance(obj, (complex, np.complexfloating)):
        z = complex(obj)
        if is_infinite(z):
            return None
        return [encode(z.real), encode(z.imag)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [encode(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(x) for x in obj]
    if isinstance(obj, MobiusTransform):
        return obj.to_pairs()
    return obj


def dumps(report: dict) -> str:
    return json.dumps(encode(report), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# probes


def _forbidden_points(f, budget: int) -> list[complex]:
    pts = []
    for v in f.profile.values:
        trace = iterate_orbit(f, v, budget)
        pts.extend(z for z in trace.points if not is_infinite(z) and abs(z) < 1e6)
    if f.is_rational:
        pts.extend(p.center for p in f.poles)
    return pts


def _sample(rng: np.random.Generator, count: int, clear) -> list[complex]:
    lo, hi = PROBE_ANNULUS
    out: list[complex] = []
    while len(out) < count:
        r = rng.uniform(lo, hi)
        t = rng.uniform(0.0, 2 * math.pi)
        z = complex(r * math.cos(t), r * math.sin(t))
        if clear(z):
            out.append(z)
    return out


def probe_points(f, count: int, seed: int, budget: int = 200) -> tuple[list[complex], list[complex]]:
    """Two independent seeded probe lists ``(xs, zs)`` in the annulus
    ``0.5 <= |x| <= 3``.

    The ``x`` probes keep a clearance of 1e-3 from critical values, poles
    and budgeted critical orbits; the ``z`` probes keep it from critical
    points and poles, and ``f(z)`` keeps it from the matching ``x``.
    """
    bad_x = _forbidden_points(f, budget)
    bad_z = list(f.profile.points) + ([p.center for p in f.poles] if f.is_rational else [])
    rx, rz = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    xs = _sample(rx, count, lambda z: all(abs(z - p) > PROBE_CLEARANCE for p in bad_x))
    zs = []
    for x in xs:
        def ok(z, x=x):
            if any(abs(z - p) <= PROBE_CLEARANCE for p in bad_z):
                return False
            fz = f(z)
            return not is_infinite(fz) and abs(fz - x) > PROBE_CLEARANCE
        zs.extend(_sample(rz, 1, ok))
    return xs, zs


def _stats(residuals, bounds=None) -> dict:
    r = np.asarray(residuals, dtype=float)
    out = {
        "count": int(r.size),
        "max": float(r.max()) if r.size else None,
        "median": float(np.median(r)) if r.size else None,
    }
    if bounds is not None:
        b = np.asarray(bounds, dtype=float)
        out["max_bound"] = float(b.max()) if b.size else None
        out["within_bound"] = bool(np.all(r <= b))
    return out


# ---------------------------------------------------------------------------
# pipelines


def _prepare(f, config: AnalysisConfig) -> tuple[object, dict | None]:
    """The map the analysis runs on (normal form for rational maps)."""
    if not f.is_rational:
        return f, None
    cls = classify(f, case=None if config.case == "auto" else config.case)
    info = {
        "case": cls.case,
        "normalizer": cls.normalizer,
        "normalized_map": cls.normalized.to_json(),
    }
    return cls.normalized, info


def _critical_summaries(g, config: AnalysisConfig) -> list[dict]:
    prof = g.profile
    out = []
    for j in range(1, len(prof) + 1):
        trace = iterate_orbit(g, prof.value(j), config.budget, config.escape_radius)
        diag = summability_diagnostic(trace, config.tolerance)
        out.append(
            {
                "index": j,
                "point": prof.point(j),
                "multiplicity": prof.multiplicity(j),
                "value": prof.value(j),
                "orbit": {
                    "length": len(trace),
                    "termination": trace.termination,
                    "hit_index": trace.hit_index,
                },
                "summability": {
                    "status": diag.status,
                    "sum": diag.value.real,
                    "tail_bound": diag.tail_bound,
                    "terms_used": diag.terms_used,
                },
            }
        )
    return out


def _matrix_block(M) -> dict:
    block = {
        "rows": list(M.row_labels),
        "columns": list(M.column_labels),
        "entries": M.entries,
        "tail_bounds": M.tail_bounds,
        "singular_values": list(M.spectrum.values),
        "rank": M.spectrum.rank,
    }
    try:
        v = rank_verdict(M, M.spectrum.tolerance)
        block["verdict"] = {
            "status": "maximal" if v.maximal else "not_maximal",
            "margin": v.margin,
            "tail_total": v.tail_total,
        }
    except Inconclusive as exc:
        block["verdict"] = {"status": "inconclusive", "reason": str(exc)}
    return block


def _kernel_suite(g, xs, zs) -> dict:
    return _stats([kernel_identity_residual(g, z, x) for z, x in zip(zs, xs)])


def _base_report(command: str, f, config: AnalysisConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "map": f.to_json(),
        "config": asdict(config),
        "assertions": {
            "non_exceptional": config.assert_non_exceptional,
            "c_compact": config.assert_c_compact,
        },
    }


def analyze(f, config: AnalysisConfig = AnalysisConfig()) -> dict:
    """Profile, classification, orbits, similarity factors, matrix and verdict."""
    g, info = _prepare(f, config)
    report = _base_report("analyze", f, config)
    report["classification"] = info
    report["critical_points"] = _critical_summaries(g, config)
    S = [c["index"] for c in report["critical_points"] if c["summability"]["status"] == "converged"]
    report["summable"] = S
    M = assemble_matrix(
        g,
        S,
        case="auto",
        tol=min(config.tolerance, 1e-12),
        max_terms=config.max_terms,
        budget=config.budget,
        rank_tol=config.tolerance,
    )
    report["similarity_factors"] = [
        {"row": r, "column": c, "value": M.entries[i, k], "tail_bound": M.tail_bounds[i, k]}
        for i, r in enumerate(M.row_labels)
        for k, c in enumerate(M.column_labels)
    ]
    report["matrix"] = _matrix_block(M)
    if M.conjugated is not None:
        report["rank_accounting"] = M.rank_accounting
        report["conjugated_matrix"] = _matrix_block(M.conjugated)
        report["conjugated_matrix"]["mobius"] = M.conjugated.mobius
    xs, zs = probe_points(g, config.probes, config.seed, config.budget)
    report["identities"] = {"kernel": _kernel_suite(g, xs, zs)}
    return report


def verify_identities(f, config: AnalysisConfig = AnalysisConfig()) -> dict:
    """Residual statistics of the kernel, resolvent and fixed-point identities."""
    g, info = _prepare(f, config)
    report = _base_report("verify-identities", f, config)
    report["classification"] = info
    xs, zs = probe_points(g, config.probes, config.seed, config.budget)
    report["kernel"] = _kernel_suite(g, xs, zs)
    resolvent = []
    for lam in config.lambdas:
        res, bnd, skipped = [], [], 0
        for z, x in zip(zs, xs):
            try:
                r = resolvent_identity_residual(g, z, lam, x)
            except DivergenceDetected:
                skipped += 1
                continue
            res.append(r.residual)
            bnd.append(r.bound)
        resolvent.append({"lambda": lam, "skipped": skipped, **_stats(res, bnd)})
    report["resolvent"] = resolvent
    fixed = []
    for entry in _critical_summaries(g, config):
        if entry["summability"]["status"] != "converged" or is_infinite(entry["value"]):
            continue
        j = entry["index"]
        rs = [fixed_point_residual(g, j, x, config.budget) for x in xs]
        fixed.append({"index": j, **_stats([r.residual for r in rs], [r.bound for r in rs])})
    report["fixed_point"] = fixed
    return report


def ratio_table(f, j: int, k, m_max: int, config: AnalysisConfig = AnalysisConfig()) -> dict:
    """Ratio sequence ``m = 1..m_max`` for ``L(c_j, x_k)`` with error bounds.

    The bound at ``m`` is the summed magnitude of the remaining terms used
    for the limit plus the limit's own fitted tail.
    """
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    g, info = _prepare(f, config)
    slot = parse_slot(k)
    L = similarity_factor(g, j, slot, min(config.tolerance, 1e-12), config.max_terms)
    n_seq = max(m_max, L.terms_used + 1)
    seq = ratio_sequence(g, j, slot, n_seq)
    mags = np.abs(np.diff(np.asarray(seq, dtype=complex)))
    # remaining[m-1] = sum of |terms| with index >= m among those behind L
    upto = min(L.terms_used, mags.size)
    remaining = np.concatenate([np.cumsum(mags[:upto][::-1])[::-1], np.zeros(max(n_seq - upto, 0))])
    rows = []
    for m in range(1, m_max + 1):
        rows.append(
            {
                "m": m,
                "ratio": seq[m - 1],
                "abs_error": abs(seq[m - 1] - L.value),
                "tail_bound": float(remaining[m - 1]) + L.tail_bound,
            }
        )
    report = _base_report("ratio-table", f, config)
    report["classification"] = info
    report.update({"j": j, "k": slot_label(slot), "limit": L.value, "limit_tail_bound": L.tail_bound, "rows": rows})
    return report


def catalog() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "catalog",
        "fixtures": [
            {"name": fx.name, "map": fx.map_json, "expected": fx.expected, "provenance": fx.provenance}
            for fx in all_fixtures()
        ],
    }


# ---------------------------------------------------------------------------
# CSV


def _pair(z) -> tuple:
    e = encode(z)
    return (None, None) if e is None else tuple(e)


def to_csv(report: dict) -> str:
    """Flat table for the report's main result."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cmd = report["command"]
    if cmd == "analyze":
        w.writerow(["row", "column", "re", "im", "tail_bound"])
        for s in report["similarity_factors"]:
            w.writerow([s["row"], s["column"], *_pair(s["value"]), encode(s["tail_bound"])])
    elif cmd == "verify-identities":
        w.writerow(["identity", "parameter", "count", "max", "median", "max_bound"])
        k = report["kernel"]
        w.writerow(["kernel", "", k["count"], k["max"], k["median"], ""])
        for r in report["resolvent"]:
            w.writerow(["resolvent", r["lambda"], r["count"], r["max"], r["median"], r["max_bound"]])
        for r in report["fixed_point"]:
            w.writerow(["fixed_point", r["index"], r["count"], r["max"], r["median"], r["max_bound"]])
    elif cmd == "ratio-table":
        w.writerow(["m", "ratio_re", "ratio_im", "abs_error", "tail_bound"])
        for r in report["rows"]:
            w.writerow([r["m"], *_pair(r["ratio"]), encode(r["abs_error"]), encode(r["tail_bound"])])
    elif cmd == "catalog":
        w.writerow(["name", "type", "provenance"])
        for fx in report["fixtures"]:
            w.writerow([fx["name"], fx["map"]["type"], fx["provenance"]])
    else:
        raise ValueError(f"no CSV layout for {cmd!r}")
    return buf.getvalue()


def render(report: dict, fmt: str) -> str:
    return dumps(report) if fmt == "json" else to_csv(report)
