"""Focal-parameter sweeps, peak search, rate/efficiency trade-off and d_eff fitting.

Searches run over log(xi) inside [0.01, 10], where the rate formulas hold.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .coupling import (
    FocusConfig,
    ZeroEmissionWarning,
    emission_rates,
    eta_c_closed_form,
    validity_check,
)
from .dispersion import CrystalSpec, WaveTriple, phase_mismatch

XI_BOUNDS = (0.01, 10.0)
BASELINE_XI_P = 2.84
PEAK_REL_TOL = 1e-6
RESTART_AGREEMENT = 1e-3
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

CSV_FIELDS = ["xi_p", "xi_a", "xi_b", "R_a", "R_b", "R_c", "R_t", "eta_c", "norm_pair_rate", "warnings"]


class OptimizationError(RuntimeError):
    pass


class MultimodalityWarning(RuntimeWarning):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class SweepContext:
    """Crystal and wavelengths shared by every point of a sweep.

    ``delta_k`` defaults to the bare mismatch. ``xi_b`` pins the b collection
    focal parameter; when None it follows xi_a through the shared optics.
    """

    crystal: CrystalSpec
    waves: WaveTriple
    delta_k: float | None = None
    xi_b: float | None = None

    @property
    def dk(self) -> float:
        if self.delta_k is None:
            return phase_mismatch(self.crystal, self.waves).bare
        return self.delta_k

    def focus(self, xi_p: float, xi_a: float) -> FocusConfig:
        if self.xi_b is None:
            return FocusConfig.tied(xi_p, xi_a, self.waves)
        return FocusConfig(xi_p, xi_a, self.xi_b)

    def pair_rate(self, xi_p: float, xi_a: float) -> float:
        return emission_rates(self.crystal, self.waves, self.focus(xi_p, xi_a), self.dk).R_c

    def eta_c(self, xi_p: float, xi_a: float) -> float:
        return eta_c_closed_form(self.waves, self.dk, self.focus(xi_p, xi_a))


@dataclass
class SweepRecord:
    xi_p: float
    xi_a: float
    xi_b: float
    R_a: float
    R_b: float
    R_c: float
    R_t: float
    eta_c: float
    norm_pair_rate: float
    warnings: list[str] = field(default_factory=list)


def evaluate_point(ctx: SweepContext, xi_p: float, xi_a: float, baseline: float = 1.0) -> SweepRecord:
    """One sweep row; domain errors end up in ``warnings`` with NaN values."""
    nan = float("nan")
    try:
        focus = ctx.focus(xi_p, xi_a)
    except ValueError as exc:
        return SweepRecord(xi_p, xi_a, nan, nan, nan, nan, nan, nan, nan, [f"error: {exc}"])
    dk = ctx.dk
    try:
        r = emission_rates(ctx.crystal, ctx.waves, focus, dk)
        eta = eta_c_closed_form(ctx.waves, dk, focus)
    except (ValueError, ZeroDivisionError) as exc:
        return SweepRecord(xi_p, xi_a, focus.xi_b, nan, nan, nan, nan, nan, nan, [f"error: {exc}"])
    notes = validity_check(ctx.crystal, ctx.waves, dk, focus)
    return SweepRecord(
        xi_p, xi_a, focus.xi_b, r.R_a, r.R_b, r.R_c, r.R_t, eta, r.R_c / baseline, notes
    )


def sweep_xi_a(
    xi_p: float,
    grid: Iterable[float],
    ctx: SweepContext,
    baseline: float | None = None,
    workers: int = 1,
) -> list[SweepRecord]:
    """Evaluate every collection focal parameter in ``grid`` at fixed pump focus.

    Pair rates are normalized to ``baseline`` (computed when not given).
    Output order follows ``grid`` regardless of ``workers``.
    """
    grid = list(grid)
    if not grid:
        return []
    if any(not x > 0 for x in grid):
        raise ValueError("grid values must be positive")
    if baseline is None:
        baseline = normalization_baseline(ctx)
    if workers <= 1:
        return [evaluate_point(ctx, xi_p, x, baseline) for x in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: evaluate_point(ctx, xi_p, x, baseline), grid))


def golden_section_max(
    f: Callable[[float], float], lo: float, hi: float, tol: float = PEAK_REL_TOL, max_iter: int = 500
) -> tuple[float, float]:
    """Maximize a unimodal ``f`` on [lo, hi]; stops once the bracket is narrower than ``tol``."""
    if hi < lo:
        lo, hi = hi, lo
    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = f(x1)
    else:
        raise OptimizationError(f"golden section did not converge; bracket [{lo:.6g}, {hi:.6g}]")
    # the bracket ends are candidates too when the maximum sits on the boundary
    x, fx = (x1, f1) if f1 >= f2 else (x2, f2)
    return x, fx


@dataclass
class Peak:
    xi_a: float
    value: float
    candidates: list[tuple[float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def on_boundary(self) -> bool:
        return any(w.startswith("maximum on search boundary") for w in self.warnings)


def _objective(ctx: SweepContext, xi_p: float, objective: str) -> Callable[[float], float]:
    if objective == "pair-rate":
        return lambda u: ctx.pair_rate(xi_p, math.exp(u))
    if objective == "eta-c":
        return lambda u: ctx.eta_c(xi_p, math.exp(u))
    raise ValueError(f"unknown objective {objective!r}; use 'pair-rate' or 'eta-c'")


def find_peak(
    xi_p: float,
    objective: str,
    ctx: SweepContext,
    bounds: tuple[float, float] = XI_BOUNDS,
    tol: float = PEAK_REL_TOL,
) -> Peak:
    """Maximize pair rate or eta_c over xi_a at fixed xi_p.

    Golden section runs on log(xi_a) over the full interval and over its lower
    and upper two-thirds. A restart that stops on its own inner cut edge is a
    truncation artifact and is discarded; surviving restarts that disagree by
    more than 1e-3 relative raise a ``MultimodalityWarning``.
    """
    lo, hi = (math.log(b) for b in bounds)
    f = _objective(ctx, xi_p, objective)
    if hi - lo <= tol:
        x = math.exp(0.5 * (lo + hi))
        return Peak(x, f(math.log(x)), [(x, f(math.log(x)))])

    third = (hi - lo) / 3.0
    brackets = [(lo, hi), (lo, hi - third), (lo + third, hi)]
    cands = []
    for blo, bhi in brackets:
        u, val = golden_section_max(f, blo, bhi, tol)
        cut_edges = [e for e in (blo, bhi) if e not in (lo, hi)]
        if any(abs(u - e) <= 2 * tol for e in cut_edges):
            continue
        cands.append((math.exp(u), val))

    notes = []
    # endpoints of the domain are candidates for monotone objectives
    for end in (lo, hi):
        cands.append((math.exp(end), f(end)))
    best = max(cands, key=lambda c: c[1])
    interior = [c for c in cands[:-2]]
    spread = [c for c in interior if abs(c[0] - best[0]) > RESTART_AGREEMENT * best[0]]
    if spread and any(abs(c[1] - best[1]) > RESTART_AGREEMENT * abs(best[1]) for c in spread):
        msg = f"restarts disagree: {interior}"
        warnings.warn(msg, MultimodalityWarning, stacklevel=2)
        notes.append(msg)
    if best[0] in (math.exp(lo), math.exp(hi)) or any(
        abs(math.log(best[0]) - e) <= 2 * tol for e in (lo, hi)
    ):
        notes.append(f"maximum on search boundary xi_a = {best[0]:.6g}")
    return Peak(best[0], best[1], cands, notes)


def normalization_baseline(ctx: SweepContext) -> float:
    """Peak pair rate over xi_a at xi_p = 2.84, counts/s/mW."""
    peak = find_peak(BASELINE_XI_P, "pair-rate", ctx)
    if peak.on_boundary or not peak.value > 0:
        raise OptimizationError(
            f"pair-rate peak at xi_p = {BASELINE_XI_P} not bracketed inside {XI_BOUNDS}: {peak.candidates}"
        )
    return peak.value


@dataclass
class TradeoffPoint:
    target: float
    reachable: bool
    xi_p: float = float("nan")
    xi_a: float = float("nan")
    eta_c: float = float("nan")
    pair_rate: float = float("nan")
    norm_pair_rate: float = float("nan")


def peak_eta_config(ctx: SweepContext, xi_p: float, bounds=XI_BOUNDS):
    """(xi_a, pair rate, eta_c) at the eta_c-optimal collection focus for this xi_p."""
    peak = find_peak(xi_p, "eta-c", ctx, bounds)
    return peak.xi_a, ctx.pair_rate(xi_p, peak.xi_a), peak.value


def tradeoff_curve(
    targets: Sequence[float],
    ctx: SweepContext,
    bounds: tuple[float, float] = XI_BOUNDS,
    n_grid: int = 31,
    baseline: float | None = None,
) -> list[TradeoffPoint]:
    """Best normalized pair rate for each eta_c target.

    Each xi_p is represented by its eta_c-optimal collection focus; among the
    xi_p whose peak eta_c meets the target, the one with the highest pair rate
    wins. xi_p is scanned on a log grid, then refined by golden section
    between the neighbours of the best grid point.
    """
    if baseline is None:
        baseline = normalization_baseline(ctx)
    grid = np.linspace(math.log(bounds[0]), math.log(bounds[1]), n_grid)
    cache = {}

    def config(u):
        if u not in cache:
            cache[u] = peak_eta_config(ctx, math.exp(u), bounds)
        return cache[u]

    out = []
    for target in targets:
        if not 0 < target < 1:
            raise ValueError(f"target {target} outside (0, 1)")

        def value(u):
            _, rate, eta = config(u)
            return rate if eta >= target else -math.inf

        vals = [value(u) for u in grid]
        k = int(np.argmax(vals))
        if vals[k] == -math.inf:
            out.append(TradeoffPoint(target, False))
            continue
        u_lo, u_hi = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
        u, best = golden_section_max(value, u_lo, u_hi, tol=1e-4)
        if best < vals[k]:
            u = grid[k]
        xi_p = math.exp(u)
        xi_a, rate, eta = config(u)
        out.append(TradeoffPoint(target, True, xi_p, xi_a, eta, rate, rate / baseline))
    return out


@dataclass(frozen=True)
class RateObservation:
    """A measured intrinsic rate (counts/s/mW) at a focus configuration.

    ``kind`` names the rate: R_a, R_b, R_c or R_t.
    """

    focus: FocusConfig
    rate: float
    kind: str = "R_c"


def fit_deff(observations: Sequence[RateObservation], ctx: SweepContext) -> float:
    """Least-squares d_eff (m/V) from measured rates.

    Every rate scales as d_eff^2, so with model rates p_i at a reference
    d_ref the fit is d_ref * sqrt(sum m_i p_i / sum p_i^2).
    """
    if not observations:
        raise DegenerateFitError("no observations")
    d_ref = ctx.crystal.d_eff if ctx.crystal.d_eff > 0 else 1e-12
    crystal = ctx.crystal.with_deff(d_ref)
    dk = ctx.dk
    m = np.array([o.rate for o in observations], dtype=float)
    p = np.array(
        [getattr(emission_rates(crystal, ctx.waves, o.focus, dk), o.kind) for o in observations]
    )
    if not np.any(m > 0):
        raise DegenerateFitError("no observation with a positive measured rate")
    ss = float(p @ p)
    cross = float(m @ p)
    if ss == 0 or cross <= 0:
        raise DegenerateFitError("model rates vanish or are uncorrelated with the data")
    return d_ref * math.sqrt(cross / ss)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, list):
        return "; ".join(v)
    return str(v)


def records_to_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        d = asdict(r)
        w.writerow([_fmt(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def records_to_json(records: Sequence[SweepRecord]) -> str:
    return json.dumps([asdict(r) for r in records], indent=2)
