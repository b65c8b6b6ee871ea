"""Event-level Monte Carlo for the detection statistics.

Independent of the closed-form tables in ``detection``: photons are drawn
one at a time, assigned to wires, blocked, time-stamped and matched into
coincidences, then counted.

Random numbers come from Philox streams keyed by (seed, mode, block index),
so a trial block or stream segment always sees the same numbers no matter
how many workers run or in which order.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .detection import (
    DetectorSpec,
    MeasuredRatesDual,
    MeasuredRatesSingle,
    OpticalPath,
    invert_dual,
    invert_single,
    outcome_probs_pair,
)

MODES = ("pair-trials", "single-trials", "timestream-single-config", "timestream-dual-config")
MIN_EXPECTED_COINCIDENCES = 100

UNPAIRED = -1
DARK = -2


class StatisticsWarning(UserWarning):
    """Too few expected coincidences for a meaningful estimate."""


class EmptyRecordError(ValueError):
    pass


@dataclass(frozen=True)
class ArmConfig:
    """One detection arm: transmission, detector efficiency, wires, dark counts.

    ``wire_efficiencies`` overrides the equal split; entries are per-wire
    detector efficiencies whose mean plays the role of ``eta_d``.
    """

    eta_s: float = 1.0
    eta_d: float = 1.0
    wires: int = 4
    wire_efficiencies: tuple[float, ...] | None = None
    dark_rate: float = 0.0

    def __post_init__(self):
        if self.wire_efficiencies is not None:
            object.__setattr__(self, "wire_efficiencies", tuple(float(e) for e in self.wire_efficiencies))
            if len(self.wire_efficiencies) != self.wires:
                raise ValueError("need one efficiency per wire")
        for v in (self.eta_s, self.eta_d, *(self.wire_efficiencies or ())):
            if not 0 <= v <= 1:
                raise ValueError(f"efficiency {v} outside [0, 1]")
        if self.wires < 1 or self.dark_rate < 0:
            raise ValueError("wires must be >= 1 and dark rate >= 0")

    def wire_detection(self) -> np.ndarray:
        """Probability that a photon landing on each wire is detected."""
        eff = self.wire_efficiencies or (self.eta_d,) * self.wires
        return self.eta_s * np.asarray(eff, dtype=float)

    @property
    def eta(self) -> float:
        return self.eta_s * self.eta_d

    def path(self) -> OpticalPath:
        return OpticalPath(self.eta_s)

    def detector(self) -> DetectorSpec:
        return DetectorSpec(self.eta_d, self.dark_rate, self.wires)


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings. Intrinsic rates are counts/s per mW of pump."""

    seed: int
    mode: str
    trials: int = 1_000_000
    duration: float = 1.0
    R_a: float = 0.0
    R_b: float = 0.0
    R_c: float = 0.0
    pump_power: float = 1.0
    arm_a: ArmConfig = field(default_factory=ArmConfig)
    arm_b: ArmConfig = field(default_factory=ArmConfig)
    window: float = 1e-9
    dead_time: float = 0.0
    block_trials: int = 1 << 16
    segment: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")
        if min(self.R_a, self.R_b, self.R_c) < 0 or self.R_c > min(self.R_a, self.R_b):
            raise ValueError("need 0 <= R_c <= min(R_a, R_b)")
        if self.trials < 0 or self.duration < 0 or self.window < 0 or self.dead_time < 0:
            raise ValueError("trials, duration, window and dead time must be non-negative")
        if self.block_trials < 1 or self.segment <= 0:
            raise ValueError("block size and segment length must be positive")

    @property
    def dual(self) -> bool:
        return self.mode == "timestream-dual-config"

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for arm in ("arm_a", "arm_b"):
            if arm in d:
                d[arm] = ArmConfig(**d[arm])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for arm in ("arm_a", "arm_b"):
            if d[arm]["wire_efficiencies"] is not None:
                d[arm]["wire_efficiencies"] = list(d[arm]["wire_efficiencies"])
        return d


@dataclass
class SimOutcome:
    mode: str
    trials: int | None
    duration: float | None
    counts: dict[str, int]
    estimates: dict[str, float]
    stderr: dict[str, float]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _blocks(total: int, size: int):
    return [(b, min(size, total - b * size)) for b in range((total + size - 1) // size)]


def _binomial_outcome(cfg: SimConfig, counts: np.ndarray, labels: list[str]) -> SimOutcome:
    n = int(counts.sum())
    est, err = {}, {}
    for lab, k in zip(labels, counts):
        est[lab] = float(k / n) if n else 0.0
        # Laplace-smoothed binomial error: stays positive even at p = 0 or 1
        p = (k + 1) / (n + 2)
        err[lab] = math.sqrt(p * (1 - p) / (n + 3))
    return SimOutcome(
        mode=cfg.mode,
        trials=n,
        duration=None,
        counts={lab: int(k) for lab, k in zip(labels, counts)},
        estimates=est,
        stderr=err,
    )


def simulate_pair_trials(cfg: SimConfig, workers: int = 1) -> SimOutcome:
    """Send photon pairs into one apparatus and tally 0/1/2 detection events.

    Each photon survives transmission and detection independently and lands
    on a uniformly chosen wire; two survivors on the same wire give a single
    event.
    """
    if cfg.mode != "pair-trials":
        raise ValueError(f"mode {cfg.mode!r} is not pair-trials")
    arm = cfg.arm_a
    detect = arm.wire_detection()

    def block(item):
        b, n = item
        rng = _rng(cfg.seed, 0, b)
        u = rng.random((n, 2))
        wire = rng.integers(0, arm.wires, size=(n, 2))
        hit = u < detect[wire]
        events = hit.sum(axis=1) - (hit.all(axis=1) & (wire[:, 0] == wire[:, 1]))
        return np.bincount(events, minlength=3)

    tallies = _map(block, _blocks(cfg.trials, cfg.block_trials), workers)
    counts = np.sum(tallies, axis=0) if tallies else np.zeros(3, dtype=np.int64)
    return _binomial_outcome(cfg, counts[::-1], ["2", "1", "0"])


def simulate_single_trials(cfg: SimConfig, workers: int = 1) -> SimOutcome:
    if cfg.mode != "single-trials":
        raise ValueError(f"mode {cfg.mode!r} is not single-trials")
    arm = cfg.arm_a
    detect = arm.wire_detection()

    def block(item):
        b, n = item
        rng = _rng(cfg.seed, 1, b)
        u = rng.random(n)
        wire = rng.integers(0, arm.wires, size=n)
        return np.bincount((u < detect[wire]).astype(np.int64), minlength=2)

    tallies = _map(block, _blocks(cfg.trials, cfg.block_trials), workers)
    counts = np.sum(tallies, axis=0) if tallies else np.zeros(2, dtype=np.int64)
    return _binomial_outcome(cfg, counts[::-1], ["1", "0"])


def _segment_events(cfg: SimConfig, seg: int):
    """Registered-before-blocking events of one stream segment: (time, channel, origin)."""
    rng = _rng(cfg.seed, MODES.index(cfg.mode), seg)
    t0 = seg * cfg.segment
    span = min(cfg.segment, cfg.duration - t0)
    P = cfg.pump_power
    arm_a = cfg.arm_a
    arm_b = cfg.arm_b if cfg.dual else cfg.arm_a
    b_offset = arm_a.wires if cfg.dual else 0

    def arrivals(rate):
        n = rng.poisson(rate * span)
        return t0 + rng.random(n) * span

    t_pair = arrivals(cfg.R_c * P)
    t_ua = arrivals((cfg.R_a - cfg.R_c) * P)
    t_ub = arrivals((cfg.R_b - cfg.R_c) * P)
    pair_id = (np.int64(seg) << 32) + np.arange(t_pair.size, dtype=np.int64)

    def photons(times, origin, arm, offset):
        u = rng.random(times.size)
        wire = rng.integers(0, arm.wires, size=times.size)
        keep = u < arm.wire_detection()[wire]
        return times[keep], wire[keep] + offset, origin[keep]

    def darks(arm, offset):
        times = arrivals(arm.dark_rate)
        wire = rng.integers(0, arm.wires, size=times.size)
        return times, wire + offset, np.full(times.size, DARK, dtype=np.int64)

    unpaired_a = np.full(t_ua.size, UNPAIRED, dtype=np.int64)
    unpaired_b = np.full(t_ub.size, UNPAIRED, dtype=np.int64)
    parts = [
        photons(np.concatenate([t_pair, t_ua]), np.concatenate([pair_id, unpaired_a]), arm_a, 0),
        photons(np.concatenate([t_pair, t_ub]), np.concatenate([pair_id, unpaired_b]), arm_b, b_offset),
        darks(arm_a, 0),
    ]
    if cfg.dual:
        parts.append(darks(cfg.arm_b, b_offset))
    return tuple(np.concatenate(x) for x in zip(*parts))


def _apply_blocking(t, ch, origin, dead_time: float):
    """Drop events a wire cannot register: simultaneous hits and, optionally, dead time."""
    order = np.lexsort((t, ch))
    t, ch, origin = t[order], ch[order], origin[order]
    if dead_time <= 0:
        dup = np.zeros(t.size, dtype=bool)
        dup[1:] = (ch[1:] == ch[:-1]) & (t[1:] == t[:-1])
        keep = ~dup
    else:
        # non-paralyzable: an event inside the dead time of the last registered one is lost
        keep = np.zeros(t.size, dtype=bool)
        last_ch, last_t = None, -np.inf
        for i in range(t.size):
            if ch[i] != last_ch:
                last_ch, last_t = ch[i], -np.inf
            if t[i] - last_t >= dead_time:
                keep[i] = True
                last_t = t[i]
    t, ch, origin = t[keep], ch[keep], origin[keep]
    order = np.lexsort((ch, t))
    return t[order], ch[order], origin[order]


def match_coincidences(t: np.ndarray, group: np.ndarray, window: float) -> list[tuple[int, int]]:
    """Greedy earliest-first coincidence matching on a time-sorted stream.

    Two events form a coincidence when ``|t_i - t_j| <= window`` and their
    ``group`` labels differ (wire for one apparatus, arm for two). Each event
    is used at most once; an event pairs with the earliest eligible unused
    partner.
    """
    if t.size < 2:
        return []
    links = np.flatnonzero(np.diff(t) <= window)
    if links.size == 0:
        return []
    clusters = np.split(links, np.flatnonzero(np.diff(links) != 1) + 1)
    pairs = []
    for c in clusters:
        lo, hi = int(c[0]), int(c[-1]) + 2
        used = set()
        for i in range(lo, hi):
            if i in used:
                continue
            for j in range(i + 1, hi):
                if t[j] - t[i] > window:
                    break
                if j not in used and group[j] != group[i]:
                    used.update((i, j))
                    pairs.append((i, j))
                    break
    return pairs


def simulate_timestream(cfg: SimConfig, workers: int = 1) -> SimOutcome:
    """Poisson event streams through detectors and a coincidence counter.

    Pair events arrive at R_c P, unpaired photons at (R_a - R_c) P and
    (R_b - R_c) P, and dark counts at each apparatus's dark rate.
    """
    if not cfg.mode.startswith("timestream"):
        raise ValueError(f"mode {cfg.mode!r} is not a timestream mode")
    n_seg = math.ceil(cfg.duration / cfg.segment) if cfg.duration > 0 else 0
    parts = _map(lambda s: _segment_events(cfg, s), range(n_seg), workers)
    if parts:
        t, ch, origin = (np.concatenate(x) for x in zip(*parts))
    else:
        t = np.zeros(0)
        ch = origin = np.zeros(0, dtype=np.int64)
    t, ch, origin = _apply_blocking(t, ch, origin, cfg.dead_time)

    wires_a = cfg.arm_a.wires
    arm_of = (ch >= wires_a).astype(np.int64)
    group = arm_of if cfg.dual else ch
    pairs = match_coincidences(t, group, cfg.window)
    if pairs:
        i, j = np.asarray(pairs).T
        oi, oj = origin[i], origin[j]
        true = (oi == oj) & (oi >= 0)
        dark = (oi == DARK) | (oj == DARK)
        n_true, n_dark = int(true.sum()), int(dark.sum())
        n_photon = len(pairs) - n_true - n_dark
    else:
        n_true = n_dark = n_photon = 0

    counts = {
        "coincidences": len(pairs),
        "true_coincidences": n_true,
        "accidental_dark": n_dark,
        "accidental_photon": n_photon,
    }
    if cfg.dual:
        counts["events_a"] = int((arm_of == 0).sum())
        counts["events_b"] = int((arm_of == 1).sum())
        counts["dark_events_a"] = int(((origin == DARK) & (arm_of == 0)).sum())
        counts["dark_events_b"] = int(((origin == DARK) & (arm_of == 1)).sum())
        expected = cfg.R_c * cfg.pump_power * cfg.arm_a.eta * cfg.arm_b.eta * cfg.duration
    else:
        counts["events"] = int(t.size)
        counts["dark_events"] = int((origin == DARK).sum())
        expected = (
            cfg.R_c * cfg.pump_power * outcome_probs_pair(cfg.arm_a.eta, wires_a).p2 * cfg.duration
        )

    T = cfg.duration
    est = {k: (v / T if T > 0 else 0.0) for k, v in counts.items()}
    err = {k: (math.sqrt(v) / T if T > 0 else 0.0) for k, v in counts.items()}
    est["expected_true_coincidences"] = expected
    notes = []
    if expected < MIN_EXPECTED_COINCIDENCES:
        msg = f"only {expected:.3g} true coincidences expected (< {MIN_EXPECTED_COINCIDENCES})"
        warnings.warn(msg, StatisticsWarning, stacklevel=2)
        notes.append(msg)
    return SimOutcome(cfg.mode, None, T, counts, est, err, notes)


def simulate(cfg: SimConfig, workers: int = 1) -> SimOutcome:
    if cfg.mode == "pair-trials":
        return simulate_pair_trials(cfg, workers)
    if cfg.mode == "single-trials":
        return simulate_single_trials(cfg, workers)
    return simulate_timestream(cfg, workers)


def estimate_rates(
    out: SimOutcome, cfg: SimConfig, dark_coincidences: str = "estimate"
) -> MeasuredRatesSingle | MeasuredRatesDual:
    """Package a simulated stream as a measurement record.

    ``dark_coincidences`` selects what goes in D_c: ``"estimate"`` leaves it
    unset (the inversion estimates it), ``"zero"`` sets 0, ``"simulated"``
    uses the simulated dark-involved accidental rate.
    """
    if out.mode != cfg.mode or not out.mode.startswith("timestream"):
        raise ValueError(f"outcome mode {out.mode!r} does not match a timestream config")
    if not out.duration:
        raise EmptyRecordError("zero-duration stream has no rates")
    T = out.duration
    d_c = {
        "estimate": None,
        "zero": 0.0,
        "simulated": out.counts["accidental_dark"] / T,
    }[dark_coincidences]
    if cfg.dual:
        return MeasuredRatesDual(
            R_a=out.counts["events_a"] / T,
            R_b=out.counts["events_b"] / T,
            R_c=out.counts["coincidences"] / T,
            D_a=cfg.arm_a.dark_rate,
            D_b=cfg.arm_b.dark_rate,
            D_c=d_c,
            integration_time=T,
            window=cfg.window,
        )
    return MeasuredRatesSingle(
        R_t=out.counts["events"] / T,
        R_c=out.counts["coincidences"] / T,
        D=cfg.arm_a.dark_rate,
        D_c=d_c,
        integration_time=T,
        window=cfg.window,
    )


def eta_c_standard_error(out: SimOutcome, cfg: SimConfig) -> float:
    """Poisson standard error of the inverted eta_c (delta method).

    Coincidence counts and the non-coincident remainder of each channel are
    treated as independent Poisson counts; partial derivatives are taken
    numerically through the actual inversion.
    """
    T = out.duration
    if not T:
        raise EmptyRecordError("zero-duration stream has no rates")
    n_c = out.counts["coincidences"]
    if cfg.dual:
        base = np.array([n_c, out.counts["events_a"] - n_c, out.counts["events_b"] - n_c], float)

        def eta(n):
            m = MeasuredRatesDual(
                (n[1] + n[0]) / T, (n[2] + n[0]) / T, n[0] / T,
                cfg.arm_a.dark_rate, cfg.arm_b.dark_rate, None, T, cfg.window,
            )
            return invert_dual(m, cfg.arm_a.path(), cfg.arm_a.detector(), cfg.arm_b.path(), cfg.arm_b.detector()).eta_c
    else:
        base = np.array([n_c, out.counts["events"] - 2 * n_c], float)

        def eta(n):
            m = MeasuredRatesSingle((n[1] + 2 * n[0]) / T, n[0] / T, cfg.arm_a.dark_rate, None, T, cfg.window)
            return invert_single(m, cfg.arm_a.eta_s, cfg.arm_a.eta_d, cfg.arm_a.wires).eta_c

    var = 0.0
    for k, n_k in enumerate(base):
        if n_k <= 0:
            continue
        h = max(min(1.0, n_k / 2), 1e-4 * n_k)
        up, dn = base.copy(), base.copy()
        up[k] += h
        dn[k] -= h
        grad = (eta(up) - eta(dn)) / (2 * h)
        var += n_k * grad**2
    return math.sqrt(var)


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, seed=seed)
