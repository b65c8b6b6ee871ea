"""Detected count rates from intrinsic emission rates, and the inverse.

Two detection setups are covered:

* single: both photons of a pair go to one multi-wire SNSPD apparatus; two
  photons absorbed by the same wire register as one event (blocking).
* dual: a polarizing splitter routes photon a and photon b to separate
  apparatuses, so no blocking occurs.

Every wire of an apparatus is assumed to have the same efficiency. Measured
rates are dark-corrected (R~ = R - D) before inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .coupling import EmissionRates

DEFAULT_WIRES = 4
ACCIDENTAL_KAPPA = 2.0
ETA_C_TOLERANCE = 1e-9


class DataQualityError(ValueError):
    """A dark-corrected rate came out negative."""


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float
    dark_rate: float = 0.0
    wires: int = DEFAULT_WIRES
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError(f"detector efficiency {self.efficiency} outside [0, 1]")
        if self.dark_rate < 0:
            raise ValueError(f"dark rate {self.dark_rate} must be non-negative")
        if self.wires < 1:
            raise ValueError(f"wire count {self.wires} must be >= 1")


@dataclass(frozen=True)
class OpticalPath:
    transmission: float
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.transmission <= 1:
            raise ValueError(f"transmission {self.transmission} outside [0, 1]")


def _arm(path: OpticalPath, det: DetectorSpec) -> float:
    return path.transmission * det.efficiency


@dataclass(frozen=True)
class MeasuredRatesSingle:
    """Raw rates from a single apparatus, counts/s.

    ``D_c=None`` means the dark coincidence rate was not measured and is
    estimated from accidental-coincidence combinatorics.
    """

    R_t: float
    R_c: float
    D: float = 0.0
    D_c: float | None = None
    integration_time: float = 1.0
    window: float = 1e-9
    label: str = ""

    def __post_init__(self):
        vals = [self.R_t, self.R_c, self.D, self.integration_time, self.window]
        if self.D_c is not None:
            vals.append(self.D_c)
        if min(vals) < 0:
            raise ValueError(f"measured rates must be non-negative: {self}")
        if self.R_c > self.R_t:
            raise ValueError(f"coincidence rate {self.R_c} exceeds total rate {self.R_t}")


@dataclass(frozen=True)
class MeasuredRatesDual:
    """Raw rates from two apparatuses, counts/s. ``D_c=None``: see ``MeasuredRatesSingle``."""

    R_a: float
    R_b: float
    R_c: float
    D_a: float = 0.0
    D_b: float = 0.0
    D_c: float | None = None
    integration_time: float = 1.0
    window: float = 1e-9
    label: str = ""

    def __post_init__(self):
        vals = [self.R_a, self.R_b, self.R_c, self.D_a, self.D_b, self.integration_time, self.window]
        if self.D_c is not None:
            vals.append(self.D_c)
        if min(vals) < 0:
            raise ValueError(f"measured rates must be non-negative: {self}")
        if self.R_c > min(self.R_a, self.R_b):
            raise ValueError(f"coincidence rate {self.R_c} exceeds a single-arm rate")


class PairOutcome(NamedTuple):
    p2: float  # P(2|2)
    p1: float  # P(1|2)
    p0: float  # P(0|2)


class SingleOutcome(NamedTuple):
    p1: float  # P(1|1)
    p0: float  # P(0|1)


def _check_eta(eta: float) -> None:
    if not 0 <= eta <= 1:
        raise ValueError(f"efficiency {eta} outside [0, 1]")


def outcome_probs_pair(eta: float, wires: int = DEFAULT_WIRES) -> PairOutcome:
    """Event-count distribution for two photons sent into one apparatus.

    ``eta`` is the per-photon system efficiency (transmission times
    detection). For four wires this is 3 eta^2/4, 2 eta - 7 eta^2/4 and
    (1 - eta)^2.
    """
    _check_eta(eta)
    same = 1.0 / wires
    return PairOutcome(
        p2=eta**2 * (1.0 - same),
        p1=2.0 * eta - eta**2 * (2.0 - same),
        p0=1.0 - 2.0 * eta + eta**2,
    )


def outcome_probs_single(eta: float) -> SingleOutcome:
    _check_eta(eta)
    return SingleOutcome(p1=eta, p0=1.0 - eta)


class SingleDetected(NamedTuple):
    R_t: float
    R_c: float


class DualDetected(NamedTuple):
    R_a: float
    R_b: float
    R_c: float


def forward_single(
    rates: EmissionRates, eta_s: float, eta_d: float, wires: int = DEFAULT_WIRES
) -> SingleDetected:
    """Dark-corrected total and coincidence rates seen by a single apparatus."""
    eta = eta_s * eta_d
    pair = outcome_probs_pair(eta, wires)
    single = outcome_probs_single(eta)
    total = rates.R_c * (pair.p1 + 2.0 * pair.p2) + (rates.R_a + rates.R_b - 2.0 * rates.R_c) * single.p1
    return SingleDetected(R_t=total, R_c=rates.R_c * pair.p2)


def forward_dual(
    rates: EmissionRates,
    path_a: OpticalPath,
    det_a: DetectorSpec,
    path_b: OpticalPath,
    det_b: DetectorSpec,
) -> DualDetected:
    eta_a = _arm(path_a, det_a)
    eta_b = _arm(path_b, det_b)
    return DualDetected(rates.R_a * eta_a, rates.R_b * eta_b, rates.R_c * eta_a * eta_b)


class DarkCorrected(NamedTuple):
    value: float
    negative: bool  # data-quality flag


def dark_correct(raw: float, dark: float) -> DarkCorrected:
    value = raw - dark
    return DarkCorrected(value, value < 0)


class Accidentals(NamedTuple):
    dark_photon: float
    dark_dark: float

    @property
    def total(self) -> float:
        return self.dark_photon + self.dark_dark


def accidental_coincidence_estimate(
    dark: float, photon_rate: float, window: float, kappa: float = ACCIDENTAL_KAPPA
) -> Accidentals:
    """Accidental coincidences involving dark counts, counts/s.

    kappa = 2 because the dark count may fall on either side of the photon
    within the window.
    """
    if min(dark, photon_rate, window) < 0:
        raise ValueError("dark rate, photon rate and window must be non-negative")
    return Accidentals(kappa * dark * photon_rate * window, kappa * dark**2 * window)


def estimate_dark_coincidences_single(m: MeasuredRatesSingle, kappa: float = ACCIDENTAL_KAPPA) -> float:
    photons = max(m.R_t - m.D, 0.0)
    acc = accidental_coincidence_estimate(m.D, photons, m.window, kappa)
    # dark-dark pairs within one merged stream are counted once, not twice
    return acc.dark_photon + acc.dark_dark / 2.0


def estimate_dark_coincidences_dual(m: MeasuredRatesDual, kappa: float = ACCIDENTAL_KAPPA) -> float:
    photons_a = max(m.R_a - m.D_a, 0.0)
    photons_b = max(m.R_b - m.D_b, 0.0)
    return (
        kappa * m.D_a * photons_b * m.window
        + kappa * m.D_b * photons_a * m.window
        + kappa * m.D_a * m.D_b * m.window
    )


@dataclass(frozen=True)
class SingleInversion:
    R_c: float
    R_t: float
    eta_c: float
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class DualInversion:
    R_a: float
    R_b: float
    R_c: float
    eta_c: float
    warnings: list[str] = field(default_factory=list)

    @property
    def R_t(self) -> float:
        return self.R_a + self.R_b


def _corrected(name: str, raw: float, dark: float) -> float:
    value, negative = dark_correct(raw, dark)
    if negative:
        raise DataQualityError(f"dark-corrected {name} is negative ({raw:.6g} - {dark:.6g})")
    return value


def invert_single(
    m: MeasuredRatesSingle, eta_s: float, eta_d: float, wires: int = DEFAULT_WIRES
) -> SingleInversion:
    """Intrinsic pair and total rates from single-apparatus measurements.

    eta_c here is 2 R_c / R_t, i.e. it assumes R_a = R_b because the two
    photons cannot be told apart.
    """
    eta = eta_s * eta_d
    if eta <= 0:
        raise ZeroDivisionError("system efficiency eta_s * eta_d must be positive")
    if wires < 2:
        raise ValueError("a single-wire apparatus never registers coincidences; R_c cannot be recovered")
    d_c = estimate_dark_coincidences_single(m) if m.D_c is None else m.D_c
    tot = _corrected("total rate", m.R_t, m.D)
    coinc = _corrected("coincidence rate", m.R_c, d_c)
    p2_coef = 1.0 - 1.0 / wires

    R_c = coinc / (p2_coef * eta**2)
    R_t = (tot + R_c * eta**2 / wires) / eta
    warn = []
    if tot == 0:
        if coinc > 0:
            raise DataQualityError("coincidences without any dark-corrected singles")
        return SingleInversion(R_c, R_t, 0.0, ["no dark-corrected detections; eta_c set to 0"])
    rho = coinc / tot
    # wires = 4 reproduces 8 rho / (eta (3 + rho))
    eta_c = 2.0 * rho / (p2_coef * eta * (1.0 + rho / (wires * p2_coef)))
    if eta_c > 1 + ETA_C_TOLERANCE:
        warn.append(f"eta_c = {eta_c:.6g} exceeds 1")
    return SingleInversion(R_c, R_t, eta_c, warn)


def invert_dual(
    m: MeasuredRatesDual,
    path_a: OpticalPath,
    det_a: DetectorSpec,
    path_b: OpticalPath,
    det_b: DetectorSpec,
) -> DualInversion:
    """Intrinsic rates from two-apparatus measurements.

    eta_c = sqrt((R~_c / R~_a)(R~_c / R~_b)) / sqrt(eta_a eta_b), with
    eta_i = eta_s,i eta_d,i; for equal arms this is the usual single-efficiency
    expression.
    """
    eta_a = _arm(path_a, det_a)
    eta_b = _arm(path_b, det_b)
    if eta_a <= 0 or eta_b <= 0:
        raise ZeroDivisionError("both arm efficiencies must be positive")
    d_c = estimate_dark_coincidences_dual(m) if m.D_c is None else m.D_c
    ra = _corrected("arm a rate", m.R_a, m.D_a)
    rb = _corrected("arm b rate", m.R_b, m.D_b)
    rc = _corrected("coincidence rate", m.R_c, d_c)

    warn = []
    if ra == 0 or rb == 0:
        if rc > 0:
            raise DataQualityError("coincidences with a zero dark-corrected arm rate")
        eta_c = 0.0
        warn.append("zero dark-corrected arm rate; eta_c set to 0")
    else:
        eta_c = math.sqrt((rc / ra) * (rc / rb)) / math.sqrt(eta_a * eta_b)
    if eta_c > 1 + ETA_C_TOLERANCE:
        warn.append(f"eta_c = {eta_c:.6g} exceeds 1")
    return DualInversion(ra / eta_a, rb / eta_b, rc / (eta_a * eta_b), eta_c, warn)
