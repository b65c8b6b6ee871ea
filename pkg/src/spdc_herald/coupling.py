"""Gaussian-mode emission rates and correlated-mode coupling efficiency.

Pump and collection modes are collinear Gaussians focused at the crystal
center. Focusing strength is expressed through focal parameters
xi = L / (k w^2). All public rates are counts per second per milliwatt of
pump power, computed from SI inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .constants import VACUUM_PERMITTIVITY
from .dispersion import CrystalSpec, WaveTriple, phase_mismatch

GROUP_INDEX_DEGENERACY = 1e-12

# validity thresholds of the approximate rate formulas
MIN_CRYSTAL_LENGTH = 1e-3
MAX_FOCAL_PARAMETER = 10.0
MAX_RELATIVE_MISMATCH = 0.05


class DegenerateGroupIndexError(ValueError):
    """|n_a' - n_b'| too small: the rate prefactor diverges."""


class ZeroEmissionWarning(RuntimeWarning):
    """eta_c requested where nothing is emitted into the collected modes."""


class ProbabilityBoundWarning(RuntimeWarning):
    """Pair probability exceeds a single-arm probability."""


def focal_parameter(length: float, k: float, waist: float) -> float:
    """xi = L / (k w^2)."""
    if length <= 0 or k <= 0 or waist <= 0:
        raise ValueError(f"focal parameter needs positive inputs, got L={length}, k={k}, w={waist}")
    return length / (k * waist**2)


def waist_from_focal_parameter(length: float, k: float, xi: float) -> float:
    if length <= 0 or k <= 0 or xi <= 0:
        raise ValueError(f"waist needs positive inputs, got L={length}, k={k}, xi={xi}")
    return math.sqrt(length / (k * xi))


def derive_xi_b(xi_a: float, k_a: float, k_b: float) -> float:
    """Collection focal parameter of b when a and b share one collection mode waist."""
    return xi_a * k_a / k_b


@dataclass(frozen=True)
class FocusConfig:
    xi_p: float
    xi_a: float
    xi_b: float

    def __post_init__(self):
        for name in ("xi_p", "xi_a", "xi_b"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    @classmethod
    def tied(cls, xi_p: float, xi_a: float, waves: WaveTriple) -> "FocusConfig":
        """xi_b follows xi_a through the shared collection optics."""
        return cls(xi_p, xi_a, derive_xi_b(xi_a, waves.k_a, waves.k_b))

    @classmethod
    def from_waists(
        cls, length: float, waves: WaveTriple, w_p: float, w_a: float, w_b: float | None = None
    ) -> "FocusConfig":
        w_b = w_a if w_b is None else w_b
        return cls(
            focal_parameter(length, waves.k_p, w_p),
            focal_parameter(length, waves.k_a, w_a),
            focal_parameter(length, waves.k_b, w_b),
        )

    def waists(self, length: float, waves: WaveTriple) -> tuple[float, float, float]:
        return (
            waist_from_focal_parameter(length, waves.k_p, self.xi_p),
            waist_from_focal_parameter(length, waves.k_a, self.xi_a),
            waist_from_focal_parameter(length, waves.k_b, self.xi_b),
        )

    def swapped(self) -> "FocusConfig":
        return FocusConfig(self.xi_p, self.xi_b, self.xi_a)


@dataclass(frozen=True)
class ABCoefficients:
    A_a: float
    A_b: float
    A_plus: float
    B_a: float
    B_b: float
    B_plus: float


def _ab(k_p, k_a, k_b, dk, xi_p, xi_a, xi_b):
    # works elementwise on numpy arrays as well as on floats
    ra = k_a / k_p * xi_a / xi_p
    rb = k_b / k_p * xi_b / xi_p
    A_a = 2.0 * np.sqrt((1.0 + ra) * k_b / k_p)
    A_b = 2.0 * np.sqrt((1.0 + rb) * k_a / k_p)
    A_plus = 1.0 + ra + rb

    shrink = 1.0 - dk / k_p
    q = k_p - dk
    qa = (k_a + dk) / q
    qb = (k_b + dk) / q
    B_a = 2.0 * shrink * np.sqrt((1.0 + qa * xi_a / xi_p) * qb)
    B_b = 2.0 * shrink * np.sqrt((1.0 + qb * xi_b / xi_p) * qa)
    # note the reciprocal ratios xi_p / xi_a here, unlike A_plus
    B_plus = shrink * (1.0 + qa * xi_p / xi_a + qb * xi_p / xi_b)
    return A_a, A_b, A_plus, B_a, B_b, B_plus


def _check_mismatch(waves: WaveTriple, delta_k: float) -> None:
    if delta_k >= waves.k_p:
        raise ValueError(f"delta_k = {delta_k:.4g} rad/m must be below k_p = {waves.k_p:.4g} rad/m")


def ab_coefficients(waves: WaveTriple, delta_k: float, focus: FocusConfig) -> ABCoefficients:
    _check_mismatch(waves, delta_k)
    vals = _ab(waves.k_p, waves.k_a, waves.k_b, delta_k, focus.xi_p, focus.xi_a, focus.xi_b)
    return ABCoefficients(*(float(v) for v in vals))


def _overlaps(c: ABCoefficients, focus: FocusConfig):
    # the arctan-over-AB factors of R_a, R_b, R_c
    g_a = math.atan(c.B_a / c.A_a * focus.xi_a) / (c.A_a * c.B_a)
    g_b = math.atan(c.B_b / c.A_b * focus.xi_b) / (c.A_b * c.B_b)
    g_c = math.atan(c.B_plus / c.A_plus * focus.xi_a * focus.xi_b / focus.xi_p) / (
        c.A_plus * c.B_plus
    )
    return g_a, g_b, g_c


@dataclass(frozen=True)
class EmissionRates:
    """Source-intrinsic rates, counts/s per mW of pump."""

    R_a: float
    R_b: float
    R_c: float

    def __post_init__(self):
        if min(self.R_a, self.R_b, self.R_c) < 0:
            raise ValueError(f"emission rates must be non-negative: {self}")

    @property
    def R_t(self) -> float:
        return self.R_a + self.R_b

    @property
    def eta_c(self) -> float:
        return eta_c_from_probabilities(ModeCouplingProbabilities(self.R_c, self.R_a, self.R_b, normalized=False))

    def scaled(self, factor: float) -> "EmissionRates":
        return EmissionRates(self.R_a * factor, self.R_b * factor, self.R_c * factor)


def rate_prefactor(crystal: CrystalSpec, waves: WaveTriple) -> float:
    """128 pi^2 lam_p / (1e3 eps0 n_p^2 |n_a' - n_b'|) * (d_eff / (lam_a lam_b))^2."""
    dng = abs(waves.ng_a - waves.ng_b)
    if dng < GROUP_INDEX_DEGENERACY:
        raise DegenerateGroupIndexError(
            f"|n_a' - n_b'| = {dng:.3g}; the rate formulas need distinct group indices (type-II)"
        )
    return (
        128.0 * math.pi**2 * waves.lam_p
        / (1e3 * VACUUM_PERMITTIVITY * waves.n_p**2 * dng)
        * (crystal.d_eff / (waves.lam_a * waves.lam_b)) ** 2
    )


def emission_rates(
    crystal: CrystalSpec, waves: WaveTriple, focus: FocusConfig, delta_k: float | None = None
) -> EmissionRates:
    """Singles and pair emission rates into the collected modes.

    ``delta_k`` defaults to the bare mismatch k_p - k_a - k_b.
    """
    if delta_k is None:
        delta_k = phase_mismatch(crystal, waves).bare
    pre = rate_prefactor(crystal, waves)
    g_a, g_b, g_c = _overlaps(ab_coefficients(waves, delta_k, focus), focus)
    return EmissionRates(pre * g_a, pre * g_b, pre * g_c)


@dataclass(frozen=True)
class ModeCouplingProbabilities:
    """Collected-mode emission probabilities.

    ``P_a`` and ``P_b`` are totals (pair plus single-arm-only). With
    ``normalized=False`` the values may be any common multiple of the
    probabilities, e.g. emission rates.
    """

    P_p: float
    P_a: float
    P_b: float
    normalized: bool = True

    def __post_init__(self):
        if min(self.P_p, self.P_a, self.P_b) < 0:
            raise ValueError(f"probabilities must be non-negative: {self}")
        if self.normalized and max(self.P_p, self.P_a, self.P_b) > 1:
            raise ValueError(f"probabilities must not exceed 1: {self}")

    @classmethod
    def from_exclusive(cls, P_p: float, P_tilde_a: float, P_tilde_b: float) -> "ModeCouplingProbabilities":
        return cls(P_p, P_tilde_a + P_p, P_tilde_b + P_p)

    @property
    def P_tilde_a(self) -> float:
        return self.P_a - self.P_p

    @property
    def P_tilde_b(self) -> float:
        return self.P_b - self.P_p


def eta_c_from_probabilities(p: ModeCouplingProbabilities) -> float:
    """eta_c = P_p / sqrt(P_a P_b).

    Returns 0 (with a ``ZeroEmissionWarning``) when nothing is emitted, so
    sweeps through xi -> 0 corners never produce NaN.
    """
    denom = p.P_a * p.P_b
    if denom == 0:
        if p.P_p > 0:
            raise ValueError(f"pair probability {p.P_p} > 0 with a zero single-arm probability")
        warnings.warn("no emission into the collected modes; eta_c set to 0", ZeroEmissionWarning, stacklevel=2)
        return 0.0
    if p.P_p > min(p.P_a, p.P_b):
        warnings.warn(
            f"P_p = {p.P_p:.6g} exceeds min(P_a, P_b) = {min(p.P_a, p.P_b):.6g}",
            ProbabilityBoundWarning,
            stacklevel=2,
        )
    return p.P_p / math.sqrt(denom)


def eta_c_closed_form(waves: WaveTriple, delta_k: float, focus: FocusConfig) -> float:
    """eta_c written directly in A/B coefficients; the rate prefactor cancels."""
    c = ab_coefficients(waves, delta_k, focus)
    num = math.sqrt(c.A_a * c.B_a * c.A_b * c.B_b) * math.atan(
        c.B_plus / c.A_plus * focus.xi_a * focus.xi_b / focus.xi_p
    )
    den = (
        c.A_plus
        * c.B_plus
        * math.sqrt(math.atan(c.B_a / c.A_a * focus.xi_a) * math.atan(c.B_b / c.A_b * focus.xi_b))
    )
    return num / den


class HeraldingEfficiencies(NamedTuple):
    herald_a: float
    herald_b: float
    herald_sym: float


def heralding_efficiencies(
    p: ModeCouplingProbabilities, eta_avail_a: float, eta_avail_b: float
) -> HeraldingEfficiencies:
    """Heralding efficiency of a (conditioned on b), of b (conditioned on a), and their geometric mean.

    ``eta_avail_*`` is the probability that the heralded photon, once in its
    collected mode, is made available downstream.
    """
    for v in (eta_avail_a, eta_avail_b):
        if not 0 <= v <= 1:
            raise ValueError(f"availability efficiency {v} outside [0, 1]")
    if p.P_a == 0 or p.P_b == 0:
        raise ZeroDivisionError("heralding efficiency undefined with a zero single-arm probability")
    h_a = p.P_p / p.P_b * eta_avail_a
    h_b = p.P_p / p.P_a * eta_avail_b
    return HeraldingEfficiencies(h_a, h_b, math.sqrt(h_a * h_b))


def validity_check(
    crystal: CrystalSpec, waves: WaveTriple, delta_k: float, focus: FocusConfig
) -> list[str]:
    """Advisory warnings where the approximate rate formulas lose accuracy."""
    out = []
    if crystal.length < MIN_CRYSTAL_LENGTH:
        out.append(f"short crystal: L = {crystal.length * 1e3:.3g} mm < 1 mm")
    k_min = min(waves.k_p, waves.k_a, waves.k_b)
    if abs(delta_k) > MAX_RELATIVE_MISMATCH * k_min:
        out.append(f"large phase mismatch: |delta_k| = {abs(delta_k):.4g} rad/m > 0.05 min(k)")
    for name in ("xi_p", "xi_a", "xi_b"):
        v = getattr(focus, name)
        if v > MAX_FOCAL_PARAMETER:
            out.append(f"tight focus: {name} = {v:.4g} > 10")
    return out
