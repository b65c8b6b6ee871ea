"""Refractive indices, group indices, wavenumbers and phase mismatch.

Wavelengths are vacuum wavelengths in meters everywhere in the public API.
Sellmeier coefficients are evaluated with the wavelength in microns, which is
the convention of every published KTP fit.

Built-in KTP models
-------------------
``ktp-y``  König & Wong, APL 84, 1644 (2004)
           n^2 = A + B / (1 - C / l^2) - D l^2
``ktp-z``  Fradkin et al., APL 74, 914 (1999)
           n^2 = A + B / (1 - C / l^2) + D / (1 - E / l^2) - F l^2
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .constants import MICRON

GROUP_INDEX_REL_STEP = 1e-5
ENERGY_REL_TOL = 1e-9


class WavelengthRangeError(ValueError):
    """Wavelength outside (or too close to the edge of) a model's valid range."""


class Axis(str, Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


def _constant(lam_um, c):
    return np.full_like(np.asarray(lam_um, dtype=float), c[0])


def _quadratic(lam_um, c):
    # test form: n = a + b * l^2
    return c[0] + c[1] * lam_um**2


def _one_pole(lam_um, c):
    a, b, cc, d = c
    l2 = lam_um**2
    return np.sqrt(a + b / (1.0 - cc / l2) - d * l2)


def _two_pole(lam_um, c):
    a, b, cc, d, e, f = c
    l2 = lam_um**2
    return np.sqrt(a + b / (1.0 - cc / l2) + d / (1.0 - e / l2) - f * l2)


# form identifier -> (evaluator, number of coefficients)
FORMS = {
    "constant": (_constant, 1),
    "quadratic": (_quadratic, 2),
    "sellmeier-one-pole": (_one_pole, 4),
    "sellmeier-two-pole": (_two_pole, 6),
}


@dataclass(frozen=True)
class SellmeierModel:
    """Dispersion model of one crystal axis.

    ``form`` selects the functional form (see ``FORMS``); ``coefficients`` are
    in the micron convention of that form; ``range_m`` is the validity range
    in meters.
    """

    form: str
    axis: Axis
    coefficients: tuple[float, ...]
    range_m: tuple[float, float]
    name: str = ""

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown dispersion form {self.form!r}; known: {sorted(FORMS)}")
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        lo, hi = (float(v) for v in self.range_m)
        object.__setattr__(self, "range_m", (lo, hi))
        n_coef = FORMS[self.form][1]
        if len(self.coefficients) != n_coef:
            raise ValueError(
                f"form {self.form!r} takes {n_coef} coefficients, got {len(self.coefficients)}"
            )
        if not 0 < lo < hi:
            raise ValueError(f"invalid wavelength range {self.range_m}")

    @classmethod
    def from_dict(cls, d: dict) -> "SellmeierModel":
        return cls(
            form=d["form"],
            axis=d["axis"],
            coefficients=tuple(d["coefficients"]),
            range_m=tuple(d["range_m"]),
            name=d.get("name", ""),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SellmeierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {
            "form": self.form,
            "axis": self.axis.value,
            "coefficients": list(self.coefficients),
            "range_m": list(self.range_m),
        }
        if self.name:
            d["name"] = self.name
        return d

    def _eval(self, lam):
        func = FORMS[self.form][0]
        return func(np.asarray(lam, dtype=float) / MICRON, self.coefficients)


KTP_Y = SellmeierModel(
    form="sellmeier-one-pole",
    axis=Axis.Y,
    coefficients=(2.09930, 0.922683, 0.0467695, 0.0138408),
    range_m=(0.4e-6, 3.5e-6),
    name="ktp-y",
)

KTP_Z = SellmeierModel(
    form="sellmeier-two-pole",
    axis=Axis.Z,
    coefficients=(2.12725, 1.18431, 5.14852e-2, 0.6603, 100.00507, 9.68956e-3),
    range_m=(0.4e-6, 3.5e-6),
    name="ktp-z",
)

BUILTIN_MODELS = {m.name: m for m in (KTP_Y, KTP_Z)}


def get_model(name: str) -> SellmeierModel:
    try:
        return BUILTIN_MODELS[name]
    except KeyError:
        raise KeyError(f"unknown dispersion model {name!r}; built-in: {sorted(BUILTIN_MODELS)}") from None


def refractive_index(model: SellmeierModel, lam: float) -> float:
    """Phase index n(lam) for a vacuum wavelength in meters."""
    lo, hi = model.range_m
    if not lo <= lam <= hi:
        raise WavelengthRangeError(
            f"wavelength {lam:.6g} m outside valid range [{lo:.6g}, {hi:.6g}] m of model "
            f"{model.name or model.form}"
        )
    return float(model._eval(lam))


def group_index(model: SellmeierModel, lam: float, rel_step: float = GROUP_INDEX_REL_STEP) -> float:
    """Group index n' = n - lam dn/dlam (equivalently c dk/domega).

    The derivative is a central finite difference with step ``rel_step * lam``,
    so both ``lam * (1 +- rel_step)`` must lie inside the valid range.
    """
    lo, hi = model.range_m
    h = lam * rel_step
    if not (lo <= lam - h and lam + h <= hi):
        raise WavelengthRangeError(
            f"wavelength {lam:.6g} m too close to the edge of [{lo:.6g}, {hi:.6g}] m "
            f"for a finite-difference step of {h:.3g} m"
        )
    n = float(model._eval(lam))
    dn = (float(model._eval(lam + h)) - float(model._eval(lam - h))) / (2.0 * h)
    return n - lam * dn


def wavenumber(model: SellmeierModel, lam: float) -> float:
    return 2.0 * math.pi * refractive_index(model, lam) / lam


@dataclass(frozen=True)
class CrystalSpec:
    """Periodically poled crystal. SI units throughout (d_eff in m/V)."""

    length: float
    poling_period: float
    d_eff: float
    pump: SellmeierModel
    a: SellmeierModel
    b: SellmeierModel
    note: str = ""

    def __post_init__(self):
        if self.length <= 0 or self.poling_period <= 0:
            raise ValueError("crystal length and poling period must be positive")
        if self.d_eff < 0:
            raise ValueError("d_eff must be non-negative")
        if self.a.axis == self.b.axis:
            raise ValueError(
                f"type-II pair needs orthogonal polarizations; a and b both on axis {self.a.axis.value}"
            )

    @property
    def grating_wavenumber(self) -> float:
        return 2.0 * math.pi / self.poling_period

    def with_deff(self, d_eff: float) -> "CrystalSpec":
        return replace(self, d_eff=d_eff)


def ppktp_type2(
    length: float = 10e-3, poling_period: float = 46.1e-6, d_eff: float = 1.82e-12
) -> CrystalSpec:
    """PPKTP for degenerate 780 -> 1560 + 1560 nm type-II SPDC.

    Pump and photon b are Y-polarized, photon a is Z-polarized.
    """
    return CrystalSpec(
        length=length,
        poling_period=poling_period,
        d_eff=d_eff,
        pump=KTP_Y,
        a=KTP_Z,
        b=KTP_Y,
        note="room temperature; no thermal model",
    )


@dataclass(frozen=True)
class WaveTriple:
    """Pump, a and b wavelengths with the indices seen inside the crystal."""

    lam_p: float
    lam_a: float
    lam_b: float
    n_p: float
    n_a: float
    n_b: float
    ng_a: float
    ng_b: float

    def __post_init__(self):
        mismatch = 1.0 / self.lam_p - 1.0 / self.lam_a - 1.0 / self.lam_b
        if abs(mismatch) * self.lam_p > ENERGY_REL_TOL:
            raise ValueError(
                f"energy not conserved: 1/lam_p - 1/lam_a - 1/lam_b = {mismatch:.3g} 1/m"
            )

    @property
    def k_p(self) -> float:
        return 2.0 * math.pi * self.n_p / self.lam_p

    @property
    def k_a(self) -> float:
        return 2.0 * math.pi * self.n_a / self.lam_a

    @property
    def k_b(self) -> float:
        return 2.0 * math.pi * self.n_b / self.lam_b

    def swapped(self) -> "WaveTriple":
        """Same triple with the a and b labels exchanged."""
        return WaveTriple(
            self.lam_p, self.lam_b, self.lam_a, self.n_p, self.n_b, self.n_a, self.ng_b, self.ng_a
        )


def make_waves(
    crystal: CrystalSpec,
    lam_p: float,
    lam_a: float | None = None,
    lam_b: float | None = None,
) -> WaveTriple:
    """Evaluate all indices for a pump wavelength and one or both pair wavelengths.

    With only ``lam_p`` given the pair is degenerate; with one of ``lam_a`` /
    ``lam_b`` given the other follows from energy conservation.
    """
    if lam_a is None and lam_b is None:
        lam_a = lam_b = 2.0 * lam_p
    elif lam_b is None:
        lam_b = 1.0 / (1.0 / lam_p - 1.0 / lam_a)
    elif lam_a is None:
        lam_a = 1.0 / (1.0 / lam_p - 1.0 / lam_b)
    return WaveTriple(
        lam_p=lam_p,
        lam_a=lam_a,
        lam_b=lam_b,
        n_p=refractive_index(crystal.pump, lam_p),
        n_a=refractive_index(crystal.a, lam_a),
        n_b=refractive_index(crystal.b, lam_b),
        ng_a=group_index(crystal.a, lam_a),
        ng_b=group_index(crystal.b, lam_b),
    )


@dataclass(frozen=True)
class PhaseMismatch:
    bare: float  # k_p - k_a - k_b, rad/m
    residual: float  # bare mismatch left over after the grating, rad/m
    grating: float = field(default=0.0)  # 2 pi / poling period, rad/m

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / self.grating


def phase_mismatch(crystal: CrystalSpec, waves: WaveTriple) -> PhaseMismatch:
    """Bare and grating-compensated wavenumber mismatch.

    A square-wave poling pattern has Fourier components at both +K and -K, so
    the grating cancels whichever sign the bare mismatch has:
    residual = bare - sign(bare) * K.
    """
    bare = waves.k_p - waves.k_a - waves.k_b
    grating = crystal.grating_wavenumber
    residual = bare - math.copysign(grating, bare)
    return PhaseMismatch(bare=bare, residual=residual, grating=grating)


def resolve_model(ref: dict | str) -> SellmeierModel:
    """A built-in model name or an inline model dict."""
    return get_model(ref) if isinstance(ref, str) else SellmeierModel.from_dict(ref)
