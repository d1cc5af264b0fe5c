"""Configuration types for one photon-generation scheme.

All frequencies and rates are angular, in rad/us; times are in us.
Decay rates quoted as linear frequencies (e.g. 21.6 MHz) are converted with
:func:`ioncavity.atom.mhz`.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any

from .atom import Level, Pol, Term, mhz

SCHEMES = ("SD", "DD")
PULSE_SHAPES = ("gaussian", "flat")
WIDTH_CONVENTIONS = ("intensity_sigma", "amplitude_sigma", "intensity_fwhm")
RABI_CONVENTIONS = ("half", "full")
DETUNING_REFERENCES = ("unshifted", "shifted")

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def kappa_from_geometry(length_m: float, finesse: float) -> float:
    """Cavity field half-linewidth (rad/us) from length and finesse."""
    fsr_hz = SPEED_OF_LIGHT / (2.0 * length_m)
    return math.pi * fsr_hz / finesse * 1e-6


def outcoupling_from_mirrors(transmission_ppm: float, finesse: float) -> float:
    """Fraction of cavity loss leaving through the output mirror."""
    total_loss_ppm = 2.0 * math.pi / finesse * 1e6
    return transmission_ppm / total_loss_ppm


@dataclass(frozen=True)
class CavityModeConfig:
    polarizations: tuple[Pol, ...] = (Pol.SIGMA_PLUS, Pol.SIGMA_MINUS)
    fock_cutoff: int = 2
    kappa: float = kappa_from_geometry(5.75e-3, 60_000)
    outcoupling_fraction: float = outcoupling_from_mirrors(100.0, 60_000)
    # offset of the cavity from the bare Raman resonance
    detuning: float = 0.0

    def validate(self, path: str = "cavity") -> None:
        if not self.polarizations:
            raise ConfigError(f"{path}.polarizations", "at least one mode required")
        if len(set(self.polarizations)) != len(self.polarizations):
            raise ConfigError(f"{path}.polarizations", "duplicate mode")
        if Pol.PI in self.polarizations:
            raise ConfigError(f"{path}.polarizations", "pi light does not propagate along the cavity axis")
        if self.fock_cutoff < 1:
            raise ConfigError(f"{path}.fock_cutoff", "must be >= 1")
        if self.kappa <= 0:
            raise ConfigError(f"{path}.kappa", "must be > 0")
        if not 0.0 <= self.outcoupling_fraction <= 1.0:
            raise ConfigError(f"{path}.outcoupling_fraction", "must lie in [0, 1]")


@dataclass(frozen=True)
class DrivePulse:
    peak_rabi: float
    detuning: float
    polarization_amplitudes: dict[Pol, complex]
    shape: str = "gaussian"
    center: float = 1.25
    width: float = 0.45
    width_convention: str = "intensity_sigma"
    # "half": coupling (1/2) Omega amp w (sigma^dag + sigma); "full": Omega amp w (...)
    rabi_convention: str = "half"

    def validate(self, path: str = "drive") -> None:
        if self.shape not in PULSE_SHAPES:
            raise ConfigError(f"{path}.shape", f"must be one of {PULSE_SHAPES}")
        if self.width_convention not in WIDTH_CONVENTIONS:
            raise ConfigError(f"{path}.width_convention", f"must be one of {WIDTH_CONVENTIONS}")
        if self.rabi_convention not in RABI_CONVENTIONS:
            raise ConfigError(f"{path}.rabi_convention", f"must be one of {RABI_CONVENTIONS}")
        if self.width <= 0:
            raise ConfigError(f"{path}.width", "must be > 0")
        if self.peak_rabi < 0:
            raise ConfigError(f"{path}.peak_rabi", "must be >= 0")
        norm = sum(abs(c) ** 2 for c in self.polarization_amplitudes.values())
        if abs(norm - 1.0) > 1e-9:
            raise ConfigError(f"{path}.polarization_amplitudes",
                              f"squared amplitudes must sum to 1 (got {norm:.12g})")

    def amplitude_sigma(self) -> float:
        """Gaussian sigma of the field (Rabi frequency) envelope."""
        if self.width_convention == "amplitude_sigma":
            return self.width
        if self.width_convention == "intensity_sigma":
            return self.width * math.sqrt(2.0)
        # intensity FWHM -> intensity sigma -> amplitude sigma
        return self.width / (2.0 * math.sqrt(2.0 * math.log(2.0))) * math.sqrt(2.0)


@dataclass(frozen=True)
class SystemParams:
    scheme: str
    drive: DrivePulse
    g0: float = mhz(0.8)
    gamma_SP: float = mhz(21.6)
    gamma_DP: float = mhz(1.48)
    B: float = 5.0
    cavity: CavityModeConfig = field(default_factory=CavityModeConfig)
    prep_fidelity: float = 1.0
    detuning_reference: str = "unshifted"

    def validate(self, path: str = "params") -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(f"{path}.scheme", f"must be one of {SCHEMES}")
        for name in ("gamma_SP", "gamma_DP"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name}", "must be > 0")
        if self.g0 < 0:
            raise ConfigError(f"{path}.g0", "must be >= 0")
        if self.gamma_SP <= self.gamma_DP:
            raise ConfigError(f"{path}.gamma_SP", "must exceed gamma_DP")
        if self.B < 0:
            raise ConfigError(f"{path}.B", "must be >= 0")
        if not 0.0 <= self.prep_fidelity <= 1.0:
            raise ConfigError(f"{path}.prep_fidelity", "must lie in [0, 1]")
        if self.detuning_reference not in DETUNING_REFERENCES:
            raise ConfigError(f"{path}.detuning_reference", f"must be one of {DETUNING_REFERENCES}")
        self.cavity.validate(f"{path}.cavity")
        self.drive.validate(f"{path}.drive")

    @property
    def drive_lower_term(self) -> Term:
        """Lower term of the laser-driven leg: S for SD (397 nm), D for DD (866 nm)."""
        return Term.S12 if self.scheme == "SD" else Term.D32


@dataclass(frozen=True)
class SchemeConfig:
    params: SystemParams
    initial_state: Level
    target_state: Level
    window: tuple[float, float] = (0.0, 2.5)
    n_points: int = 128
    rtol: float = 1e-8
    atol: float = 1e-10
    max_dim: int = 4096

    def validate(self) -> None:
        self.params.validate("params")
        t0, t1 = self.window
        if not t1 > t0:
            raise ConfigError("window", "end must be after start")
        if self.n_points < 2:
            raise ConfigError("n_points", "must be >= 2")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("rtol", "tolerances must be > 0")
        lower = self.params.drive_lower_term
        if self.initial_state.term is not lower:
            raise ConfigError("initial_state",
                              f"{self.params.scheme} scheme starts in {lower.value}")
        if self.target_state.term is not Term.D32:
            raise ConfigError("target_state", "target must be a D32 sublevel")
        if self.initial_state == self.target_state:
            raise ConfigError("target_state", "must differ from initial_state")

    @property
    def times(self):
        import numpy as np
        return np.linspace(self.window[0], self.window[1], self.n_points)

    def with_updates(self, **changes: Any) -> "SchemeConfig":
        """Copy with dotted-path overrides, e.g. ``{"params.drive.peak_rabi": 10.0}``."""
        return _replace_path(self, changes)

    def to_dict(self) -> dict[str, Any]:
        return _plain(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _replace_path(obj, changes: dict[str, Any]):
    nested: dict[str, dict[str, Any]] = {}
    direct: dict[str, Any] = {}
    for key, val in changes.items():
        head, _, rest = key.partition(".")
        if rest:
            nested.setdefault(head, {})[rest] = val
        else:
            direct[head] = val
    for head, sub in nested.items():
        direct[head] = _replace_path(getattr(obj, head), sub)
    return replace(obj, **direct)


def _plain(x):
    if isinstance(x, Level):
        return x.label
    if is_dataclass(x):
        return {f.name: _plain(getattr(x, f.name)) for f in fields(x)}
    if isinstance(x, dict):
        return {(_key(k)): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, Pol):
        return x.key
    if isinstance(x, Level):
        return x.label
    if isinstance(x, Term):
        return x.value
    if isinstance(x, complex):
        return x.real if x.imag == 0 else [x.real, x.imag]
    return x


def _key(k):
    return k.key if isinstance(k, Pol) else k


# Operating points.  The magnetic field is not published; CALIBRATION
# records the single global choice of field and detuning-sign convention
# applied to both presets.
CALIBRATION = {
    "B_gauss": 4.0,
    "detuning_sign": -1,
    "note": "global calibration: B = 4 G; laser detuning sign inverted relative to "
            "the red (SD) / blue (DD) labels, i.e. SD at +24 MHz, DD at -24 MHz",
}

def _unit(*pairs: tuple[Pol, float]) -> dict[Pol, complex]:
    return {p: complex(a) for p, a in pairs}


def sd_paper(**overrides: Any) -> SchemeConfig:
    """S1/2,m=-1/2 -> D3/2,m=+3/2 Raman scheme driven at 397 nm."""
    s = 1 / math.sqrt(2)
    drive = DrivePulse(
        peak_rabi=mhz(11.0),
        detuning=CALIBRATION["detuning_sign"] * mhz(-24.0),
        polarization_amplitudes=_unit((Pol.SIGMA_MINUS, 0.0), (Pol.PI, s), (Pol.SIGMA_PLUS, s)),
    )
    cfg = SchemeConfig(
        params=SystemParams(scheme="SD", drive=drive, B=CALIBRATION["B_gauss"]),
        initial_state=Level(Term.S12, -0.5),
        target_state=Level(Term.D32, 1.5),
    )
    return cfg.with_updates(**overrides) if overrides else cfg


def dd_paper(**overrides: Any) -> SchemeConfig:
    """D3/2,m=-3/2 -> D3/2,m=+1/2 Raman scheme driven at 866 nm."""
    s = 1 / math.sqrt(2)
    drive = DrivePulse(
        peak_rabi=mhz(5.5),
        detuning=CALIBRATION["detuning_sign"] * mhz(24.0),
        polarization_amplitudes=_unit((Pol.SIGMA_MINUS, s), (Pol.PI, 0.0), (Pol.SIGMA_PLUS, s)),
    )
    cfg = SchemeConfig(
        params=SystemParams(scheme="DD", drive=drive, B=CALIBRATION["B_gauss"]),
        initial_state=Level(Term.D32, -1.5),
        target_state=Level(Term.D32, 0.5),
    )
    return cfg.with_updates(**overrides) if overrides else cfg


PRESETS = {"SD": sd_paper, "DD": dd_paper}
