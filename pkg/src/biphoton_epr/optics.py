"""Optical configuration, the double-Gaussian biphoton state and the
lens mappings between transverse momentum and camera position.

Units are fixed per field and echo the lab conventions: wavelengths in nm,
pump waist and position widths in um, crystal length and focal lengths in
mm, transverse momenta in units of hbar/mm (so a momentum value is the
angular wavenumber in rad/mm).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

HBAR = 1.054_571_817e-34  # J s

NM_TO_MM = 1e-6
UM_TO_MM = 1e-3
MM_TO_UM = 1e3


class ConfigError(ValueError):
    """Raised for physically invalid configuration values."""


@dataclass(frozen=True)
class OpticalConfig:
    lambda_pump: float = 405.0            # nm
    lambda_signal: float = 910.0          # nm
    lambda_idler: float = 730.0           # nm
    pump_waist: float = 60.0              # um
    crystal_length: float = 5.0           # mm
    imaging_magnification: float = 3.0    # camera / crystal, imaging configuration
    fourier_focal_effective: float = 20.0 # mm, whole Fourier lens train
    hbar: float = field(default=HBAR, init=False)

    def __post_init__(self):
        for name in ("lambda_pump", "lambda_signal", "lambda_idler", "pump_waist",
                     "crystal_length", "imaging_magnification",
                     "fourier_focal_effective"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"optics.{name} must be a positive finite number, got {value!r}")
        mismatch = self.energy_mismatch
        if mismatch > 1e-3:
            warnings.warn(
                f"1/lambda_pump differs from 1/lambda_signal + 1/lambda_idler by "
                f"{mismatch:.2e} (relative)", stacklevel=3)

    @property
    def energy_mismatch(self) -> float:
        """Relative violation of 1/lp = 1/ls + 1/li."""
        lhs = 1.0 / self.lambda_pump
        rhs = 1.0 / self.lambda_signal + 1.0 / self.lambda_idler
        return abs(lhs - rhs) / lhs

    @property
    def degenerate(self) -> bool:
        return self.lambda_signal == self.lambda_idler

    @property
    def stretch_factor(self) -> float:
        """Idler-axis rescale lambda_s / lambda_i used by the corrected projection."""
        return self.lambda_signal / self.lambda_idler

    def momentum_si(self, p_hbar_per_mm: float) -> float:
        """Convert a momentum in hbar/mm to kg m/s."""
        return p_hbar_per_mm * self.hbar * 1e3


@dataclass(frozen=True)
class GaussianPairState:
    """Widths of the double-Gaussian two-photon state, per transverse axis.

    sigma_minus_pos is the position correlation width (std of r_s - r_i) and
    sigma_plus_mom the momentum correlation width (std of p_s + p_i). The two
    remaining widths only set the marginal beam extent in each basis.
    """

    sigma_minus_pos: float   # um
    sigma_plus_mom: float    # hbar/mm
    sigma_plus_pos: float    # um
    sigma_minus_mom: float   # hbar/mm

    def __post_init__(self):
        for name in ("sigma_minus_pos", "sigma_plus_mom", "sigma_plus_pos", "sigma_minus_mom"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"state.{name} must be positive, got {value!r}")

    @property
    def epr_product(self) -> float:
        """sigma_minus_pos * sigma_plus_mom in units of hbar."""
        return self.sigma_minus_pos * self.sigma_plus_mom * UM_TO_MM

    @property
    def entangled(self) -> bool:
        return self.epr_product < 0.5


@dataclass(frozen=True)
class ModelConstants:
    """Constants of the parameterized width laws used by :func:`derive_state`.

    marginal_scale_pos falls back to marginal_scale when left as None.
    """

    c_p: float = math.sqrt(2.0)
    c_r: float = 0.167
    marginal_scale: float = 10.0
    marginal_scale_pos: float | None = None

    def __post_init__(self):
        for name in ("c_p", "c_r", "marginal_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"model constant {name} must be positive")
        if self.marginal_scale_pos is not None and not self.marginal_scale_pos > 0:
            raise ConfigError("model constant marginal_scale_pos must be positive")


def derive_state(config: OpticalConfig, constants: ModelConstants | None = None) -> GaussianPairState:
    """Build a GaussianPairState from the pump waist and crystal length.

    sigma_plus_mom = c_p / w_p and sigma_minus_pos = c_r * sqrt(L * lambda_p);
    the marginal widths are marginal_scale multiples of the matching
    correlation widths.
    """
    constants = constants or ModelConstants()
    sigma_plus_mom = constants.c_p / (config.pump_waist * UM_TO_MM)
    length_m = config.crystal_length * 1e-3
    lambda_m = config.lambda_pump * 1e-9
    sigma_minus_pos = constants.c_r * math.sqrt(length_m * lambda_m) * 1e6
    scale_pos = constants.marginal_scale_pos or constants.marginal_scale
    return GaussianPairState(
        sigma_minus_pos=sigma_minus_pos,
        sigma_plus_mom=sigma_plus_mom,
        sigma_plus_pos=scale_pos * sigma_minus_pos,
        sigma_minus_mom=constants.marginal_scale * sigma_plus_mom,
    )


def momentum_to_camera(p, wavelength: float, focal: float):
    """Camera-plane position (um) of a photon with transverse momentum p.

    p is in hbar/mm, wavelength in nm and focal in mm; q = f * lambda * p / (2 pi hbar).
    Works elementwise on arrays.
    """
    if wavelength <= 0 or focal <= 0:
        raise ValueError("wavelength and focal length must be positive")
    return p * (focal * wavelength * NM_TO_MM / (2.0 * math.pi)) * MM_TO_UM


def camera_to_momentum(q, wavelength: float, focal: float):
    """Inverse of :func:`momentum_to_camera`."""
    if wavelength <= 0 or focal <= 0:
        raise ValueError("wavelength and focal length must be positive")
    return q * (2.0 * math.pi / (focal * wavelength * NM_TO_MM)) * UM_TO_MM


def tilt_angle(lambda_signal: float, lambda_idler: float) -> float:
    """Orientation arctan(lambda_s / lambda_i) of the momentum correlation line."""
    if lambda_signal <= 0 or lambda_idler <= 0:
        raise ValueError("wavelengths must be positive")
    return math.atan2(lambda_signal, lambda_idler)
