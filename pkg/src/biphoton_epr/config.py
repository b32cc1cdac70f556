"""Flat dotted-key run configuration.

A config file is TOML restricted to dotted keys, for example::

    optics.lambda_signal_nm = 910
    sensor.roi_signal = [4, 4, 351, 351]   # x0, y0, width, height (px)
    run.seed = 1

Every key is optional and falls back to its default. Unknown keys are
errors. Keys and units:

=====================================  =======================================
optics.lambda_pump_nm                  pump wavelength (nm)
optics.lambda_signal_nm                signal wavelength (nm)
optics.lambda_idler_nm                 idler wavelength (nm)
optics.pump_waist_um                   pump waist at the crystal (um)
optics.crystal_length_mm               crystal length (mm)
optics.imaging_magnification           camera/crystal magnification, imaging setup
optics.fourier_focal_mm                effective focal length of the Fourier setup (mm)
state.c_p                              sigma_plus_mom = c_p / pump waist
state.c_r                              sigma_minus_pos = c_r sqrt(L lambda_pump)
state.marginal_scale                   marginal / correlation width ratio (momentum)
state.marginal_scale_pos               same for position (defaults to marginal_scale)
state.sigma_minus_pos_um               explicit position correlation width (um)
state.sigma_plus_mom_hbar_per_mm       explicit momentum correlation width (hbar/mm)
state.sigma_plus_pos_um                explicit position marginal width (um)
state.sigma_minus_mom_hbar_per_mm      explicit momentum marginal width (hbar/mm)
sensor.pixel_pitch_um                  pixel pitch (um)
sensor.width_px, sensor.height_px      sensor size (px)
sensor.roi_signal, sensor.roi_idler    [x0, y0, width, height] (px)
sensor.quantum_efficiency              detection probability per photon
sensor.dark_count_prob                 false event probability per pixel per frame
sensor.mean_pairs_per_frame            Poisson mean of pairs per frame
run.n_frames                           frames per simulated stack
run.seed                               master seed
run.basis                              position | momentum (for simulate)
run.chunk_frames                       frames per estimator task
run.blocks                             frame blocks kept for bootstrap
run.bootstrap                          bootstrap resamples per fit
run.significance_sigma                 threshold for the EPR verdict
run.method                             auto | fft | sparse
run.accidentals                        consecutive | product_of_means
=====================================  =======================================

Explicit state widths override the derived ones individually. The thread
count is not part of the config: it never changes results.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .optics import GaussianPairState, ModelConstants, OpticalConfig, derive_state
from .synth import Roi, SensorModel

DEFAULT_ROI = 351
DEFAULT_GAP = 4


class ConfigKeyError(KeyError):
    def __str__(self):
        return str(self.args[0])


@dataclass(frozen=True)
class RunSettings:
    n_frames: int = 100_000
    seed: int = 1
    basis: str = "momentum"
    chunk_frames: int = 4096
    blocks: int = 20
    bootstrap: int = 20
    significance_sigma: float = 3.0
    method: str = "auto"
    accidentals: str = "consecutive"

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("run.n_frames must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("run.seed must fit in u64")
        if self.basis not in ("position", "momentum"):
            raise ValueError("run.basis must be position or momentum")
        if self.chunk_frames < 1 or self.blocks < 1 or self.bootstrap < 0:
            raise ValueError("run.chunk_frames and run.blocks must be >= 1, run.bootstrap >= 0")


def default_sensor() -> SensorModel:
    return SensorModel.side_by_side(DEFAULT_ROI, pixel_pitch=8.0, gap=DEFAULT_GAP)


# (key, section attribute, field name, type)
_OPTICS_KEYS = {
    "optics.lambda_pump_nm": "lambda_pump",
    "optics.lambda_signal_nm": "lambda_signal",
    "optics.lambda_idler_nm": "lambda_idler",
    "optics.pump_waist_um": "pump_waist",
    "optics.crystal_length_mm": "crystal_length",
    "optics.imaging_magnification": "imaging_magnification",
    "optics.fourier_focal_mm": "fourier_focal_effective",
}
_MODEL_KEYS = {
    "state.c_p": "c_p",
    "state.c_r": "c_r",
    "state.marginal_scale": "marginal_scale",
    "state.marginal_scale_pos": "marginal_scale_pos",
}
_STATE_KEYS = {
    "state.sigma_minus_pos_um": "sigma_minus_pos",
    "state.sigma_plus_mom_hbar_per_mm": "sigma_plus_mom",
    "state.sigma_plus_pos_um": "sigma_plus_pos",
    "state.sigma_minus_mom_hbar_per_mm": "sigma_minus_mom",
}
_SENSOR_KEYS = {
    "sensor.pixel_pitch_um": "pixel_pitch",
    "sensor.width_px": "width_px",
    "sensor.height_px": "height_px",
    "sensor.roi_signal": "roi_signal",
    "sensor.roi_idler": "roi_idler",
    "sensor.quantum_efficiency": "quantum_efficiency",
    "sensor.dark_count_prob": "dark_count_prob",
    "sensor.mean_pairs_per_frame": "mean_pairs_per_frame",
}
_RUN_KEYS = {f"run.{f.name}": f.name for f in dataclasses.fields(RunSettings)}
KNOWN_KEYS = {**_OPTICS_KEYS, **_MODEL_KEYS, **_STATE_KEYS, **_SENSOR_KEYS, **_RUN_KEYS}


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else "nan"
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    constants: ModelConstants = field(default_factory=ModelConstants)
    state_overrides: tuple = ()   # sorted (field, value) pairs
    sensor: SensorModel = field(default_factory=default_sensor)
    run: RunSettings = field(default_factory=RunSettings)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_mapping(cls, flat: dict) -> "RunConfig":
        unknown = sorted(set(flat) - set(KNOWN_KEYS))
        if unknown:
            raise ConfigKeyError(f"unknown config key(s): {', '.join(unknown)}")
        sections = {"optics": {}, "model": {}, "state": {}, "sensor": {}, "run": {}}
        for key, value in flat.items():
            if key in _OPTICS_KEYS:
                sections["optics"][_OPTICS_KEYS[key]] = float(value)
            elif key in _MODEL_KEYS:
                sections["model"][_MODEL_KEYS[key]] = float(value)
            elif key in _STATE_KEYS:
                sections["state"][_STATE_KEYS[key]] = float(value)
            elif key in _SENSOR_KEYS:
                sections["sensor"][_SENSOR_KEYS[key]] = value
            else:
                sections["run"][_RUN_KEYS[key]] = value

        sensor_fields = {f.name: getattr(default_sensor(), f.name)
                         for f in dataclasses.fields(SensorModel)}
        for name, value in sections["sensor"].items():
            if name in ("roi_signal", "roi_idler"):
                if not (isinstance(value, list) and len(value) == 4):
                    raise ValueError(f"sensor.{name} must be [x0, y0, width, height]")
                value = Roi(*(int(v) for v in value))
            elif name in ("width_px", "height_px"):
                value = int(value)
            else:
                value = float(value)
            sensor_fields[name] = value
        run_types = {f.name: f.type for f in dataclasses.fields(RunSettings)}
        run_fields = {}
        for name, value in sections["run"].items():
            kind = run_types[name]
            run_fields[name] = {"int": int, "float": float, "str": str}[kind](value)
        return cls(optics=OpticalConfig(**sections["optics"]),
                   constants=ModelConstants(**sections["model"]),
                   state_overrides=tuple(sorted(sections["state"].items())),
                   sensor=SensorModel(**sensor_fields),
                   run=RunSettings(**run_fields))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls.from_mapping(_flatten(tomllib.loads(text)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "rb") as fh:
            return cls.from_mapping(_flatten(tomllib.load(fh)))

    # -- derived -------------------------------------------------------------

    def state(self) -> GaussianPairState:
        derived = derive_state(self.optics, self.constants)
        return dataclasses.replace(derived, **dict(self.state_overrides))

    def with_state(self, state: GaussianPairState) -> "RunConfig":
        return dataclasses.replace(self, state_overrides=tuple(sorted(dataclasses.asdict(state).items())))

    def replace(self, optics=None, run=None, sensor=None, constants=None) -> "RunConfig":
        return dataclasses.replace(
            self, optics=optics or self.optics, run=run or self.run,
            sensor=sensor or self.sensor, constants=constants or self.constants)

    def mapping(self) -> dict:
        out = {}
        for key, name in _OPTICS_KEYS.items():
            out[key] = getattr(self.optics, name)
        for key, name in _MODEL_KEYS.items():
            value = getattr(self.constants, name)
            if value is not None:
                out[key] = value
        overrides = dict(self.state_overrides)
        for key, name in _STATE_KEYS.items():
            if name in overrides:
                out[key] = overrides[name]
        for key, name in _SENSOR_KEYS.items():
            value = getattr(self.sensor, name)
            out[key] = value.as_list() if isinstance(value, Roi) else value
        for key, name in _RUN_KEYS.items():
            out[key] = getattr(self.run, name)
        return out

    def to_text(self) -> str:
        """Canonical text form; identical configs give identical text."""
        return "".join(f"{key} = {_format_value(value)}\n" for key, value in self.mapping().items())

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()
