"""Simulate, estimate and certify EPR correlations of photon pairs imaged on a
single-photon-sensitive camera, including non-degenerate (two-colour) pairs."""

__version__ = "0.1.0"

from .optics import GaussianPairState, ModelConstants, OpticalConfig, derive_state  # noqa: E402
from .synth import FrameStack, Roi, SensorModel, synthesize_stack  # noqa: E402
from .jpd import (Projection, corrected_sum_projection, minus_projection,  # noqa: E402
                  project, sum_projection)
from .fit import FitResult, fit_gaussian_peak, to_crystal_plane  # noqa: E402
from .certify import EprReport, epr_certify, fit_scaling_law  # noqa: E402

__all__ = [
    "GaussianPairState", "ModelConstants", "OpticalConfig", "derive_state",
    "FrameStack", "Roi", "SensorModel", "synthesize_stack",
    "Projection", "corrected_sum_projection", "minus_projection", "project", "sum_projection",
    "FitResult", "fit_gaussian_peak", "to_crystal_plane",
    "EprReport", "epr_certify", "fit_scaling_law",
]
