import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biphoton_epr.optics import GaussianPairState, OpticalConfig
from biphoton_epr.synth import FrameStack, Roi, SensorModel, synthesize_stack

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_sensor(n=16, gap=4, **kw):
    return SensorModel.side_by_side(n, pixel_pitch=8.0, gap=gap, **kw)


def random_stack(rng, n_frames=12, n=8, basis="momentum", density=0.08, rect=None):
    """Stack of independent random binary frames (no pair structure)."""
    if rect is None:
        sensor = small_sensor(n, gap=2)
    else:
        h, w = rect
        sensor = SensorModel(pixel_pitch=8.0, width_px=2 * w + 2, height_px=h,
                             roi_signal=Roi(0, 0, w, h), roi_idler=Roi(w + 2, 0, w, h))
    frames = rng.random((n_frames,) + sensor.shape) < density
    return FrameStack.from_dense(frames, sensor, basis)


@pytest.fixture
def optics():
    return OpticalConfig()


@pytest.fixture
def row_state():
    return GaussianPairState(sigma_minus_pos=7.5, sigma_plus_mom=24.6,
                             sigma_plus_pos=75.0, sigma_minus_mom=286.68)


@pytest.fixture
def pair_stack(optics):
    """Small correlated momentum stack with a narrow marginal that fits a 32 px ROI."""
    state = GaussianPairState(7.5, 24.6, 40.0, 90.0)
    sensor = small_sensor(32, mean_pairs_per_frame=3.0)
    return synthesize_stack(optics, state, sensor, 400, master_seed=5, basis="momentum")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
