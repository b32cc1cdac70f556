"""Brute-force reference for the projection estimators.

Plain Python loops over frame pairs and over every pair of lit pixels. The
corrected projection is computed from exact event coordinates,
v = (s - c) + (lambda_s / lambda_i) (i - c), deposited onto the output grid
with linear (cloud-in-cell) weights, without any image resampling.
"""
from __future__ import annotations

import math

import numpy as np

from .jpd import AXIS_KINDS, Projection, ProjectionError
from .synth import FrameStack

MAX_ROI_AREA = 4096


def _events(stack: FrameStack, roi, index: int):
    f, r, c = stack.roi_events(roi, index, index + 1)
    return list(zip(r.tolist(), c.tolist()))


def _deposit(grid, y: float, x: float, weight: float):
    ny, nx = grid.shape
    y0, x0 = math.floor(y), math.floor(x)
    fy, fx = y - y0, x - x0
    for yy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
        for xx, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
            if wy * wx > 0 and 0 <= yy < ny and 0 <= xx < nx:
                grid[yy, xx] += weight * wy * wx


def brute_force_projection(stack: FrameStack, kind: str, lambdas: tuple[float, float] | None = None) -> Projection:
    """Reference projection with consecutive-frame accidental subtraction."""
    if kind not in AXIS_KINDS:
        raise ProjectionError(f"unknown projection kind {kind!r}")
    roi_s, roi_i = stack.sensor.roi_signal, stack.sensor.roi_idler
    h, w = roi_s.shape
    if h * w > MAX_ROI_AREA:
        raise ProjectionError(f"ROI area {h * w} px exceeds oracle guard of {MAX_ROI_AREA} px")
    need = "position" if kind == "minus_position" else "momentum"
    if stack.basis_tag != need:
        raise ProjectionError(f"{kind} needs a {need}-basis stack, got {stack.basis_tag!r}")
    if stack.n_frames < 2:
        raise ProjectionError("need at least 2 frames")
    stretch = 1.0
    if kind == "corrected_sum_momentum":
        if not lambdas:
            raise ProjectionError("corrected projection needs (lambda_signal, lambda_idler)")
        stretch = lambdas[0] / lambdas[1]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    grid = np.zeros((2 * h - 1, 2 * w - 1))
    for frame in range(stack.n_frames - 1):
        signal = _events(stack, roi_s, frame)
        for shift, sign in ((0, 1.0), (1, -1.0)):
            idler = _events(stack, roi_i, frame + shift)
            for sr, sc in signal:
                for ir, ic in idler:
                    if kind == "minus_position":
                        grid[sr - ir + h - 1, sc - ic + w - 1] += sign
                    elif kind == "sum_momentum":
                        grid[sr + ir, sc + ic] += sign
                    else:
                        vy = (sr - cy) + stretch * (ir - cy)
                        vx = (sc - cx) + stretch * (ic - cx)
                        _deposit(grid, vy + h - 1, vx + w - 1, sign)
    n_pairs = stack.n_frames - 1
    return Projection(values=grid / n_pairs, axis_kind=kind, bin_size=stack.sensor.pixel_pitch,
                      center_index=(h - 1, w - 1), n_pairs=n_pairs, stretch=stretch,
                      lambda_signal=lambdas[0] if lambdas else None,
                      lambda_idler=lambdas[1] if lambdas else None)
