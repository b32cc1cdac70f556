"""Gaussian peak fitting of projections and conversion to crystal-plane units.

Widths are Gaussian standard deviations. Fits return widths in the
projection's camera-plane units (um); :func:`to_crystal_plane` turns them
into position widths (um) or momentum widths (hbar/mm).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .jpd import Projection
from .optics import NM_TO_MM, UM_TO_MM, OpticalConfig

DIMS = ("2d_isotropic", "1d_radial", "1d_x", "1d_y")


class FitError(RuntimeError):
    """Fit could not produce a width (no peak, or no convergence)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoPeakError(FitError):
    pass


@dataclass(frozen=True)
class FitResult:
    width: float
    amplitude: float
    center: tuple
    offset: float
    width_uncertainty: float
    goodness: float
    units: str = "um"
    dims: str = "2d_isotropic"
    width_uncertainty_fit: float = 0.0
    width_uncertainty_bootstrap: float | None = None
    iterations: int = 0
    window: tuple = ()

    def __post_init__(self):
        if not self.width > 0:
            raise FitError(f"fit produced non-positive width {self.width}")
        if not self.width_uncertainty >= 0:
            raise FitError("negative width uncertainty")


# -- models ----------------------------------------------------------------------

def _gauss2d(p, y, x):
    a, y0, x0, s, b = p
    g = np.exp(-((y - y0) ** 2 + (x - x0) ** 2) / (2 * s * s))
    return a * g + b, g


def _jac2d(p, y, x, g):
    a, y0, x0, s, _ = p
    dy, dx = y - y0, x - x0
    r2 = dy * dy + dx * dx
    return np.column_stack([g, a * g * dy / s**2, a * g * dx / s**2, a * g * r2 / s**3,
                            np.ones_like(g)])


def _gauss1d(p, u):
    a, u0, s, b = p
    g = np.exp(-((u - u0) ** 2) / (2 * s * s))
    return a * g + b, g


def _jac1d(p, u, g):
    a, u0, s, _ = p
    du = u - u0
    return np.column_stack([g, a * g * du / s**2, a * g * du * du / s**3, np.ones_like(g)])


# -- peak finding -----------------------------------------------------------------

def _robust_rms(values: np.ndarray) -> float:
    med = np.median(values)
    return 1.4826 * float(np.median(np.abs(values - med)))


def locate_peak(values: np.ndarray, snr: float = 5.0):
    """Peak position, initial width (bins) and background of a projection grid.

    Raises NoPeakError unless the 3x3-smoothed maximum stands ``snr`` robust
    RMS above the median.
    """
    smooth = ndimage.uniform_filter(values, size=3, mode="constant")
    background = float(np.median(smooth))
    noise = _robust_rms(smooth)
    iy, ix = np.unravel_index(int(np.argmax(smooth)), smooth.shape)
    amplitude = float(smooth[iy, ix]) - background
    if not amplitude > snr * noise or amplitude <= 0:
        raise NoPeakError(f"no significant peak (amplitude {amplitude:.3g}, background rms {noise:.3g})",
                          {"amplitude": amplitude, "background_rms": noise})
    # half-maximum area of a 2D Gaussian is 2 pi ln2 sigma^2
    above = ndimage.label(smooth - background > amplitude / 2)[0]
    area = np.count_nonzero(above == above[iy, ix])
    sigma0 = max(math.sqrt(area / (2 * math.pi * math.log(2))), 0.5)
    return (iy, ix), sigma0, background


def _window(shape, center, half):
    y0 = max(0, int(center[0]) - half)
    y1 = min(shape[0], int(center[0]) + half + 1)
    x0 = max(0, int(center[1]) - half)
    x1 = min(shape[1], int(center[1]) + half + 1)
    return y0, y1, x0, x1


def _moments(sub: np.ndarray, background: float, yy, xx):
    w = np.clip(sub - background, 0.0, None)
    total = w.sum()
    if total <= 0:
        return None
    cy = float((w * yy).sum() / total)
    cx = float((w * xx).sum() / total)
    var = float((w * ((yy - cy) ** 2 + (xx - cx) ** 2)).sum() / total) / 2.0
    return cy, cx, math.sqrt(max(var, 0.25))


# -- fitting ---------------------------------------------------------------------

def _solve(fun, jac, p0, max_iter=200, xtol=1e-8):
    res = optimize.least_squares(fun, p0, jac=jac, method="lm", xtol=xtol, ftol=1e-15,
                                 gtol=1e-15, max_nfev=max_iter)
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"fit did not converge: {res.message}",
                       {"status": int(res.status), "nfev": int(res.nfev), "x": res.x.tolist()})
    n, k = res.fun.size, res.x.size
    dof = max(n - k, 1)
    s2 = float(res.fun @ res.fun) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((k, k), np.inf)
    return res, cov


def _fit_grid(values, dims, window_half=None, p_init=None, snr=5.0):
    """Fit on a window of the grid; returns (params, cov, res, window, rms)."""
    if p_init is None:
        (iy, ix), sigma0, bg = locate_peak(values, snr)
        half = int(math.ceil(5 * sigma0)) + 3 if window_half is None else window_half
    else:
        iy, ix, sigma0, bg = p_init
        half = window_half
    y0, y1, x0, x1 = _window(values.shape, (iy, ix), half)
    sub = values[y0:y1, x0:x1]
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(float)
    mom = _moments(sub, bg, yy, xx) if p_init is None else None
    cy, cx, s0 = mom if mom else (float(iy), float(ix), sigma0)
    iy, ix = int(round(iy)), int(round(ix))
    if p_init is None:
        s0 = 0.5 * (s0 + sigma0) if mom else sigma0
    amp0 = float(values[iy, ix]) - bg

    if dims == "2d_isotropic":
        y, x, v = yy.ravel(), xx.ravel(), sub.ravel()

        def fun(p):
            return _gauss2d(p, y, x)[0] - v

        def jac(p):
            return _jac2d(p, y, x, _gauss2d(p, y, x)[1])

        res, cov = _solve(fun, jac, np.array([amp0, cy, cx, s0, bg]))
        p = res.x.copy()
        p[3] = abs(p[3])
        params = {"amplitude": p[0], "center": (p[1], p[2]), "sigma": p[3], "offset": p[4],
                  "sigma_var": cov[3, 3]}
    else:
        if dims == "1d_x":
            u, v = np.arange(x0, x1, dtype=float), sub.sum(axis=0)
            c0, scale = cx, sub.shape[0]
        elif dims == "1d_y":
            u, v = np.arange(y0, y1, dtype=float), sub.sum(axis=1)
            c0, scale = cy, sub.shape[1]
        elif dims == "1d_radial":
            # per-pixel radius about the moment centroid, no radial binning
            u = np.hypot(yy - cy, xx - cx).ravel()
            v = sub.ravel()
            c0, scale = 0.0, 1
        else:
            raise FitError(f"unknown dims {dims!r}; choose from {DIMS}")
        # a 1D marginal of an isotropic 2D Gaussian keeps its sigma
        a0 = float(v.max() - np.median(v)) if dims != "1d_radial" else amp0
        b0 = float(np.median(v)) if dims != "1d_radial" else bg

        def fun(p):
            return _gauss1d(p, u)[0] - v

        def jac(p):
            return _jac1d(p, u, _gauss1d(p, u)[1])

        p0 = np.array([a0, c0, s0, b0])
        if dims == "1d_radial":
            # centered profile: the mean is pinned at r = 0
            def fun(p):  # noqa: F811
                q = np.array([p[0], 0.0, p[1], p[2]])
                return _gauss1d(q, u)[0] - v

            def jac(p):  # noqa: F811
                q = np.array([p[0], 0.0, p[1], p[2]])
                full = _jac1d(q, u, _gauss1d(q, u)[1])
                return full[:, [0, 2, 3]]

            res, cov = _solve(fun, jac, np.array([a0, s0, b0]))
            p = res.x
            params = {"amplitude": p[0], "center": (cy, cx), "sigma": abs(p[1]),
                      "offset": p[2], "sigma_var": cov[1, 1]}
        else:
            res, cov = _solve(fun, jac, p0)
            p = res.x
            center = (cy, p[1]) if dims == "1d_x" else (p[1], cx)
            params = {"amplitude": p[0], "center": center, "sigma": abs(p[2]),
                      "offset": p[3] / scale, "sigma_var": cov[2, 2]}
    rms = float(np.sqrt(np.mean(res.fun ** 2)))
    return params, res, (y0, y1, x0, x1), rms, half


def fit_gaussian_peak(projection: Projection, dims: str = "2d_isotropic", *,
                      bootstrap: int = 20, seed: int = 0, snr: float = 5.0) -> FitResult:
    """Least-squares Gaussian-plus-offset fit of the projection peak.

    The fit runs twice: once on a window sized from the half-maximum area and
    once on a window of +-5 fitted sigmas. When the projection carries frame
    blocks, ``bootstrap`` block resamples are refit and their spread becomes
    the reported width uncertainty (the covariance estimate is kept too).
    """
    if dims not in DIMS:
        raise FitError(f"unknown dims {dims!r}; choose from {DIMS}")
    values = projection.values
    # the radial profile needs a center, which the isotropic pass provides
    first = "2d_isotropic" if dims == "1d_radial" else dims
    params, res, window, rms, _ = _fit_grid(values, first, snr=snr)
    half = int(math.ceil(5 * params["sigma"])) + 3
    center = params["center"]
    init = (float(center[0]), float(center[1]), params["sigma"],
            params["offset"] if first == "2d_isotropic" else float(np.median(values)))
    if not (0 <= round(init[0]) < values.shape[0] and 0 <= round(init[1]) < values.shape[1]):
        raise FitError("fitted center left the projection grid", {"center": center})
    params, res, window, rms, half = _fit_grid(values, dims, window_half=half, p_init=init)

    sigma = params["sigma"]
    sigma_fit = math.sqrt(params["sigma_var"]) if params["sigma_var"] >= 0 else math.inf
    sigma_boot = None
    if bootstrap and projection.block_values is not None and len(projection.block_pairs) > 1:
        sigma_boot = _bootstrap_sigma(projection, dims, bootstrap, seed, init, half)
    unc = sigma_boot if sigma_boot is not None else sigma_fit
    bs = projection.bin_size
    cy, cx = params["center"]
    ci = projection.center_index
    amp = params["amplitude"]
    return FitResult(width=sigma * bs, amplitude=amp,
                     center=((cy - ci[0]) * bs, (cx - ci[1]) * bs), offset=params["offset"],
                     width_uncertainty=unc * bs,
                     goodness=rms / abs(amp) if amp else math.inf,
                     units=projection.units, dims=dims, width_uncertainty_fit=sigma_fit * bs,
                     width_uncertainty_bootstrap=None if sigma_boot is None else sigma_boot * bs,
                     iterations=int(res.nfev), window=window)


def _bootstrap_sigma(projection: Projection, dims, n_resamples, seed, init, half):
    rng = np.random.default_rng(seed)
    k = len(projection.block_pairs)
    widths = []
    for _ in range(n_resamples):
        weights = rng.multinomial(k, np.full(k, 1.0 / k))
        grid = projection.resample_blocks(weights)
        try:
            params = _fit_grid(grid, dims, window_half=half, p_init=init)[0]
        except FitError:
            continue
        widths.append(params["sigma"])
    if len(widths) < 2:
        return None
    return float(np.std(widths, ddof=1))


# -- unit conversion -----------------------------------------------------------

def crystal_scale(kind: str, optics: OpticalConfig) -> tuple[float, str]:
    """Factor taking a camera-plane width (um) to crystal-plane units, and the unit.

    Momentum projections are read along q_s + (lambda_s/lambda_i) q_i, i.e.
    lambda_s times the corrected variable q_s/lambda_s + q_i/lambda_i, so
    dp = 2 pi sigma / (lambda_s f). The uncorrected sum uses the same
    signal-wavelength calibration.
    """
    if kind == "minus_position":
        return 1.0 / optics.imaging_magnification, "um"
    if kind in ("sum_momentum", "corrected_sum_momentum"):
        lam_mm = optics.lambda_signal * NM_TO_MM
        return 2 * math.pi * UM_TO_MM / (lam_mm * optics.fourier_focal_effective), "hbar/mm"
    raise ValueError(f"unknown projection kind {kind!r}")


def to_crystal_plane(fit, kind: str, optics: OpticalConfig):
    """Convert a camera-plane width (float or FitResult) into crystal-plane units."""
    scale, units = crystal_scale(kind, optics)
    if isinstance(fit, FitResult):
        boot = fit.width_uncertainty_bootstrap
        return dataclasses.replace(
            fit, width=fit.width * scale, width_uncertainty=fit.width_uncertainty * scale,
            width_uncertainty_fit=fit.width_uncertainty_fit * scale,
            width_uncertainty_bootstrap=None if boot is None else boot * scale,
            center=tuple(c * scale for c in fit.center), units=units)
    return fit * scale
