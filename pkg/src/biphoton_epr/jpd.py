"""JPD projections from binary frame stacks.

Three projections are supported, all as 2D grids over a correlation
coordinate with the zero at ``center_index``:

* ``minus_position``: histogram of r_s - r_i (cross-correlation of the two ROIs)
* ``sum_momentum``: histogram of q_s + q_i (convolution), uncorrected
* ``corrected_sum_momentum``: histogram of q_s + (lambda_s/lambda_i) q_i, i.e.
  the sum coordinate after stretching the idler axis; dividing by lambda_s
  gives q_s/lambda_s + q_i/lambda_i.

Accidentals are removed by subtracting the same correlation taken between
consecutive frames (signal frame l with idler frame l+1); the result is
normalized per frame pair. Two interchangeable kernels compute the raw
sums: dense FFT convolution and a sparse pair-list histogram that scales
with the event count instead of the ROI area.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .synth import FrameStack

AXIS_KINDS = ("minus_position", "sum_momentum", "corrected_sum_momentum")
ACCIDENTAL_MODES = ("consecutive", "product_of_means")
METHODS = ("auto", "fft", "sparse")

DEFAULT_CHUNK = 4096
DEFAULT_BLOCKS = 20


class ProjectionError(ValueError):
    pass


@dataclass
class Projection:
    """Background-subtracted coincidences per frame pair over a correlation grid.

    ``bin_size`` is the camera-plane length (um) of one bin along the
    projection axis, i.e. the pixel pitch; conversion to crystal-plane units
    happens in :func:`biphoton_epr.fit.to_crystal_plane`. ``block_values``
    holds the unnormalized net sums of contiguous frame blocks (with
    ``block_pairs`` frame pairs each) for bootstrap resampling.
    """

    values: np.ndarray
    axis_kind: str
    bin_size: float
    center_index: tuple[int, int]
    n_pairs: int
    units: str = "um"
    stretch: float = 1.0
    lambda_signal: float | None = None
    lambda_idler: float | None = None
    accidentals: str = "consecutive"
    block_values: np.ndarray | None = field(default=None, repr=False)
    block_pairs: np.ndarray | None = None
    config_hash: bytes = b"\0" * 32

    def __post_init__(self):
        if self.axis_kind not in AXIS_KINDS:
            raise ProjectionError(f"unknown axis_kind {self.axis_kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ProjectionError("projection values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def axis(self, dim: int) -> np.ndarray:
        """Bin coordinates (in bins, zero at the center) along ``dim``."""
        return np.arange(self.values.shape[dim]) - self.center_index[dim]

    def resample_blocks(self, weights) -> np.ndarray:
        """Projection rebuilt from blocks with multiplicities ``weights``."""
        if self.block_values is None:
            raise ProjectionError("projection carries no blocks")
        weights = np.asarray(weights, dtype=float)
        pairs = float(np.dot(weights, self.block_pairs))
        return np.tensordot(weights, self.block_values, axes=1) / pairs


# -- idler stretch ------------------------------------------------------------

def stretch_table(n: int, stretch: float):
    """Count-conserving 1D resampling of an ``n``-pixel axis by ``stretch``.

    Pixel i of the input maps to real position t_i = c + stretch (i - c) on an
    integer output grid (c is the axis center, which stays fixed) and its
    count is split bilinearly between the two neighbouring output pixels, so
    counts and centroids are conserved exactly. Returns ``(j, w, j_min,
    n_out)`` where ``j`` and ``w`` have shape (n, 2) holding output indices
    (absolute, possibly negative) and weights; a zero weight marks an unused
    slot.
    """
    c = (n - 1) / 2.0
    t = c + stretch * (np.arange(n) - c)
    lo = np.floor(t).astype(np.int64)
    frac = t - lo
    j = np.stack([lo, lo + 1], axis=1)
    w = np.stack([1.0 - frac, frac], axis=1)
    j = np.where(w > 0, j, lo[:, None])
    j_min = int(j[w > 0].min())
    j_max = int(j[w > 0].max())
    return j, w, j_min, j_max - j_min + 1


def stretch_matrix(n: int, stretch: float):
    """Dense (n_out, n) matrix form of :func:`stretch_table` and its offset."""
    j, w, j_min, n_out = stretch_table(n, stretch)
    mat = np.zeros((n_out, n))
    cols = np.broadcast_to(np.arange(n)[:, None], j.shape)
    np.add.at(mat, (j - j_min, cols), w)
    return mat, j_min


def resample_idler(images: np.ndarray, stretch: float, max_size: int | None = None):
    """Stretch a stack of idler ROI images by ``stretch`` about the ROI center.

    Returns the resampled images and the (row, col) offset of output index 0
    on the integer stretched grid.
    """
    h, w = images.shape[-2:]
    my, oy = stretch_matrix(h, stretch)
    mx, ox = stretch_matrix(w, stretch)
    if max_size is not None and max(my.shape[0], mx.shape[0]) > max_size:
        raise ProjectionError(
            f"stretch {stretch:.4g} needs a {my.shape[0]}x{mx.shape[0]} buffer, above bound {max_size}")
    return my @ images @ mx.T, (oy, ox)


# -- kernels -------------------------------------------------------------------

@dataclass(frozen=True)
class _Plan:
    kind: str
    roi_shape: tuple[int, int]
    stretch: float
    max_size: int | None

    @property
    def out_shape(self):
        h, w = self.roi_shape
        return (2 * h - 1, 2 * w - 1)


def _fft_size(n: int) -> int:
    return sfft.next_fast_len(n, real=True)


def _dense_roi(stack: FrameStack, roi, start: int, stop: int) -> np.ndarray:
    f, r, c = stack.roi_events(roi, start, stop)
    out = np.zeros((stop - start, roi.h, roi.w))
    out[f, r, c] = 1.0
    return out


def _prepare_idler(plan: _Plan, idler: np.ndarray):
    """Idler images arranged so that the projection is a plain convolution."""
    if plan.kind == "minus_position":
        return idler[:, ::-1, ::-1], (0, 0)
    if plan.kind == "sum_momentum":
        return idler, (0, 0)
    return resample_idler(idler, plan.stretch, plan.max_size)


def _fft_pair_sums(plan: _Plan, sig: np.ndarray, idl: np.ndarray, n_true: int,
                   integer: bool = True):
    """Raw (true, accidental) sums for signal frames 0..n_true-1.

    ``idl`` carries n_true + 1 frames when accidentals are needed (else n_true).
    Grid index is s - i + (h - 1) for the minus kind and s + j otherwise,
    which is the convolution index shifted by the idler grid offset.
    """
    prepared, (oy, ox) = _prepare_idler(plan, idl)
    h, w = plan.roi_shape
    py = _fft_size(h + prepared.shape[1] - 1)
    px = _fft_size(w + prepared.shape[2] - 1)
    fs = sfft.rfft2(sig, s=(py, px), workers=1)
    fi = sfft.rfft2(prepared, s=(py, px), workers=1)
    true_f = np.sum(fs[:n_true] * fi[:n_true], axis=0)
    grids = [sfft.irfft2(true_f, s=(py, px), workers=1)]
    if len(prepared) > n_true:
        acc_f = np.sum(fs[:n_true] * fi[1:n_true + 1], axis=0)
        grids.append(sfft.irfft2(acc_f, s=(py, px), workers=1))
    ny, nx = plan.out_shape
    dy, dx = oy, ox
    out = []
    for g in grids:
        full = np.zeros(plan.out_shape)
        src_y0, src_x0 = max(0, -dy), max(0, -dx)
        dst_y0, dst_x0 = max(0, dy), max(0, dx)
        hh = min(ny - dst_y0, py - src_y0)
        ww = min(nx - dst_x0, px - src_x0)
        full[dst_y0:dst_y0 + hh, dst_x0:dst_x0 + ww] = g[src_y0:src_y0 + hh, src_x0:src_x0 + ww]
        if integer and plan.kind != "corrected_sum_momentum":
            full = np.rint(full)  # binary frames give integer coincidence counts
        out.append(full)
    return out


def _axis_targets(plan: _Plan, dim: int):
    """Per-pixel (index table, weight table) for the idler along one axis."""
    n = plan.roi_shape[dim]
    if plan.kind == "corrected_sum_momentum":
        j, w, _, _ = stretch_table(n, plan.stretch)
        keep = w.any(axis=0)
        return j[:, keep], w[:, keep]
    idx = np.arange(n)[:, None]
    return idx, np.ones((n, 1))


def _pairs(frame_s, frame_i, n_frames_i, shift):
    """Index pairs (signal event, idler event) with idler frame = signal frame + shift."""
    counts_i = np.bincount(frame_i, minlength=n_frames_i)
    starts_i = np.concatenate([[0], np.cumsum(counts_i)[:-1]])
    partner = frame_s + shift
    valid = partner < n_frames_i
    s_idx = np.nonzero(valid)[0]
    rep = counts_i[partner[valid]]
    total = int(rep.sum())
    s_rep = np.repeat(s_idx, rep)
    first = np.repeat(starts_i[partner[valid]], rep)
    within = np.arange(total) - np.repeat(np.cumsum(rep) - rep, rep)
    return s_rep, first + within


def _sparse_pair_sums(plan: _Plan, ev_s, ev_i, n_true: int, n_idler_frames: int):
    fs, rs, cs = ev_s
    fi, ri, ci = ev_i
    h, w = plan.roi_shape
    ny, nx = plan.out_shape
    jy, wy = _axis_targets(plan, 0)
    jx, wx = _axis_targets(plan, 1)
    sel = fs < n_true
    fs, rs, cs = fs[sel], rs[sel], cs[sel]
    out = []
    shifts = (0, 1) if n_idler_frames > n_true else (0,)
    for shift in shifts:
        a, b = _pairs(fs, fi, n_idler_frames, shift)
        if plan.kind == "minus_position":
            ky = (rs[a] - ri[b] + (h - 1))[:, None, None]
            kx = (cs[a] - ci[b] + (w - 1))[:, None, None]
            wt = np.ones((len(a), 1, 1))
        else:
            ky = rs[a][:, None, None] + jy[ri[b]][:, :, None]
            kx = cs[a][:, None, None] + jx[ci[b]][:, None, :]
            wt = wy[ri[b]][:, :, None] * wx[ci[b]][:, None, :]
        ky, kx = np.broadcast_arrays(ky, kx)
        wt = np.broadcast_to(wt, ky.shape)
        ok = (ky >= 0) & (ky < ny) & (kx >= 0) & (kx < nx) & (wt > 0)
        flat = ky[ok] * nx + kx[ok]
        grid = np.bincount(flat, weights=wt[ok], minlength=ny * nx).reshape(ny, nx)
        out.append(grid)
    return out


def _choose_method(plan: _Plan, stack: FrameStack) -> str:
    """Cheaper kernel for this stack; both give the same sums."""
    n = max(stack.n_frames, 1)
    per_frame = stack.events_per_frame().mean() / 2.0 if n else 0.0
    taps = 4 if plan.kind == "corrected_sum_momentum" else 1
    sparse_cost = 2 * per_frame * per_frame * taps * 60e-9 + 20e-6
    py = _fft_size(3 * plan.roi_shape[0])
    px = _fft_size(3 * plan.roi_shape[1])
    fft_cost = 3 * py * px * math.log2(py * px) * 1e-9
    return "sparse" if sparse_cost < fft_cost else "fft"


# -- driver ----------------------------------------------------------------------

def _check_stack(stack: FrameStack, kind: str, accidentals: str):
    need = "position" if kind == "minus_position" else "momentum"
    if stack.basis_tag != need:
        raise ProjectionError(
            f"{kind} projection needs a {need}-basis stack, got basis_tag={stack.basis_tag!r}")
    if accidentals not in ACCIDENTAL_MODES:
        raise ProjectionError(f"accidentals must be one of {ACCIDENTAL_MODES}")
    if accidentals == "consecutive" and stack.n_frames < 2:
        raise ProjectionError("consecutive-frame accidental subtraction needs n_frames >= 2")


def _block_bounds(n_terms: int, n_blocks: int, chunk: int):
    """Contiguous blocks of term indices, each split into chunk tasks."""
    n_blocks = max(1, min(n_blocks, n_terms))
    edges = np.linspace(0, n_terms, n_blocks + 1).round().astype(int)
    tasks = []
    for b in range(n_blocks):
        for a in range(edges[b], edges[b + 1], chunk):
            tasks.append((b, a, min(a + chunk, edges[b + 1])))
    return n_blocks, edges, tasks


def project(stack: FrameStack, kind: str, *, lambda_signal: float | None = None,
            lambda_idler: float | None = None, method: str = "auto",
            accidentals: str = "consecutive", n_blocks: int = DEFAULT_BLOCKS,
            chunk_frames: int = DEFAULT_CHUNK, threads: int = 1,
            max_stretch_size: int | None = None) -> Projection:
    """Projection of ``stack`` of the given ``kind``.

    Output is bit-identical for any ``threads``: work is split into fixed
    chunks (``chunk_frames``) inside fixed blocks and reduced in index order.
    """
    if kind not in AXIS_KINDS:
        raise ProjectionError(f"unknown projection kind {kind!r}")
    if method not in METHODS:
        raise ProjectionError(f"method must be one of {METHODS}")
    _check_stack(stack, kind, accidentals)
    roi_s, roi_i = stack.sensor.roi_signal, stack.sensor.roi_idler
    stretch = 1.0
    if kind == "corrected_sum_momentum":
        if lambda_signal is None or lambda_idler is None or lambda_signal <= 0 or lambda_idler <= 0:
            raise ProjectionError("corrected projection needs positive lambda_signal and lambda_idler")
        stretch = lambda_signal / lambda_idler
    if max_stretch_size is None:
        max_stretch_size = 4 * max(roi_s.shape) + 8
    plan = _Plan(kind, roi_s.shape, stretch, max_stretch_size)
    if kind == "corrected_sum_momentum":
        _, _, _, n_out = stretch_table(max(roi_s.shape), stretch)
        if n_out > max_stretch_size:
            raise ProjectionError(
                f"stretch {stretch:.4g} needs a {n_out}-pixel buffer, above bound {max_stretch_size}")
    if method == "auto":
        method = _choose_method(plan, stack)

    consecutive = accidentals == "consecutive"
    n_terms = stack.n_frames - 1 if consecutive else stack.n_frames
    n_blocks, edges, tasks = _block_bounds(n_terms, n_blocks, chunk_frames)

    def work(task):
        _, a, b = task
        stop_i = b + 1 if consecutive else b
        if method == "fft":
            sig = _dense_roi(stack, roi_s, a, b)
            idl = _dense_roi(stack, roi_i, a, stop_i)
            sums = _fft_pair_sums(plan, sig, idl, b - a)
        else:
            ev_s = stack.roi_events(roi_s, a, b)
            ev_i = stack.roi_events(roi_i, a, stop_i)
            sums = _sparse_pair_sums(plan, ev_s, ev_i, b - a, stop_i - a)
        return sums[0] - sums[1] if consecutive else sums[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, tasks))
    else:
        parts = [work(t) for t in tasks]

    blocks = np.zeros((n_blocks,) + plan.out_shape)
    for (b, _, _), part in zip(tasks, parts):
        blocks[b] += part
    block_pairs = np.diff(edges).astype(np.int64)

    if not consecutive:
        background = _mean_background(plan, stack, method)
        blocks -= block_pairs[:, None, None] * background[None]

    total = np.zeros(plan.out_shape)
    for grid in blocks:
        total += grid
    values = total / n_terms
    h, w = roi_s.shape
    return Projection(values=values, axis_kind=kind, bin_size=stack.sensor.pixel_pitch,
                      center_index=(h - 1, w - 1), n_pairs=int(n_terms), stretch=stretch,
                      lambda_signal=lambda_signal, lambda_idler=lambda_idler,
                      accidentals=accidentals, block_values=blocks, block_pairs=block_pairs,
                      config_hash=stack.config_hash)


def _mean_background(plan: _Plan, stack: FrameStack, method: str) -> np.ndarray:
    """Correlation of the mean signal image with the mean idler image."""
    roi_s, roi_i = stack.sensor.roi_signal, stack.sensor.roi_idler
    mean_s = np.zeros(roi_s.shape)
    mean_i = np.zeros(roi_i.shape)
    _, r, c = stack.roi_events(roi_s)
    np.add.at(mean_s, (r, c), 1.0)
    _, r, c = stack.roi_events(roi_i)
    np.add.at(mean_i, (r, c), 1.0)
    mean_s /= stack.n_frames
    mean_i /= stack.n_frames
    return _fft_pair_sums(plan, mean_s[None], mean_i[None], 1, integer=False)[0]


def minus_projection(stack: FrameStack, **kwargs) -> Projection:
    """Position-correlation projection over r_s - r_i."""
    return project(stack, "minus_position", **kwargs)


def sum_projection(stack: FrameStack, **kwargs) -> Projection:
    """Uncorrected momentum projection over q_s + q_i."""
    return project(stack, "sum_momentum", **kwargs)


def corrected_sum_projection(stack: FrameStack, lambda_signal: float, lambda_idler: float,
                             **kwargs) -> Projection:
    """Momentum projection over q_s/lambda_s + q_i/lambda_i (idler axis stretched)."""
    return project(stack, "corrected_sum_momentum", lambda_signal=lambda_signal,
                   lambda_idler=lambda_idler, **kwargs)
