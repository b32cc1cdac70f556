"""Synthetic photon-counting frame stacks from a GaussianPairState.

Frames are binary (thresholded EMCCD photon counting). A FrameStack stores
each frame as the sorted flat indices of its lit pixels, which is exact for
binary data and keeps 1e5-frame stacks small; dense views are built on
demand.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .optics import GaussianPairState, OpticalConfig, momentum_to_camera

BASES = ("position", "momentum")

# Frames per synthesis task; fixed so output never depends on the thread count.
SYNTH_CHUNK = 2048


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class Roi:
    """Axis-aligned pixel rectangle: columns x0..x0+w-1, rows y0..y0+h-1."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0 or self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"invalid ROI {self}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.h, self.w)

    @property
    def center(self) -> tuple[float, float]:
        """(row, col) of the beam center inside the ROI, in ROI pixel coordinates."""
        return ((self.h - 1) / 2.0, (self.w - 1) / 2.0)

    def overlaps(self, other: "Roi") -> bool:
        return not (self.x0 + self.w <= other.x0 or other.x0 + other.w <= self.x0
                    or self.y0 + self.h <= other.y0 or other.y0 + other.h <= self.y0)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.w, self.h]


@dataclass(frozen=True)
class SensorModel:
    pixel_pitch: float          # um
    width_px: int
    height_px: int
    roi_signal: Roi
    roi_idler: Roi
    quantum_efficiency: float = 0.8
    dark_count_prob: float = 1e-5
    mean_pairs_per_frame: float = 2.0

    def __post_init__(self):
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if not (0 < self.width_px < 2**16 and 0 < self.height_px < 2**16):
            raise ValueError("sensor dimensions must fit in u16")
        for name, roi in (("roi_signal", self.roi_signal), ("roi_idler", self.roi_idler)):
            if roi.x0 + roi.w > self.width_px or roi.y0 + roi.h > self.height_px:
                raise ValueError(f"{name} {roi} exceeds sensor bounds")
        if self.roi_signal.overlaps(self.roi_idler):
            raise ValueError("roi_signal and roi_idler must be disjoint")
        # Correlation grids are (2h-1, 2w-1); both ROIs share one shape.
        if self.roi_signal.shape != self.roi_idler.shape:
            raise ValueError("roi_signal and roi_idler must have the same shape")
        if not 0 <= self.quantum_efficiency <= 1:
            raise ValueError("quantum_efficiency must lie in [0, 1]")
        if not 0 <= self.dark_count_prob <= 1:
            raise ValueError("dark_count_prob must lie in [0, 1]")
        if not self.mean_pairs_per_frame >= 0:
            raise ValueError("mean_pairs_per_frame must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)

    @classmethod
    def side_by_side(cls, roi_size: int, pixel_pitch: float, gap: int = 4, **kwargs) -> "SensorModel":
        """Two square ROIs of ``roi_size`` px next to each other, signal on the left."""
        width = 2 * roi_size + 3 * gap
        height = roi_size + 2 * gap
        return cls(pixel_pitch=pixel_pitch, width_px=width, height_px=height,
                   roi_signal=Roi(gap, gap, roi_size, roi_size),
                   roi_idler=Roi(2 * gap + roi_size, gap, roi_size, roi_size), **kwargs)


@dataclass(frozen=True)
class FrameStack:
    """Binary frame stack in sparse (lit-pixel index) form.

    Frame ``l`` lit pixels are ``indices[offsets[l]:offsets[l+1]]``, flat
    row-major indices into the full sensor, sorted ascending.
    """

    indices: np.ndarray
    offsets: np.ndarray
    sensor: SensorModel
    basis_tag: str
    seed: int = 0
    config_hash: bytes = b"\0" * 32
    config_text: str | None = None
    dropped_photons: int = 0
    emitted_photons: int = 0

    def __post_init__(self):
        if self.basis_tag not in BASES:
            raise ValueError(f"basis_tag must be one of {BASES}")
        if len(self.offsets) < 1 or self.offsets[0] != 0 or self.offsets[-1] != len(self.indices):
            raise ValueError("inconsistent frame offsets")
        if len(self.config_hash) != 32:
            raise ValueError("config_hash must be 32 bytes")
        self.indices.setflags(write=False)
        self.offsets.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return len(self.offsets) - 1

    def __len__(self) -> int:
        return self.n_frames

    @property
    def dropped_fraction(self) -> float:
        return self.dropped_photons / self.emitted_photons if self.emitted_photons else 0.0

    def events_per_frame(self) -> np.ndarray:
        return np.diff(self.offsets)

    def frame(self, index: int) -> np.ndarray:
        return self.dense(index, index + 1)[0]

    def dense(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Dense boolean frames ``start:stop`` with shape (n, height, width)."""
        stop = self.n_frames if stop is None else min(stop, self.n_frames)
        h, w = self.sensor.shape
        out = np.zeros((max(stop - start, 0), h * w), dtype=bool)
        lo, hi = self.offsets[start], self.offsets[stop]
        rows = np.repeat(np.arange(stop - start), np.diff(self.offsets[start:stop + 1]))
        out[rows, self.indices[lo:hi]] = True
        return out.reshape(-1, h, w)

    @property
    def frames(self) -> np.ndarray:
        return self.dense()

    def roi_events(self, roi: Roi, start: int = 0, stop: int | None = None):
        """Events inside ``roi`` for frames ``start:stop``.

        Returns (frame, row, col) arrays with frame relative to ``start`` and
        row/col in ROI pixel coordinates, ordered by frame.
        """
        stop = self.n_frames if stop is None else min(stop, self.n_frames)
        lo, hi = self.offsets[start], self.offsets[stop]
        flat = self.indices[lo:hi]
        frame = np.repeat(np.arange(stop - start), np.diff(self.offsets[start:stop + 1]))
        row, col = np.divmod(flat, self.sensor.width_px)
        row = row - roi.y0
        col = col - roi.x0
        keep = (row >= 0) & (row < roi.h) & (col >= 0) & (col < roi.w)
        return frame[keep], row[keep], col[keep]

    @classmethod
    def from_dense(cls, frames, sensor: SensorModel, basis_tag: str, **kwargs) -> "FrameStack":
        frames = np.asarray(frames)
        if frames.ndim != 3 or frames.shape[1:] != sensor.shape:
            raise ValueError(f"frames must have shape (n, {sensor.height_px}, {sensor.width_px})")
        flat = frames.reshape(len(frames), -1) != 0
        counts = flat.sum(axis=1)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        indices = np.nonzero(flat)[1].astype(np.int64)
        return cls(indices=indices, offsets=offsets, sensor=sensor, basis_tag=basis_tag, **kwargs)

    def slice(self, start: int, stop: int) -> "FrameStack":
        lo, hi = self.offsets[start], self.offsets[stop]
        return dataclasses.replace(self, indices=self.indices[lo:hi].copy(),
                                   offsets=(self.offsets[start:stop + 1] - lo).copy())

    def with_basis(self, basis_tag: str) -> "FrameStack":
        """Copy carrying a different basis tag (tags never change in place)."""
        return dataclasses.replace(self, basis_tag=basis_tag)


def sample_pairs(state: GaussianPairState, n: int, basis: str, rng) -> np.ndarray:
    """Draw ``n`` photon pairs in crystal-plane coordinates.

    Returns an array of shape (n, 2, 2) indexed [pair, photon (signal, idler),
    axis (x, y)], in um for the position basis and hbar/mm for momentum.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(rng)
    if basis == "position":
        plus = rng.normal(0.0, state.sigma_plus_pos, size=(n, 2))
        minus = rng.normal(0.0, state.sigma_minus_pos, size=(n, 2))
        first = plus + 0.5 * minus
        second = plus - 0.5 * minus
    elif basis == "momentum":
        total = rng.normal(0.0, state.sigma_plus_mom, size=(n, 2))
        diff = rng.normal(0.0, state.sigma_minus_mom, size=(n, 2))
        first = 0.5 * (total + diff)
        second = 0.5 * (total - diff)
    else:
        raise ValueError(f"unknown basis {basis!r}")
    return np.stack([first, second], axis=1)


def to_camera(pairs: np.ndarray, optics: OpticalConfig, basis: str) -> np.ndarray:
    """Camera-plane positions (um, relative to each beam center) of sampled pairs."""
    pairs = np.asarray(pairs, dtype=float)
    if basis == "position":
        return pairs * optics.imaging_magnification
    f = optics.fourier_focal_effective
    out = np.empty_like(pairs)
    out[:, 0] = momentum_to_camera(pairs[:, 0], optics.lambda_signal, f)
    out[:, 1] = momentum_to_camera(pairs[:, 1], optics.lambda_idler, f)
    return out


def _pixelize(camera_um: np.ndarray, roi: Roi, sensor: SensorModel):
    """Flat sensor indices of photons at camera positions, plus an in-ROI mask."""
    cy, cx = roi.center
    col = np.floor(camera_um[:, 0] / sensor.pixel_pitch + cx + 0.5).astype(np.int64)
    row = np.floor(camera_um[:, 1] / sensor.pixel_pitch + cy + 0.5).astype(np.int64)
    inside = (col >= 0) & (col < roi.w) & (row >= 0) & (row < roi.h)
    flat = (row + roi.y0) * sensor.width_px + col + roi.x0
    return flat, inside


def _render_events(pairs, sensor: SensorModel, optics: OpticalConfig, basis: str, rng):
    """Sorted lit-pixel indices for one frame and the number of dropped photons."""
    camera = to_camera(pairs, optics, basis) if len(pairs) else np.zeros((0, 2, 2))
    survive = rng.random((len(pairs), 2)) < sensor.quantum_efficiency
    lit = []
    dropped = 0
    for photon, roi in ((0, sensor.roi_signal), (1, sensor.roi_idler)):
        flat, inside = _pixelize(camera[:, photon], roi, sensor)
        dropped += int(np.count_nonzero(~inside))
        lit.append(flat[inside & survive[:, photon]])
    n_pix = sensor.width_px * sensor.height_px
    if sensor.dark_count_prob > 0:
        n_dark = rng.binomial(n_pix, sensor.dark_count_prob)
        lit.append(rng.choice(n_pix, size=n_dark, replace=False).astype(np.int64))
    return np.unique(np.concatenate(lit)), dropped


def render_frame(pairs, state: GaussianPairState, sensor: SensorModel, optics: OpticalConfig,
                 basis: str, rng=None):
    """Render crystal-plane pairs into one binary frame.

    Returns ``(frame, dropped)`` where ``frame`` is a bool array of the sensor
    shape and ``dropped`` counts photons that fell outside their ROI.
    ``state`` is accepted for interface symmetry; the pairs already carry it.
    """
    rng = np.random.default_rng(rng)
    events, dropped = _render_events(np.asarray(pairs, dtype=float).reshape(-1, 2, 2),
                                     sensor, optics, basis, rng)
    frame = np.zeros(sensor.width_px * sensor.height_px, dtype=bool)
    frame[events] = True
    return frame.reshape(sensor.shape), dropped


def frame_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for frame ``index``; a pure function of its inputs."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def fingerprint(*parts) -> bytes:
    """SHA-256 over the JSON form of dataclass parts."""
    payload = json.dumps([dataclasses.asdict(p) for p in parts], sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).digest()


def _synth_chunk(start, stop, state, sensor, optics, basis, master_seed):
    pieces, counts = [], []
    dropped = emitted = 0
    for index in range(start, stop):
        rng = frame_rng(master_seed, index)
        n_pairs = rng.poisson(sensor.mean_pairs_per_frame)
        pairs = sample_pairs(state, n_pairs, basis, rng)
        events, lost = _render_events(pairs, sensor, optics, basis, rng)
        pieces.append(events)
        counts.append(len(events))
        dropped += lost
        emitted += 2 * n_pairs
    return pieces, counts, dropped, emitted


def synthesize_stack(optics: OpticalConfig, state: GaussianPairState, sensor: SensorModel,
                     n_frames: int, master_seed: int, basis: str = "momentum", *,
                     threads: int = 1, config_text: str | None = None) -> FrameStack:
    """Generate ``n_frames`` frames; bit-identical for any ``threads``.

    Each frame draws a Poisson(mean_pairs_per_frame) number of pairs from its
    own RNG stream derived from (master_seed, frame index).
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}")
    bounds = [(s, min(s + SYNTH_CHUNK, n_frames)) for s in range(0, n_frames, SYNTH_CHUNK)]
    work = lambda b: _synth_chunk(b[0], b[1], state, sensor, optics, basis, master_seed)  # noqa: E731
    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, bounds))
        else:
            results = [work(b) for b in bounds]
        pieces = [p for r in results for p in r[0]]
        counts = np.array([c for r in results for c in r[1]], dtype=np.int64)
        indices = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    except MemoryError as exc:
        raise SynthesisError(f"out of memory synthesizing {n_frames} frames") from exc
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    if config_text is not None:
        digest = hashlib.sha256(config_text.encode()).digest()
    else:
        digest = fingerprint(optics, state, sensor)
    return FrameStack(indices=indices.astype(np.int64), offsets=offsets, sensor=sensor,
                      basis_tag=basis, seed=int(master_seed), config_hash=digest,
                      config_text=config_text,
                      dropped_photons=sum(r[2] for r in results),
                      emitted_photons=sum(r[3] for r in results))
