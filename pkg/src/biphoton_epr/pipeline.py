"""End-to-end runs: simulate, project, fit, certify, and waist/crystal sweeps."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

from .certify import EprReport, ScalingFit, epr_certify, fit_scaling_law, ratio_with_uncertainty
from .config import RunConfig
from .fit import FitError, FitResult, fit_gaussian_peak, to_crystal_plane
from .jpd import Projection, project
from .synth import FrameStack, synthesize_stack

log = logging.getLogger(__name__)

KIND_ALIASES = {"minus": "minus_position", "sum": "sum_momentum",
                "corrected-sum": "corrected_sum_momentum"}


def simulate(config: RunConfig, basis: str | None = None, n_frames: int | None = None,
             seed: int | None = None, threads: int = 1) -> FrameStack:
    """Synthesize a stack; the embedded config records the effective settings."""
    run = dataclasses.replace(config.run, basis=basis or config.run.basis,
                              n_frames=n_frames or config.run.n_frames,
                              seed=config.run.seed if seed is None else seed)
    config = config.replace(run=run)
    return synthesize_stack(config.optics, config.state(), config.sensor, run.n_frames,
                            run.seed, run.basis, threads=threads, config_text=config.to_text())


def project_stack(stack: FrameStack, kind: str, config: RunConfig, threads: int = 1) -> Projection:
    kind = KIND_ALIASES.get(kind, kind)
    run = config.run
    return project(stack, kind, lambda_signal=config.optics.lambda_signal,
                   lambda_idler=config.optics.lambda_idler, method=run.method,
                   accidentals=run.accidentals, n_blocks=run.blocks,
                   chunk_frames=run.chunk_frames, threads=threads)


def fit_projection(projection: Projection, config: RunConfig, seed: int = 0) -> FitResult:
    """Fitted width in crystal-plane units (um or hbar/mm)."""
    fit = fit_gaussian_peak(projection, bootstrap=config.run.bootstrap, seed=seed)
    return to_crystal_plane(fit, projection.axis_kind, config.optics)


@dataclass
class PointResult:
    """Outcome of one (crystal length, pump waist) grid point."""

    crystal_length: float
    pump_waist: float
    injected: object = None
    fits: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    projections: dict = field(default_factory=dict)
    dropped_fraction: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def measure_point(config: RunConfig, threads: int = 1, keep_projections: bool = False,
                  seed_offset: int = 0) -> PointResult:
    """Simulate both bases and certify with corrected and uncorrected momentum widths.

    The position stack uses seed ``run.seed + seed_offset`` and the momentum
    stack the next seed.
    """
    optics = config.optics
    point = PointResult(crystal_length=optics.crystal_length, pump_waist=optics.pump_waist,
                        injected=config.state())
    seed = config.run.seed + seed_offset
    try:
        pos = simulate(config, "position", seed=seed, threads=threads)
        point.dropped_fraction["position"] = pos.dropped_fraction
        minus = project_stack(pos, "minus_position", config, threads)
        del pos
        mom = simulate(config, "momentum", seed=seed + 1, threads=threads)
        point.dropped_fraction["momentum"] = mom.dropped_fraction
        plain = project_stack(mom, "sum_momentum", config, threads)
        corrected = project_stack(mom, "corrected_sum_momentum", config, threads)
        del mom
        fits = {kind: fit_projection(proj, config, seed=seed)
                for kind, proj in (("minus_position", minus), ("sum_momentum", plain),
                                   ("corrected_sum_momentum", corrected))}
        point.fits = fits
        if keep_projections:
            point.projections = {"minus_position": minus, "sum_momentum": plain,
                                 "corrected_sum_momentum": corrected}
        prov = {"config_hash": config.config_hash().hex(), "seed": f"{seed},{seed + 1}",
                "n_frames": config.run.n_frames}
        for label, kind in (("corrected", "corrected_sum_momentum"), ("uncorrected", "sum_momentum")):
            point.reports[label] = epr_certify(
                fits["minus_position"], fits[kind], config.run.significance_sigma, label=label,
                pump_waist=optics.pump_waist, crystal_length=optics.crystal_length,
                provenance=prov)
    except (FitError, ValueError, MemoryError) as exc:
        log.warning("grid point L=%g mm, w=%g um failed: %s", optics.crystal_length,
                    optics.pump_waist, exc)
        point.error = f"{type(exc).__name__}: {exc}"
    return point


@dataclass
class SweepResult:
    points: list
    scaling: dict            # (label, crystal_length) -> ScalingFit
    ratio: dict              # label -> (a_long / a_short, uncertainty, long, short)

    def reports(self, label: str | None = None) -> list[EprReport]:
        out = []
        for p in self.points:
            for lab, rep in p.reports.items():
                if label is None or lab == label:
                    out.append(rep)
        return out


def sweep(config: RunConfig, waists, crystals, threads: int = 1, progress=None) -> SweepResult:
    """Full pipeline over the (crystal length, pump waist) grid.

    Failed points are recorded and skipped; seeds advance by 2 per point.
    """
    points = []
    index = 0
    for length in crystals:
        for waist in waists:
            optics = dataclasses.replace(config.optics, crystal_length=float(length),
                                         pump_waist=float(waist))
            point = measure_point(config.replace(optics=optics), threads, seed_offset=2 * index)
            if progress:
                progress(point)
            points.append(point)
            index += 1
    scaling: dict[tuple, ScalingFit] = {}
    for label in ("corrected", "uncorrected"):
        for length in crystals:
            data = [(p.pump_waist, p.reports[label].product, p.reports[label].product_uncertainty)
                    for p in points if p.ok and p.crystal_length == float(length)]
            if len({d[0] for d in data}) >= 2:
                scaling[(label, float(length))] = fit_scaling_law(data)
    ratio = {}
    if len(crystals) >= 2:
        lengths = sorted(float(c) for c in crystals)
        short, long_ = lengths[0], lengths[-1]
        for label in ("corrected", "uncorrected"):
            if (label, short) in scaling and (label, long_) in scaling:
                r, dr = ratio_with_uncertainty(scaling[(label, long_)], scaling[(label, short)])
                ratio[label] = (r, dr, long_, short)
    return SweepResult(points=points, scaling=scaling, ratio=ratio)
