"""Calibrate the momentum marginal width against a target uncorrected width.

The uncorrected sum projection of non-degenerate pairs mixes the correlation
width with the momentum marginal. This script simulates momentum stacks for a
grid of marginal_scale values (sigma_minus_mom = scale * sigma_plus_mom),
fits the uncorrected width, fits width^2 = A + B scale^2 and solves for the
scale that gives --target. The result, the per-scale measurements and the
exact configs are written as JSON.

    python scripts/calibrate_marginal.py --config configs/reference.toml \
        --out configs/marginal_calibration.json
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json

import numpy as np

from biphoton_epr import __version__
from biphoton_epr.config import RunConfig
from biphoton_epr.pipeline import fit_projection, project_stack, simulate


def measure(config: RunConfig, frames: int, seed: int, threads: int) -> dict:
    stack = simulate(config, "momentum", n_frames=frames, seed=seed, threads=threads)
    out = {}
    for kind in ("sum_momentum", "corrected_sum_momentum"):
        fit = fit_projection(project_stack(stack, kind, config, threads), config)
        out[kind] = (fit.width, fit.width_uncertainty)
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", default="configs/reference.toml")
    ap.add_argument("--out", default="configs/marginal_calibration.json")
    ap.add_argument("--target", type=float, default=36.0, help="uncorrected width (hbar/mm)")
    ap.add_argument("--scales", default="8,10,11,12,13,14")
    ap.add_argument("--frames", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=101)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    base = RunConfig.load(args.config)
    base_state = base.state()
    rows = []
    for i, scale in enumerate(float(s) for s in args.scales.split(",")):
        state = dataclasses.replace(base_state, sigma_minus_mom=scale * base_state.sigma_plus_mom)
        config = base.with_state(state)
        res = measure(config, args.frames, args.seed + i, args.threads)
        (u, du), (c, dc) = res["sum_momentum"], res["corrected_sum_momentum"]
        rows.append({"marginal_scale": scale, "sigma_minus_mom": state.sigma_minus_mom,
                     "uncorrected": u, "uncorrected_unc": du, "corrected": c, "corrected_unc": dc,
                     "seed": args.seed + i, "config_sha256": config.config_hash().hex()})
        print(f"scale {scale:6.2f}: uncorrected {u:.3f} +- {du:.2f}, corrected {c:.3f} +- {dc:.2f} hbar/mm")

    s = np.array([r["marginal_scale"] for r in rows])
    w = np.array([r["uncorrected"] for r in rows])
    dw = np.array([r["uncorrected_unc"] for r in rows])
    # width^2 = A + B s^2, weighted by the propagated variance of width^2
    design = np.column_stack([np.ones_like(s), s ** 2])
    weights = 1.0 / (2 * w * dw)
    (a, b), *_ = np.linalg.lstsq(design * weights[:, None], w ** 2 * weights, rcond=None)
    if b <= 0 or args.target ** 2 <= a:
        raise SystemExit(f"calibration failed: width^2 = {a:.3g} + {b:.3g} s^2 cannot reach target")
    scale = float(np.sqrt((args.target ** 2 - a) / b))
    result = {
        "target_uncorrected": args.target,
        "marginal_scale": scale,
        "sigma_minus_mom": scale * base_state.sigma_plus_mom,
        "model": {"A": float(a), "B": float(b)},
        "points": rows,
        "frames": args.frames,
        "base_config_text": base.to_text(),
        "base_config_sha256": hashlib.sha256(base.to_text().encode()).hexdigest(),
        "tool_version": __version__,
    }
    with open(args.out, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"marginal_scale = {scale:.4f} (sigma_minus_mom = {result['sigma_minus_mom']:.2f} hbar/mm) "
          f"-> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
