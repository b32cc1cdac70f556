"""Run the waist x crystal grid end to end and compare with reference widths.

Two modes:

``model``      correlation widths from derive_state (c_p, c_r), marginal held
               fixed, exactly what ``biphoton-epr sweep`` does.
``reference``  each grid point is injected with the measured reference
               (delta_r, delta_p) pair listed in REFERENCE below, so the
               recovered products can be compared one to one.

    python scripts/reproduce_grid.py --mode reference --frames 100000 --out-dir out/grid
"""
from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from biphoton_epr.certify import epr_certify, fit_scaling_law, ratio_with_uncertainty, reports_csv
from biphoton_epr.config import RunConfig
from biphoton_epr.pipeline import measure_point, sweep
from biphoton_epr.plots import product_vs_waist

# (crystal mm, waist um) -> ((delta_r, err) um, (delta_p, err) hbar/mm, (product, err) hbar)
REFERENCE = {
    (10.0, 60.0): ((13.9, 0.6), (23.8, 0.4), (0.33, 0.03)),
    (10.0, 80.0): ((13.9, 0.2), (19.6, 0.4), (0.27, 0.02)),
    (10.0, 140.0): ((13.9, 0.2), (11.3, 0.4), (0.16, 0.01)),
    (10.0, 160.0): ((14.3, 0.4), (11.3, 0.4), (0.16, 0.01)),
    (5.0, 60.0): ((7.5, 0.6), (24.6, 0.4), (0.18, 0.02)),
    (5.0, 80.0): ((8.0, 0.4), (21.3, 0.2), (0.17, 0.01)),
    (5.0, 140.0): ((9.6, 0.3), (11.7, 0.2), (0.11, 0.01)),
    (5.0, 160.0): ((9.1, 0.5), (10.4, 0.6), (0.09, 0.01)),
}


def reference_scaling():
    """a_L fitted directly to the reference products."""
    out = {}
    for length in (5.0, 10.0):
        pts = [(w, prod[0], prod[1]) for (L, w), (_, _, prod) in REFERENCE.items() if L == length]
        out[length] = fit_scaling_law(pts)
    return out


def run_reference(config: RunConfig, threads: int, progress):
    points = []
    for i, ((length, waist), (dr, dp, _)) in enumerate(sorted(REFERENCE.items())):
        optics = dataclasses.replace(config.optics, crystal_length=length, pump_waist=waist)
        state = dataclasses.replace(config.replace(optics=optics).state(),
                                    sigma_minus_pos=dr[0], sigma_plus_mom=dp[0])
        point = measure_point(config.replace(optics=optics).with_state(state), threads,
                              seed_offset=2 * i)
        progress(point)
        points.append(point)
    scaling = {}
    for length in (5.0, 10.0):
        data = [(p.pump_waist, p.reports["corrected"].product, p.reports["corrected"].product_uncertainty)
                for p in points if p.ok and p.crystal_length == length]
        if len(data) >= 2:
            scaling[("corrected", length)] = fit_scaling_law(data)
    return points, scaling


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--mode", choices=["model", "reference"], default="reference")
    ap.add_argument("--config", default="configs/sweep.toml")
    ap.add_argument("--frames", type=int, default=50000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out-dir", default="out/grid")
    args = ap.parse_args(argv)

    config = RunConfig.load(args.config)
    config = config.replace(run=dataclasses.replace(config.run, n_frames=args.frames))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(p):
        if not p.ok:
            print(f"{p.crystal_length:5g} {p.pump_waist:6g}  FAILED {p.error}")
            return
        c = p.reports["corrected"]
        ref = REFERENCE.get((p.crystal_length, p.pump_waist))
        ref_txt = f"  reference {ref[2][0]:.2f} +- {ref[2][1]:.2f}" if ref else ""
        print(f"{p.crystal_length:5g} {p.pump_waist:6g}  dr {c.delta_r:6.2f} +- {c.delta_r_uncertainty:.2f}"
              f"  dp {c.delta_p:6.2f} +- {c.delta_p_uncertainty:.2f}"
              f"  product {c.product:.3f} +- {c.product_uncertainty:.3f}{ref_txt}")

    print("   L  waist  (corrected)")
    if args.mode == "model":
        result = sweep(config, [60, 80, 140, 160], [5, 10], threads=args.threads, progress=progress)
        points, scaling = result.points, result.scaling
    else:
        points, scaling = run_reference(config, args.threads, progress)

    reports = [r for p in points for r in p.reports.values()]
    (out / "grid.csv").write_text(reports_csv(reports))
    product_vs_waist(points, scaling, out / "product_vs_waist.svg")

    print("\nscaling law Delta_r Delta_p = a_L / w_p (a in um hbar)")
    ref = reference_scaling()
    for length in (5.0, 10.0):
        fit = scaling.get(("corrected", length))
        sim = f"{fit.a:.2f} +- {fit.a_uncertainty:.2f}" if fit else "n/a"
        print(f"  L = {length:g} mm: simulated {sim}, from reference products "
              f"{ref[length].a:.2f} +- {ref[length].a_uncertainty:.2f}")
    r, dr = ratio_with_uncertainty(ref[10.0], ref[5.0])
    print(f"  reference a(10 mm)/a(5 mm) = {r:.3f} +- {dr:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
