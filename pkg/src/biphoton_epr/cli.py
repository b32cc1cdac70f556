"""Command-line interface.

    biphoton-epr simulate CONFIG OUT.bpfs [--basis B] [--frames N] [--seed S]
    biphoton-epr project STACK.bpfs --kind {minus,sum,corrected-sum} --out PREFIX
    biphoton-epr fit PROJ.bprj --config CONFIG
    biphoton-epr certify MINUS.bprj SUM.bprj CONFIG [--out PREFIX]
    biphoton-epr sweep CONFIG --waists 60,80,140,160 --crystals 5,10 --out-dir DIR
    biphoton-epr oracle STACK.bpfs --kind {minus,sum,corrected-sum}
    biphoton-epr replay MANIFEST.json --out-dir DIR

Every data-producing command writes ``<output>.manifest.json`` holding the
command, its arguments, the resolved config text, the seed and SHA-256
hashes of inputs and outputs; ``replay`` re-runs it and compares hashes.
The thread count (``--threads`` or $BIPHOTON_EPR_THREADS) never changes
outputs. Scientific verdicts do not set the exit status; operational
failures do.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .certify import epr_certify, reports_csv
from .config import ConfigKeyError, RunConfig
from .fit import FitError
from .formats import FormatError, read_bpfs, read_projection, write_bpfs, write_projection, write_projection_csv
from .jpd import ProjectionError
from .oracle import brute_force_projection
from .pipeline import KIND_ALIASES, fit_projection, project_stack, simulate, sweep
from .plots import product_vs_waist, projection_heatmap

log = logging.getLogger("biphoton_epr")

THREADS_ENV = "BIPHOTON_EPR_THREADS"
ORACLE_TOL = {"minus_position": 1e-9, "sum_momentum": 1e-9, "corrected_sum_momentum": 0.02}


class CliError(RuntimeError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(command: str, args: dict, outputs: list, inputs: list = (),
                    config_text: str | None = None, seed=None) -> Path:
    manifest = {
        "command": command,
        "args": args,
        "config_text": config_text,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "tool_version": __version__,
    }
    path = Path(f"{outputs[0]}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    return int(os.environ.get(THREADS_ENV, "1"))


def _load_config(path) -> RunConfig:
    try:
        return RunConfig.load(path)
    except ConfigKeyError as exc:
        raise CliError(f"{path}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise CliError(f"{path}: invalid config: {exc}") from exc


def _fmt(value: float, err: float) -> str:
    return f"{value:.4g} +- {err:.2g}"


# -- commands ---------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    stack = simulate(config, basis=args.basis, n_frames=args.frames, seed=args.seed,
                     threads=_threads(args))
    write_bpfs(args.out, stack)
    effective = RunConfig.from_text(stack.config_text)
    _write_manifest("simulate", {"config": str(args.config), "out": str(args.out),
                                 "basis": stack.basis_tag, "frames": stack.n_frames,
                                 "seed": stack.seed},
                    [args.out], [args.config], stack.config_text, stack.seed)
    events = stack.events_per_frame()
    print(f"wrote {args.out}: {stack.n_frames} frames, basis={stack.basis_tag}, "
          f"seed={stack.seed}")
    print(f"mean events/frame = {events.mean():.4f}, dropped photon fraction = "
          f"{stack.dropped_fraction:.5f}")
    print(f"state: {effective.state()}")
    return 0


def cmd_project(args) -> int:
    stack = read_bpfs(args.stack)
    if stack.config_text is None:
        raise CliError(f"{args.stack}: no embedded config; cannot read wavelengths")
    config = RunConfig.from_text(stack.config_text)
    if args.method:
        config = config.replace(run=dataclasses.replace(config.run, method=args.method))
    if args.accidentals:
        config = config.replace(run=dataclasses.replace(config.run, accidentals=args.accidentals))
    kind = KIND_ALIASES[args.kind]
    projection = project_stack(stack, kind, config, _threads(args))
    prefix = Path(args.out)
    outs = [prefix.with_suffix(".bprj"), prefix.with_suffix(".csv"), prefix.with_suffix(".svg")]
    write_projection(outs[0], projection)
    write_projection_csv(outs[1], projection)
    projection_heatmap(projection, outs[2])
    _write_manifest("project", {"stack": str(args.stack), "kind": args.kind, "out": str(args.out),
                                "method": args.method, "accidentals": args.accidentals},
                    outs, [args.stack], stack.config_text, stack.seed)
    print(f"wrote {outs[0]} ({kind}, grid {projection.shape[0]}x{projection.shape[1]}, "
          f"{projection.n_pairs} frame pairs)")
    return 0


def cmd_fit(args) -> int:
    projection = read_projection(args.projection)
    config = _load_config(args.config)
    fit = fit_projection(projection, config)
    print(f"{projection.axis_kind}: width = {_fmt(fit.width, fit.width_uncertainty)} {fit.units}"
          f" (covariance {fit.width_uncertainty_fit:.2g}, goodness {fit.goodness:.3g})")
    return 0


def cmd_certify(args) -> int:
    minus = read_projection(args.minus)
    plain = read_projection(args.sum)
    if minus.axis_kind != "minus_position":
        raise CliError(f"{args.minus} holds a {minus.axis_kind} projection; the first input "
                       f"must be a minus_position projection")
    if plain.axis_kind not in ("sum_momentum", "corrected_sum_momentum"):
        raise CliError(f"{args.sum} holds a {plain.axis_kind} projection; the second input "
                       f"must be a sum or corrected-sum momentum projection")
    config = _load_config(args.config)
    fr = fit_projection(minus, config)
    fp = fit_projection(plain, config)
    label = "corrected" if plain.axis_kind == "corrected_sum_momentum" else "uncorrected"
    report = epr_certify(fr, fp, config.run.significance_sigma, label=label,
                         pump_waist=config.optics.pump_waist,
                         crystal_length=config.optics.crystal_length,
                         provenance={"config_hash": config.config_hash().hex(),
                                     "minus_hash": minus.config_hash.hex()[:16],
                                     "sum_hash": plain.config_hash.hex()[:16]})
    text = report.to_text()
    print(text, end="")
    if args.out:
        prefix = Path(args.out)
        outs = [prefix.with_suffix(".txt"), prefix.with_suffix(".csv")]
        outs[0].write_text(text)
        outs[1].write_text(reports_csv([report]))
        _write_manifest("certify", {"minus": str(args.minus), "sum": str(args.sum),
                                    "config": str(args.config), "out": str(args.out)},
                        outs, [args.minus, args.sum, args.config], config.to_text())
    return 0


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    if args.frames:
        config = config.replace(run=dataclasses.replace(config.run, n_frames=args.frames))
    waists, crystals = _floats(args.waists), _floats(args.crystals)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(point):
        if point.ok:
            c, u = point.reports["corrected"], point.reports["uncorrected"]
            print(f"L={point.crystal_length:g} mm w={point.pump_waist:g} um: "
                  f"product corrected {_fmt(c.product, c.product_uncertainty)}, "
                  f"uncorrected {_fmt(u.product, u.product_uncertainty)} hbar")
        else:
            print(f"L={point.crystal_length:g} mm w={point.pump_waist:g} um: FAILED {point.error}")

    result = sweep(config, waists, crystals, threads=_threads(args), progress=progress)
    if not any(p.ok for p in result.points):
        raise CliError("every sweep point failed")

    table = out / "table.csv"
    table.write_text(reports_csv(result.reports()))
    failures = out / "failures.txt"
    failures.write_text("".join(f"{p.crystal_length:g} mm, {p.pump_waist:g} um: {p.error}\n"
                                for p in result.points if not p.ok))
    scaling = out / "scaling.txt"
    lines = ["label,crystal_length_mm,a_um_hbar,a_unc_um_hbar,chi2,n_points"]
    for (label, length), fit in sorted(result.scaling.items()):
        lines.append(f"{label},{length:g},{fit.a:.6g},{fit.a_uncertainty:.3g},{fit.chi2:.4g},{fit.n_points}")
    for label, (r, dr, num, den) in sorted(result.ratio.items()):
        lines.append(f"# {label}: a({num:g} mm)/a({den:g} mm) = {r:.4f} +- {dr:.4f}"
                     f" (sqrt({num:g}/{den:g}) = {np.sqrt(num / den):.4f})")
        larger = num if r > 1 else den
        lines.append(f"# {label}: larger coefficient belongs to the {larger:g} mm crystal")
    scaling.write_text("\n".join(lines) + "\n")
    figure = out / "product_vs_waist.svg"
    product_vs_waist(result.points, result.scaling, figure)
    print(scaling.read_text(), end="")
    _write_manifest("sweep", {"config": str(args.config), "waists": args.waists,
                              "crystals": args.crystals, "out_dir": str(args.out_dir),
                              "frames": args.frames},
                    [table, scaling, figure, failures], [args.config], config.to_text(),
                    config.run.seed)
    return 0


def cmd_oracle(args) -> int:
    stack = read_bpfs(args.stack)
    config = RunConfig.from_text(stack.config_text) if stack.config_text else None
    kind = KIND_ALIASES[args.kind]
    lambdas = None
    if config is not None:
        lambdas = (config.optics.lambda_signal, config.optics.lambda_idler)
    try:
        reference = brute_force_projection(stack, kind, lambdas)
    except ProjectionError as exc:
        raise CliError(str(exc)) from exc
    fast = project_stack(stack, kind, config, _threads(args)) if config else None
    diff = fast.values - reference.values
    peak = float(np.abs(reference.values).max())
    max_abs = float(np.abs(diff).max())
    rel = max_abs / peak if peak else max_abs
    rms = float(np.sqrt(np.mean(diff ** 2))) / peak if peak else 0.0
    tol = args.tolerance if args.tolerance is not None else ORACLE_TOL[kind]
    metric = rms if kind == "corrected_sum_momentum" else rel
    ok = metric <= tol
    print(f"{kind}: max |diff| = {max_abs:.3e}, max relative = {rel:.3e}, "
          f"rms/peak = {rms:.3e}, tolerance = {tol:g} -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recorded = manifest["args"]
    ns = argparse.Namespace(**recorded, threads=args.threads)
    tmp = None
    if "config" in recorded and manifest.get("config_text") is not None:
        tmp = tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False)
        tmp.write(manifest["config_text"])
        tmp.close()
        ns.config = tmp.name
    for key in ("out",):
        if key in recorded:
            setattr(ns, key, str(out / Path(recorded[key]).name))
    if "out_dir" in recorded:
        ns.out_dir = str(out)
    try:
        COMMANDS[manifest["command"]](ns)
    finally:
        if tmp is not None:
            os.unlink(tmp.name)
    for path, digest in manifest["inputs"].items():
        if Path(path).exists() and _sha256(path) != digest and path != manifest["args"].get("config"):
            print(f"warning: input {path} changed since the manifest was written")
    mismatches = [str(path) for path, digest in manifest["outputs"].items()
                  if not (out / Path(path).name).exists()
                  or _sha256(out / Path(path).name) != digest]
    if mismatches:
        print(f"replay MISMATCH for: {', '.join(mismatches)}")
        return 1
    print(f"replay reproduced {len(manifest['outputs'])} output(s) bit-exactly")
    return 0


COMMANDS = {"simulate": cmd_simulate, "project": cmd_project, "fit": cmd_fit,
            "certify": cmd_certify, "sweep": cmd_sweep, "oracle": cmd_oracle,
            "replay": cmd_replay}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biphoton-epr", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a frame stack")
    p.add_argument("config")
    p.add_argument("out")
    p.add_argument("--basis", choices=["position", "momentum"])
    p.add_argument("--frames", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("project", help="estimate a JPD projection")
    p.add_argument("stack")
    p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["auto", "fft", "sparse"])
    p.add_argument("--accidentals", choices=["consecutive", "product_of_means"])
    p.add_argument("--threads", type=int)

    p = sub.add_parser("fit", help="fit the peak width of a projection")
    p.add_argument("projection")
    p.add_argument("--config", required=True)

    p = sub.add_parser("certify", help="EPR product from a minus and a sum projection")
    p.add_argument("minus")
    p.add_argument("sum")
    p.add_argument("config")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="pump waist x crystal length grid")
    p.add_argument("config")
    p.add_argument("--waists", default="60,80,140,160")
    p.add_argument("--crystals", default="5,10")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("oracle", help="compare the fast estimator with brute force")
    p.add_argument("stack")
    p.add_argument("--kind", required=True, choices=sorted(KIND_ALIASES))
    p.add_argument("--tolerance", type=float)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threads", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, FormatError, ProjectionError, FitError, ConfigKeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
