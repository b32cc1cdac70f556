"""EPR certification from fitted correlation widths, and the pump-waist scaling law."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fit import FitResult
from .optics import UM_TO_MM

EPR_BOUND = 0.5  # hbar


@dataclass(frozen=True)
class EprReport:
    delta_r: float                 # um
    delta_r_uncertainty: float
    delta_p: float                 # hbar/mm
    delta_p_uncertainty: float
    product: float                 # hbar
    product_uncertainty: float
    violated: bool
    significance: float            # sigma below the bound
    threshold_sigma: float = 3.0
    label: str = "corrected"
    pump_waist: float | None = None      # um
    crystal_length: float | None = None  # mm
    provenance: dict = field(default_factory=dict)

    CSV_FIELDS = ("label", "crystal_length_mm", "pump_waist_um", "delta_r_um", "delta_r_unc_um",
                  "delta_p_hbar_per_mm", "delta_p_unc_hbar_per_mm", "product_hbar",
                  "product_unc_hbar", "significance_sigma", "violated", "config_hash",
                  "seed", "n_frames")

    def csv_row(self) -> dict:
        prov = self.provenance
        return {
            "label": self.label,
            "crystal_length_mm": "" if self.crystal_length is None else f"{self.crystal_length:g}",
            "pump_waist_um": "" if self.pump_waist is None else f"{self.pump_waist:g}",
            "delta_r_um": f"{self.delta_r:.6g}",
            "delta_r_unc_um": f"{self.delta_r_uncertainty:.6g}",
            "delta_p_hbar_per_mm": f"{self.delta_p:.6g}",
            "delta_p_unc_hbar_per_mm": f"{self.delta_p_uncertainty:.6g}",
            "product_hbar": f"{self.product:.6g}",
            "product_unc_hbar": f"{self.product_uncertainty:.6g}",
            "significance_sigma": f"{self.significance:.6g}",
            "violated": str(self.violated).lower(),
            "config_hash": prov.get("config_hash", ""),
            "seed": prov.get("seed", ""),
            "n_frames": prov.get("n_frames", ""),
        }

    def to_text(self) -> str:
        verdict = "VIOLATED (entanglement certified)" if self.violated else "not violated"
        lines = [
            f"EPR report [{self.label}]",
            f"  crystal length   : {self.crystal_length:g} mm" if self.crystal_length else None,
            f"  pump waist       : {self.pump_waist:g} um" if self.pump_waist else None,
            f"  delta_r          : {self.delta_r:.3f} +- {self.delta_r_uncertainty:.3f} um",
            f"  delta_p          : {self.delta_p:.3f} +- {self.delta_p_uncertainty:.3f} hbar/mm",
            f"  product          : {self.product:.4f} +- {self.product_uncertainty:.4f} hbar"
            f"  (bound {EPR_BOUND} hbar)",
            f"  significance     : {self.significance:.2f} sigma (threshold {self.threshold_sigma:g})",
            f"  criterion        : {verdict}",
        ]
        for key in sorted(self.provenance):
            lines.append(f"  {key:<17}: {self.provenance[key]}")
        return "\n".join(line for line in lines if line is not None) + "\n"


def _value_and_error(item) -> tuple[float, float]:
    if isinstance(item, FitResult):
        return item.width, item.width_uncertainty
    value, error = item
    return float(value), float(error)


def epr_certify(delta_r, delta_p, threshold_sigma: float = 3.0, *, label: str = "corrected",
                pump_waist: float | None = None, crystal_length: float | None = None,
                provenance: dict | None = None) -> EprReport:
    """Product of the correlation widths against the hbar/2 bound.

    ``delta_r`` (um) and ``delta_p`` (hbar/mm) are crystal-plane FitResults or
    (value, uncertainty) pairs. The uncertainty is first-order propagation.
    """
    r, sr = _value_and_error(delta_r)
    p, sp = _value_and_error(delta_p)
    product = r * p * UM_TO_MM
    unc = math.hypot(p * sr, r * sp) * UM_TO_MM
    gap = EPR_BOUND - product
    if unc > 0:
        significance = gap / unc
    else:
        significance = math.copysign(math.inf, gap) if gap != 0 else 0.0
    violated = product < EPR_BOUND and significance > threshold_sigma
    return EprReport(delta_r=r, delta_r_uncertainty=sr, delta_p=p, delta_p_uncertainty=sp,
                     product=product, product_uncertainty=unc, violated=bool(violated),
                     significance=significance, threshold_sigma=threshold_sigma, label=label,
                     pump_waist=pump_waist, crystal_length=crystal_length,
                     provenance=dict(provenance or {}))


def monte_carlo_product_uncertainty(delta_r, delta_p, n: int = 100_000, seed: int = 0) -> float:
    """Standard deviation of the product under Gaussian perturbation of both widths."""
    r, sr = _value_and_error(delta_r)
    p, sp = _value_and_error(delta_p)
    rng = np.random.default_rng(seed)
    samples = rng.normal(r, sr, n) * rng.normal(p, sp, n) * UM_TO_MM
    return float(np.std(samples, ddof=1))


@dataclass(frozen=True)
class ScalingFit:
    """product = a / w_p, with a in um * hbar."""

    a: float
    a_uncertainty: float
    chi2: float
    n_points: int
    weighted: bool


def fit_scaling_law(points) -> ScalingFit:
    """Weighted least squares of product = a / w_p.

    ``points`` holds (pump_waist_um, product_hbar[, uncertainty_hbar]) items.
    Without (or with any zero) uncertainties the fit is unweighted and the
    standard error comes from the residual scatter.
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 2:
        raise ValueError("scaling-law fit needs at least 2 points")
    waists = np.array([p[0] for p in pts], dtype=float)
    if len(np.unique(waists)) < 2:
        raise ValueError("scaling-law fit needs at least 2 distinct pump waists")
    if np.any(waists <= 0):
        raise ValueError("pump waists must be positive")
    y = np.array([p[1] for p in pts], dtype=float)
    errs = [p[2] if len(p) > 2 else None for p in pts]
    x = 1.0 / waists
    weighted = all(e is not None and e > 0 for e in errs)
    if weighted:
        w = 1.0 / np.array(errs, dtype=float) ** 2
        sxx = float(np.sum(w * x * x))
        a = float(np.sum(w * x * y)) / sxx
        se = math.sqrt(1.0 / sxx)
        chi2 = float(np.sum(w * (y - a * x) ** 2))
    else:
        sxx = float(np.sum(x * x))
        a = float(np.sum(x * y)) / sxx
        resid = y - a * x
        chi2 = float(resid @ resid)
        se = math.sqrt(chi2 / (len(y) - 1) / sxx)
    return ScalingFit(a=a, a_uncertainty=se, chi2=chi2, n_points=len(y), weighted=weighted)


def ratio_with_uncertainty(num: ScalingFit, den: ScalingFit) -> tuple[float, float]:
    ratio = num.a / den.a
    rel = math.hypot(num.a_uncertainty / num.a, den.a_uncertainty / den.a)
    return ratio, abs(ratio) * rel


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=EprReport.CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        writer.writerow(report.csv_row())
    return buf.getvalue()


def fit_csv_row(fit: FitResult, kind: str) -> dict:
    row = {k: v for k, v in asdict(fit).items() if k not in ("center", "window")}
    row["kind"] = kind
    row["center_y"], row["center_x"] = fit.center
    return row
