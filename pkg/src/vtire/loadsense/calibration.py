"""Deformation-force curve, linear calibration, weight estimation and overload detection."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionError, FitError
from ..synth import FrameGeometry
from .solver import FemModel, solve_contact

G_ACCEL = 9.81  # N per kg


@dataclass(frozen=True)
class LoadCurve:
    forces: tuple  # N, ascending
    offsets: tuple  # mm

    def __len__(self):
        return len(self.forces)

    def kg(self):
        return np.asarray(self.forces, dtype=np.float64) / G_ACCEL

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["force_N", "offset_mm"])
            for f, o in zip(self.forces, self.offsets):
                w.writerow([repr(float(f)), repr(float(o))])
        return path

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(float(r["force_N"]) for r in rows), tuple(float(r["offset_mm"]) for r in rows))


def sweep_curve(model: FemModel, forces) -> LoadCurve:
    """One contact solve per force (ascending, in N)."""
    forces = [float(f) for f in forces]
    if any(b < a for a, b in zip(forces, forces[1:])):
        raise ValueError("forces must be sorted ascending")
    offsets = [solve_contact(model, f).offset for f in forces]
    return LoadCurve(tuple(forces), tuple(offsets))


@dataclass(frozen=True)
class LoadCalibration:
    slope: float  # kg per mm
    intercept: float  # kg
    valid_range: tuple  # (0, offset_max) mm
    threshold: float  # overload residual threshold, mm
    r2: float

    def __post_init__(self):
        if not self.slope > 0:
            raise FitError(f"calibration slope must be positive, got {self.slope}")
        if not 0 <= self.r2 <= 1:
            raise FitError(f"r2 outside [0, 1]: {self.r2}")

    @property
    def max_kg(self):
        return self.slope * self.valid_range[1] + self.intercept

    def to_dict(self):
        d = asdict(self)
        d["valid_range"] = list(self.valid_range)
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        return path

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["slope"], d["intercept"], tuple(d["valid_range"]), d["threshold"], d["r2"])


def fit_calibration(curve: LoadCurve, kg_range=(0.0, 35.0)) -> LoadCalibration:
    """Ordinary least squares ``kg = slope * offset + intercept`` over the points
    whose load lies in ``kg_range``.

    The overload threshold is three times the largest in-range residual,
    expressed as an offset (residual in kg divided by the slope).
    """
    kg = curve.kg()
    off = np.asarray(curve.offsets, dtype=np.float64)
    lo, hi = kg_range
    sel = (kg >= lo - 1e-12) & (kg <= hi + 1e-12)
    if sel.sum() < 3:
        raise FitError(f"need at least 3 curve points in {kg_range} kg, got {int(sel.sum())}")
    x, y = off[sel], kg[sel]
    if np.ptp(x) == 0:
        raise FitError("all offsets are equal; the fit is rank deficient")
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    if slope <= 0:
        raise FitError("offset does not grow with load")
    slope, intercept = float(slope), float(intercept)
    threshold = 3.0 * float(np.abs(resid).max()) / slope
    return LoadCalibration(float(slope), float(intercept), (0.0, float(x.max())), threshold,
                           float(min(max(r2, 0.0), 1.0)))


def estimate_weight(offset_mm, cal: LoadCalibration):
    if offset_mm < 0:
        raise ValueError("offset must be non-negative")
    return {"kg": cal.slope * offset_mm + cal.intercept,
            "overload": bool(offset_mm > cal.valid_range[1] + cal.threshold)}


def calibration_forces(max_kg=35.0, n=15, overload_kg=()):
    """Sweep forces (N) covering ``0..max_kg`` evenly plus optional extra loads."""
    kg = np.concatenate([np.linspace(0.0, max_kg, n), np.asarray(overload_kg, dtype=np.float64)])
    return sorted(set((kg * G_ACCEL).tolist()))


def load_protocol(model: FemModel | None, cal: LoadCalibration, weights_kg=None, n_measurements=5,
                  noise_frac=0.01, seed=0, truth="fem"):
    """Noisy-measurement weighing experiment.

    The true offset of each target weight comes from a contact solve
    (``truth="fem"``) or from inverting the calibration line (``truth="fit"``,
    which isolates the effect of measurement noise). Every measurement adds
    Gaussian offset noise with sigma ``noise_frac`` times the calibrated
    full-scale offset and is converted back to kg.
    """
    if truth not in ("fem", "fit"):
        raise ValueError(f"truth must be 'fem' or 'fit', got {truth!r}")
    weights = np.linspace(3.5, 35.0, 10) if weights_kg is None else np.asarray(weights_kg, float)
    rng = np.random.default_rng(seed)
    sigma = noise_frac * cal.valid_range[1]
    rows = []
    for w in weights:
        if truth == "fem":
            true_off = solve_contact(model, w * G_ACCEL).offset
        else:
            true_off = (w - cal.intercept) / cal.slope
        for k in range(n_measurements):
            meas = max(0.0, true_off + rng.normal(0.0, sigma))
            est = estimate_weight(meas, cal)
            rows.append({"weight_kg": float(w), "trial": k, "true_offset_mm": true_off,
                         "measured_offset_mm": meas, "estimate_kg": est["kg"],
                         "abs_error_kg": abs(est["kg"] - w), "overload": est["overload"]})
    mae = float(np.mean([r["abs_error_kg"] for r in rows])) if rows else float("nan")
    return {"mae_kg": mae, "truth": truth, "noise_sigma_mm": sigma, "n_weights": len(weights),
            "n_measurements": n_measurements, "overload_count": sum(r["overload"] for r in rows),
            "measurements": rows}


def offset_from_depthmap(depth, baseline, geometry: FrameGeometry = FrameGeometry(),
                         depth_scale=1.0, percentile=98.0):
    """Robust maximum indentation (mm) of a depth image against the unloaded baseline.

    ``depth`` and ``baseline`` are crop-sized arrays aligned with the tactile
    disk; ``depth_scale`` converts depth units to mm (1.0 when they already are).
    """
    depth = np.asarray(depth, dtype=np.float64)
    baseline = np.broadcast_to(np.asarray(baseline, dtype=np.float64), depth.shape)
    n = geometry.crop_size
    if depth.shape != (n, n):
        raise DimensionError(f"depth image {depth.shape} does not match crop {n}x{n}")
    diff = (baseline - depth)[geometry.disk_mask()] * depth_scale
    return max(0.0, float(np.percentile(diff, percentile)))
