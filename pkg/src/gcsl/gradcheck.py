"""Central finite differences over named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ABS_FLOOR = 1e-8


def central_differences(loss, arrays: dict[str, np.ndarray], h: float = 1e-5, skip=None):
    """Numerical gradient of ``loss(arrays) -> float`` for every entry of every array.

    Arrays are perturbed in place and restored. ``skip(name, index)`` may
    exclude entries (e.g. the unused upper triangle of a Cholesky factor);
    skipped entries come back as NaN.
    """
    grads = {}
    for name, a in arrays.items():
        g = np.full(a.shape, np.nan)
        for idx in np.ndindex(a.shape):
            if skip is not None and skip(name, idx):
                continue
            orig = a[idx]
            a[idx] = orig + h
            plus = loss(arrays)
            a[idx] = orig - h
            minus = loss(arrays)
            a[idx] = orig
            g[idx] = (plus - minus) / (2.0 * h)
        grads[name] = g
    return grads


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def upper_triangle(name, idx):
    return name.endswith("precision") and idx[1] > idx[0]


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)  # block name -> worst relative error

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    def lines(self):
        for name, err in self.max_rel_error.items():
            status = "ok" if err < self.tolerance else "FAIL"
            yield f"{name:<16} max_rel_err={err:.3e} {status}"


def compare(analytic: dict, numeric: dict, tolerance: float) -> GradCheckReport:
    report = GradCheckReport(tolerance)
    for name, num in numeric.items():
        mask = ~np.isnan(num)
        err = relative_error(analytic[name][mask], num[mask])
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
    return report
