"""Fitting the data-scaling curve L(x) = a / ln(x - b) + c.

The shift b enters the model nonlinearly, but for any fixed b the best
(a, c) is a linear least-squares solve. Fitting therefore profiles the
problem down to a one-dimensional search over b, run with multi-start
simplex descent so a bad start cannot trap the fit in a local minimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

_PENALTY = 1e30


@dataclass(frozen=True)
class ScalingLawFit:
    a: float
    b: float
    c: float
    rss: float
    n_points: int

    def to_json(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "rss": self.rss,
            "n_points": self.n_points,
        }


def _profile(b: float, x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Best (a, c, rss) for a fixed shift b, by linear least squares."""
    arg = x - b
    if np.any(arg <= 0) or np.any(np.abs(np.log(arg)) < 1e-12):
        return 0.0, 0.0, _PENALTY
    z = 1.0 / np.log(arg)
    design = np.column_stack([z, np.ones_like(z)])
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(coef[0]), float(coef[1]), float(resid @ resid)


def fit_scaling_law(
    points: Sequence[tuple[float, float]],
    restarts: int = 50,
    seed: int = 0,
) -> ScalingLawFit:
    """Least-squares fit of L(x) = a / ln(x - b) + c.

    Needs at least four distinct-x points with x > 0. Deterministic for a
    fixed seed; among restarts reaching the same residual, the earliest
    start wins.
    """
    if len(points) < 4:
        raise ValueError(f"need at least 4 points, got {len(points)}")
    x = np.asarray([p[0] for p in points], dtype=np.float64)
    y = np.asarray([p[1] for p in points], dtype=np.float64)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("points must be finite")
    if np.any(x <= 0):
        raise ValueError("x values must be positive")
    if len(set(x.tolist())) != len(x):
        raise ValueError("x values must be distinct")

    min_x = float(x.min())
    span = float(x.max() - x.min())
    lo = min_x - 5.0 * span - 1.0
    hi = min_x - 1e-3 * max(span, 1.0)

    def objective(vec: np.ndarray) -> float:
        b = float(vec[0])
        if not lo <= b <= min_x - 1e-9:
            return _PENALTY
        return _profile(b, x, y)[2]

    rng = np.random.default_rng(seed)
    grid = np.linspace(lo, hi, restarts)
    spacing = (hi - lo) / max(restarts - 1, 1)
    starts = grid + rng.uniform(-0.25, 0.25, size=restarts) * spacing

    best_b = None
    best_rss = math.inf
    for b0 in starts:
        result = minimize(
            objective,
            np.array([b0]),
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 500},
        )
        rss = float(result.fun)
        if rss < best_rss:
            best_rss = rss
            best_b = float(result.x[0])
    if best_b is None or best_rss >= _PENALTY:
        raise ValueError("fit failed: no admissible shift parameter found")
    a, c, rss = _profile(best_b, x, y)
    return ScalingLawFit(a=a, b=best_b, c=c, rss=rss, n_points=len(points))


def predict(fit: ScalingLawFit, x: float) -> float:
    """Evaluate the fitted law at x (millions of samples)."""
    if x <= fit.b + 1.0:
        raise ValueError(
            f"x={x} is at or below b+1={fit.b + 1.0}: the log argument "
            "must exceed 1"
        )
    return fit.a / math.log(x - fit.b) + fit.c


def read_points_csv(path) -> list[tuple[float, float]]:
    """points.csv with header x,y — the fit-scaling CLI input."""
    import csv

    points = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected CSV header with columns x,y")
        for row in reader:
            points.append((float(row["x"]), float(row["y"])))
    return points
