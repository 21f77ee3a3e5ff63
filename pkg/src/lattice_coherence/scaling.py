"""Singularity order of the density at theta = 0 and the resulting size scaling.

If p_hat(theta) behaves like 1 / |theta|^r near the origin, the per-site
variance on Z_L^d grows like L^(r - d) when d < r, like log L when d = r
and stays bounded when d > r.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .models import ModelSpec
from .spectral import VarianceReport, density_batch, per_site_variance

#: |d - r| below this counts as the logarithmic boundary case
LOG_BAND = 0.1
#: minimum log10 span of N for an exponent fit; 0.9 admits a factor-8 sweep
MIN_LOG10_SPAN = 0.9


@dataclass(frozen=True)
class SingularityEstimate:
    r: float
    residual: float
    cross_ray_r: float | None = None


@dataclass(frozen=True)
class ScalingLaw:
    """Predicted growth of V_N: ``"power"`` (L^(r-d)), ``"log"`` or ``"bounded"``."""

    kind: str
    exponent_L: float
    d: int

    @property
    def exponent_N(self) -> float:
        return self.exponent_L / self.d

    def __str__(self) -> str:
        if self.kind == "power":
            return f"L^{self.exponent_L:.3g}"
        return "log L" if self.kind == "log" else "bounded"


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    half_width: float
    intercept: float
    power_rss: float
    log_rss: float

    @property
    def prefers_log(self) -> bool:
        return self.log_rss < self.power_rss


@dataclass
class ScalingFit:
    model_id: str
    d: int
    r_estimate: float
    beta: float
    predicted_law: ScalingLaw
    empirical: ExponentFit
    samples: list[tuple[int, float]] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "model_id": self.model_id,
            "d": self.d,
            "r_hat": self.r_estimate,
            "beta": self.beta,
            "predicted": str(self.predicted_law),
            "slope": self.empirical.slope,
            "half_width": self.empirical.half_width,
        }


FIT_FIELDS = ("model_id", "d", "r_hat", "beta", "predicted", "slope", "half_width")


def _log_slope(t: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    res = stats.linregress(np.log(t), np.log(p))
    fitted = res.intercept + res.slope * np.log(t)
    return -res.slope, float(np.sqrt(np.mean((np.log(p) - fitted) ** 2)))


def estimate_singularity_order(
    model: ModelSpec, theta_min: float = 1e-3, theta_max: float = 1e-1, samples: int = 32
) -> SingularityEstimate:
    """Negated log-log slope of the density along the first coordinate ray."""
    if not 0 < theta_min < theta_max <= np.pi / 4:
        raise ValueError("need 0 < theta_min < theta_max <= pi/4")
    if samples < 3:
        raise ValueError("need at least 3 samples")
    d = model.dimension
    t = np.geomspace(theta_min, theta_max, samples)
    ray = np.zeros((samples, d))
    ray[:, 0] = t
    r, resid = _log_slope(t, density_batch(model, ray))
    cross = None
    if d > 1:
        diag = np.repeat(t[:, None] / math.sqrt(d), d, axis=1)
        cross, _ = _log_slope(t, density_batch(model, diag))
    return SingularityEstimate(float(r), resid, cross)


def predicted_scaling(r: float, d: int) -> ScalingLaw:
    if r < 0:
        raise ValueError(f"singularity order must be non-negative, got {r}")
    if abs(d - r) <= LOG_BAND:
        return ScalingLaw("log", 0.0, d)
    if d < r:
        return ScalingLaw("power", r - d, d)
    return ScalingLaw("bounded", 0.0, d)


def _dimension_of(report: VarianceReport) -> int:
    if report.L == 1:
        raise ValueError("cannot infer the dimension from L = 1")
    return round(math.log(report.N) / math.log(report.L))


def empirical_exponent(reports: Sequence[VarianceReport]) -> ExponentFit:
    """OLS slope of log V_N against log N with a 95% half-width.

    A logarithmic law V_N = alpha log N + c is fitted as well; both residual
    sums are measured on log V_N so they can be compared.
    """
    if len(reports) < 4:
        raise ValueError("need at least 4 reports")
    dims = {_dimension_of(r) for r in reports}
    if len(dims) != 1:
        raise ValueError(f"reports mix lattice dimensions {sorted(dims)}")
    N = np.array([r.N for r in reports], dtype=float)
    V = np.array([r.v_exact for r in reports], dtype=float)
    if math.log10(N.max() / N.min()) < MIN_LOG10_SPAN:
        raise ValueError(f"reports must span about a decade in N (log10 span >= {MIN_LOG10_SPAN})")
    if np.any(V <= 0):
        raise ValueError("variances must be positive")
    x, y = np.log(N), np.log(V)
    res = stats.linregress(x, y)
    n = len(reports)
    half = float(stats.t.ppf(0.975, n - 2) * res.stderr)
    power_rss = float(np.sum((y - res.intercept - res.slope * x) ** 2))
    lin = stats.linregress(x, V)
    fit = lin.intercept + lin.slope * x
    log_rss = float(np.sum((y - np.log(fit)) ** 2)) if np.all(fit > 0) else math.inf
    return ExponentFit(float(res.slope), half, float(res.intercept), power_rss, log_rss)


def variance_sweep(model: ModelSpec, Ls: Sequence[int]) -> list[VarianceReport]:
    return [per_site_variance(model, int(L), bounds=False) for L in sorted(set(Ls))]


def fit_scaling(model: ModelSpec, Ls: Sequence[int], model_id: str = "") -> ScalingFit:
    reports = variance_sweep(model, Ls)
    est = estimate_singularity_order(model)
    return ScalingFit(
        model_id or model.name or model.template,
        model.dimension,
        est.r,
        model.beta,
        predicted_scaling(est.r, model.dimension),
        empirical_exponent(reports),
        [(r.N, r.v_exact) for r in reports],
    )
