"""Per-case tumor statistics from annotated cohorts and the fitted model
(size-ratio skew-normal, intensity regression, tumor z-offset histogram)
that drives synthesis.

All fits are closed-form and deterministic: method-of-moments for the
skew-normal, ordinary least squares for the intensity regression. Randomness
enters only through explicitly passed numpy Generators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .volgrid import Mask, Volume, check_geometry

TUMOR_TYPES = ("PDAC", "Cyst")

# |skewness| of the skew-normal family is bounded by ~0.99527; sample skewness
# is clamped below the bound so the moment inversion stays finite
MAX_ABS_SKEWNESS = 0.9952

DEFAULT_NEIGHBORHOOD_RADIUS_MM = 15.0

_SCHEMA = "tumor-stats-model/1"


def lower_median(values) -> float:
    """Median with the lower-of-two-middles convention for even counts."""
    v = np.sort(np.asarray(values), axis=None)
    if v.size == 0:
        raise ValueError("median of empty set")
    return float(v[(v.size - 1) // 2])


@dataclass(frozen=True)
class CaseStats:
    """Summary statistics for one annotated (volume, pancreas, tumor) case."""

    size_ratio: float            # tumor volume / pancreas volume
    neighborhood_median: float   # pancreas HU near the tumor (m)
    tumor_median: float          # HU
    intensity_residual: float    # m - tumor_median
    offset_z: float              # in [-1, 1]

    def __post_init__(self):
        if self.size_ratio <= 0:
            raise ValueError(f"size_ratio must be > 0, got {self.size_ratio}")
        if self.intensity_residual != self.neighborhood_median - self.tumor_median:
            raise ValueError("intensity_residual must equal neighborhood_median - tumor_median")
        if not -1.0 <= self.offset_z <= 1.0:
            raise ValueError(f"offset_z must lie in [-1, 1], got {self.offset_z}")


@dataclass(frozen=True)
class SkewNormalParams:
    """Location/scale/shape parametrization of the skew-normal family."""

    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not (np.isfinite(self.location) and np.isfinite(self.scale) and np.isfinite(self.shape)):
            raise ValueError("skew-normal parameters must be finite")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def delta(self) -> float:
        return self.shape / math.sqrt(1.0 + self.shape**2)

    @property
    def mean(self) -> float:
        return self.location + self.scale * self.delta * math.sqrt(2.0 / math.pi)

    @property
    def variance(self) -> float:
        return self.scale**2 * (1.0 - 2.0 * self.delta**2 / math.pi)


@dataclass(frozen=True)
class RegressionParams:
    """delta_hu = alpha * m + beta + eps, eps ~ Normal(0, sigma_eps^2)."""

    alpha: float
    beta: float
    sigma_eps: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta) and np.isfinite(self.sigma_eps)):
            raise ValueError("regression parameters must be finite")
        if self.sigma_eps < 0:
            raise ValueError(f"sigma_eps must be >= 0, got {self.sigma_eps}")


@dataclass(frozen=True)
class OffsetHistogram:
    """Empirical distribution of tumor-vs-pancreas z offsets over [-1, 1]."""

    bin_edges: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        probs = tuple(float(p) for p in self.probabilities)
        if len(edges) != len(probs) + 1:
            raise ValueError("bin_edges must be one longer than probabilities")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bin_edges must be strictly increasing")
        if any(p < 0 for p in probs):
            raise ValueError("histogram probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"histogram probabilities must sum to 1, got {sum(probs)}")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probabilities", probs)

    def sample(self, rng: np.random.Generator) -> float:
        """Draw one offset: pick a bin by probability, then uniform within it."""
        cum = np.cumsum(self.probabilities)
        i = int(np.searchsorted(cum, rng.random(), side="right"))
        i = min(i, len(self.probabilities) - 1)
        lo, hi = self.bin_edges[i], self.bin_edges[i + 1]
        return lo + (hi - lo) * rng.random()


@dataclass(frozen=True)
class TumorStatsModel:
    """Fitted cohort statistics driving shape, position, and texture sampling."""

    tumor_type: str
    size_ratio_dist: SkewNormalParams
    intensity_regression: RegressionParams
    offset_z_hist: OffsetHistogram
    neighborhood_radius_mm: float = DEFAULT_NEIGHBORHOOD_RADIUS_MM
    n_cases: int = 0

    def __post_init__(self):
        if self.tumor_type not in TUMOR_TYPES:
            raise ValueError(f"tumor_type must be one of {TUMOR_TYPES}, got {self.tumor_type!r}")
        if self.neighborhood_radius_mm <= 0:
            raise ValueError("neighborhood_radius_mm must be > 0")


# ---------------------------------------------------------------------------
# Per-case statistics
# ---------------------------------------------------------------------------

def compute_case_stats(v: Volume, pancreas: Mask, tumor: Mask,
                       r_mm: float = DEFAULT_NEIGHBORHOOD_RADIUS_MM) -> CaseStats:
    """Compute size ratio, intensity medians, and z offset for one case.

    The pancreatic neighborhood is the set of pancreas-labeled, non-tumor
    voxels within Euclidean distance r_mm of the tumor centroid.
    """
    check_geometry(v, pancreas)
    check_geometry(v, tumor)
    if r_mm <= 0:
        raise ValueError(f"r_mm must be > 0, got {r_mm}")
    panc = pancreas.labels > 0
    tum = tumor.labels > 0
    if not panc.any():
        raise ValueError("empty pancreas mask")
    if not tum.any():
        raise ValueError("empty tumor mask")

    size_ratio = float(tum.sum()) / float(panc.sum())

    tix = np.argwhere(tum)
    centroid = tix.mean(axis=0)

    ring = panc & ~tum
    ridx = np.argwhere(ring)
    sp = np.asarray(v.spacing)
    dist = np.sqrt((((ridx - centroid) * sp) ** 2).sum(axis=1))
    near = ridx[dist <= r_mm]
    if near.size == 0:
        raise ValueError(f"no pancreas voxels within {r_mm} mm of the tumor centroid (r too small)")
    nm = lower_median(v.values[near[:, 0], near[:, 1], near[:, 2]])
    tm = lower_median(v.values[tum])

    pz = np.argwhere(panc)[:, 2]
    half_extent = (pz.max() - pz.min()) / 2.0
    if half_extent == 0:
        offset_z = 0.0
    else:
        offset_z = float(np.clip((centroid[2] - pz.mean()) / half_extent, -1.0, 1.0))

    return CaseStats(size_ratio=size_ratio, neighborhood_median=nm, tumor_median=tm,
                     intensity_residual=nm - tm, offset_z=offset_z)


# ---------------------------------------------------------------------------
# Distribution fits
# ---------------------------------------------------------------------------

def fit_skew_normal(samples) -> SkewNormalParams:
    """Method-of-moments skew-normal fit.

    Sample skewness is clamped to the family's attainable range before the
    inversion; the fitted mean and variance match the sample's.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 3:
        raise ValueError(f"need at least 3 samples, got {x.size}")
    mean = x.mean()
    var = x.var()
    if var <= 0:
        raise ValueError("samples have zero variance")
    g1 = float(((x - mean) ** 3).mean() / var**1.5)
    g1 = float(np.clip(g1, -MAX_ABS_SKEWNESS, MAX_ABS_SKEWNESS))

    num = abs(g1) ** (2.0 / 3.0)
    c = ((4.0 - math.pi) / 2.0) ** (2.0 / 3.0)
    delta2 = (math.pi / 2.0) * num / (num + c)
    delta = math.copysign(min(math.sqrt(delta2), 1.0 - 1e-12), g1)
    shape = delta / math.sqrt(1.0 - delta**2)
    scale = math.sqrt(var / (1.0 - 2.0 * delta**2 / math.pi))
    location = mean - scale * delta * math.sqrt(2.0 / math.pi)
    return SkewNormalParams(location=location, scale=scale, shape=shape)


def sample_skew_normal(p: SkewNormalParams, rng: np.random.Generator) -> float:
    """One draw via the |u0|-construction; consumes exactly two normals."""
    delta = p.delta
    u0 = rng.standard_normal()
    u1 = rng.standard_normal()
    z = delta * abs(u0) + math.sqrt(1.0 - delta**2) * u1
    return p.location + p.scale * z


def fit_intensity_regression(pairs) -> RegressionParams:
    """OLS of residual delta on pancreas median m; sigma_eps from residual RMS."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be a sequence of (m, delta) tuples")
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 pairs, got {arr.shape[0]}")
    m, d = arr[:, 0], arr[:, 1]
    var_m = m.var()
    if var_m <= 0:
        raise ValueError("all m values identical; regression is degenerate")
    alpha = float(((m - m.mean()) * (d - d.mean())).mean() / var_m)
    beta = float(d.mean() - alpha * m.mean())
    resid = d - (alpha * m + beta)
    sigma_eps = float(np.sqrt((resid**2).mean()))
    return RegressionParams(alpha=alpha, beta=beta, sigma_eps=sigma_eps)


def fit_stats_model(cases, r_mm: float = DEFAULT_NEIGHBORHOOD_RADIUS_MM,
                    tumor_type: str = "PDAC", n_offset_bins: int = 20) -> TumorStatsModel:
    """Fit the full cohort model from per-case statistics."""
    cases = list(cases)
    if len(cases) < 3:
        raise ValueError(f"need at least 3 cases, got {len(cases)}")
    ratios = [c.size_ratio for c in cases]
    pairs = [(c.neighborhood_median, c.intensity_residual) for c in cases]
    offsets = [c.offset_z for c in cases]
    counts, edges = np.histogram(offsets, bins=n_offset_bins, range=(-1.0, 1.0))
    probs = counts / counts.sum()
    return TumorStatsModel(
        tumor_type=tumor_type,
        size_ratio_dist=fit_skew_normal(ratios),
        intensity_regression=fit_intensity_regression(pairs),
        offset_z_hist=OffsetHistogram(bin_edges=tuple(edges), probabilities=tuple(probs)),
        neighborhood_radius_mm=r_mm,
        n_cases=len(cases),
    )


# ---------------------------------------------------------------------------
# Model JSON round-trip
# ---------------------------------------------------------------------------

def model_to_dict(model: TumorStatsModel) -> dict:
    return {
        "schema": _SCHEMA,
        "tumor_type": model.tumor_type,
        "size_ratio_dist": {
            "location": model.size_ratio_dist.location,
            "scale": model.size_ratio_dist.scale,
            "shape": model.size_ratio_dist.shape,
        },
        "intensity_regression": {
            "alpha": model.intensity_regression.alpha,
            "beta": model.intensity_regression.beta,
            "sigma_eps": model.intensity_regression.sigma_eps,
        },
        "offset_z_hist": {
            "bin_edges": list(model.offset_z_hist.bin_edges),
            "probabilities": list(model.offset_z_hist.probabilities),
        },
        "neighborhood_radius_mm": model.neighborhood_radius_mm,
        "n_cases": model.n_cases,
    }


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ValueError(f"stats model file is missing field {where}{key!r}")
    return d[key]


def model_from_dict(d: dict) -> TumorStatsModel:
    schema = _require(d, "schema", "")
    if schema != _SCHEMA:
        raise ValueError(f"unsupported stats model schema {schema!r} (expected {_SCHEMA!r})")
    sr = _require(d, "size_ratio_dist", "")
    reg = _require(d, "intensity_regression", "")
    hist = _require(d, "offset_z_hist", "")
    return TumorStatsModel(
        tumor_type=_require(d, "tumor_type", ""),
        size_ratio_dist=SkewNormalParams(
            location=_require(sr, "location", "size_ratio_dist."),
            scale=_require(sr, "scale", "size_ratio_dist."),
            shape=_require(sr, "shape", "size_ratio_dist."),
        ),
        intensity_regression=RegressionParams(
            alpha=_require(reg, "alpha", "intensity_regression."),
            beta=_require(reg, "beta", "intensity_regression."),
            sigma_eps=_require(reg, "sigma_eps", "intensity_regression."),
        ),
        offset_z_hist=OffsetHistogram(
            bin_edges=tuple(_require(hist, "bin_edges", "offset_z_hist.")),
            probabilities=tuple(_require(hist, "probabilities", "offset_z_hist.")),
        ),
        neighborhood_radius_mm=_require(d, "neighborhood_radius_mm", ""),
        n_cases=_require(d, "n_cases", ""),
    )


def save_stats_model(model: TumorStatsModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")


def load_stats_model(path) -> TumorStatsModel:
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: malformed stats model JSON: {e}") from e
    return model_from_dict(d)
