"""Procedural tumor insertion: shape, position, and texture generation.

The pipeline samples a tumor size ratio from the fitted cohort distribution
(with small-size oversampling via strata), rasterizes an anisotropic
ellipsoid, warps it with a smoothed random displacement field, places it at
a sampled pancreas position, derives the tumor intensity from the cohort
regression on the local pancreatic median, and blends Gaussian texture into
the volume under a blurred edge mask.

Everything is a pure function of (inputs, config, rng): a fixed seed gives
bit-identical results. Batch runs derive one rng per case via case_rng so
parallel and serial execution agree.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter, map_coordinates

from .cohortstats import TumorStatsModel, lower_median, sample_skew_normal
from .volgrid import Mask, Volume, check_geometry

DEFAULT_STRATA = ((0.01, 0.3), (0.05, 0.3), (0.25, 0.3), (math.inf, 0.1))

MAX_RATIO_REJECTIONS = 10_000
MAX_POSITION_ATTEMPTS = 50
MIN_NEIGHBORHOOD_VOXELS = 10


@dataclass(frozen=True)
class SynthesisConfig:
    """Tunable knobs of the synthesis pipeline; see README for defaults."""

    strata: tuple = DEFAULT_STRATA          # (size-ratio upper bound, weight) pairs
    axis_ratio_range: tuple = (0.75, 1.3)   # per-axis anisotropy multipliers
    elastic_sigma_mm: float = 4.0
    elastic_magnitude_mm: float = 2.0
    texture_sigma_hu: float = 10.0
    blur_sigma_mm: float = 1.0              # 0 disables edge blurring exactly
    core_threshold: float = 0.5             # blend weight defining the output mask
    tumors_per_volume: int = 1
    seed: int = 0
    allow_overlap: bool = False

    def __post_init__(self):
        strata = tuple((float(b), float(w)) for b, w in self.strata)
        if not strata:
            raise ValueError("strata must be non-empty")
        bounds = [b for b, _ in strata]
        if any(b <= 0 for b in bounds) or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError(f"strata bounds must be positive and strictly increasing, got {bounds}")
        if any(w < 0 for _, w in strata) or sum(w for _, w in strata) <= 0:
            raise ValueError("strata weights must be >= 0 and sum to > 0")
        object.__setattr__(self, "strata", strata)
        lo, hi = self.axis_ratio_range
        if not (0 < lo <= 1 <= hi):
            raise ValueError(f"axis_ratio_range must satisfy 0 < lo <= 1 <= hi, got {self.axis_ratio_range}")
        object.__setattr__(self, "axis_ratio_range", (float(lo), float(hi)))
        if self.elastic_sigma_mm <= 0:
            raise ValueError("elastic_sigma_mm must be > 0")
        if self.elastic_magnitude_mm < 0 or self.texture_sigma_hu < 0 or self.blur_sigma_mm < 0:
            raise ValueError("sigma/magnitude parameters must be non-negative")
        if not 0 < self.core_threshold <= 1:
            raise ValueError(f"core_threshold must lie in (0, 1], got {self.core_threshold}")
        if self.tumors_per_volume < 1:
            raise ValueError("tumors_per_volume must be >= 1")

    def to_dict(self) -> dict:
        return {
            "strata": [[None if math.isinf(b) else b, w] for b, w in self.strata],
            "axis_ratio_range": list(self.axis_ratio_range),
            "elastic_sigma_mm": self.elastic_sigma_mm,
            "elastic_magnitude_mm": self.elastic_magnitude_mm,
            "texture_sigma_hu": self.texture_sigma_hu,
            "blur_sigma_mm": self.blur_sigma_mm,
            "core_threshold": self.core_threshold,
            "tumors_per_volume": self.tumors_per_volume,
            "seed": self.seed,
            "allow_overlap": self.allow_overlap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        kwargs = dict(d)
        if "strata" in kwargs:
            kwargs["strata"] = tuple(
                (math.inf if b is None else float(b), float(w)) for b, w in kwargs["strata"])
        if "axis_ratio_range" in kwargs:
            kwargs["axis_ratio_range"] = tuple(kwargs["axis_ratio_range"])
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthesis config fields: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "SynthesisConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class TumorProvenance:
    """Every sampled parameter behind one placed tumor."""

    label: int
    stratum_index: int
    size_ratio: float
    semi_axes_mm: tuple[float, float, float]
    center_voxel: tuple[int, int, int]
    raster_voxel_count: int
    tiny: bool
    neighborhood_median: float
    delta_i: float
    epsilon: float
    position_attempts: int

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "stratum_index": self.stratum_index,
            "size_ratio": self.size_ratio,
            "semi_axes_mm": list(self.semi_axes_mm),
            "center_voxel": list(self.center_voxel),
            "raster_voxel_count": self.raster_voxel_count,
            "tiny": self.tiny,
            "neighborhood_median": self.neighborhood_median,
            "delta_i": self.delta_i,
            "epsilon": self.epsilon,
            "position_attempts": self.position_attempts,
        }


@dataclass
class SynthesisResult:
    """Modified volume, per-tumor label mask, and the full sampling record."""

    volume_out: Volume
    tumor_mask: Mask
    seed: int | None
    tumors_requested: int
    reduced_count: bool
    tumors: list[TumorProvenance] = field(default_factory=list)

    def provenance_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tumors_requested": self.tumors_requested,
            "tumors_placed": len(self.tumors),
            "reduced_count": self.reduced_count,
            "tumors": [t.to_dict() for t in self.tumors],
        }


def case_rng(seed: int, case_index: int) -> np.random.Generator:
    """Per-case rng stream: SeedSequence over (seed, case_index).

    This is the documented splitting rule that keeps batch output independent
    of worker scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, case_index)))


# ---------------------------------------------------------------------------
# Shape generation
# ---------------------------------------------------------------------------

def sample_size_ratio(model: TumorStatsModel, cfg: SynthesisConfig,
                      rng: np.random.Generator) -> float:
    """Pick a stratum by weight, then rejection-sample the size-ratio
    distribution until the draw lands in the stratum's interval."""
    weights = np.array([w for _, w in cfg.strata], dtype=np.float64)
    cum = np.cumsum(weights / weights.sum())
    idx = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
    lo = 0.0 if idx == 0 else cfg.strata[idx - 1][0]
    hi = cfg.strata[idx][0]
    for _ in range(MAX_RATIO_REJECTIONS):
        draw = sample_skew_normal(model.size_ratio_dist, rng)
        if lo < draw <= hi:
            return float(draw)
    raise ValueError(
        f"stratum ({lo}, {hi}] has no mass under the size-ratio distribution "
        f"after {MAX_RATIO_REJECTIONS} rejections; strata and model are inconsistent")


def stratum_index(ratio: float, cfg: SynthesisConfig) -> int:
    """Index of the stratum whose interval (prev bound, bound] contains ratio."""
    return bisect_left([b for b, _ in cfg.strata], ratio)


def derive_semi_axes(ratio: float, pancreas_volume_mm3: float, cfg: SynthesisConfig,
                     rng: np.random.Generator) -> tuple[float, float, float]:
    """Semi-axes of an ellipsoid with volume ratio * pancreas volume.

    Per-axis multipliers are drawn uniformly from axis_ratio_range and
    renormalized so the product of the axes is exactly the sphere radius
    cubed (volume preserved).
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be > 0, got {ratio}")
    target = ratio * pancreas_volume_mm3
    r0 = (3.0 * target / (4.0 * math.pi)) ** (1.0 / 3.0)
    mult = rng.uniform(cfg.axis_ratio_range[0], cfg.axis_ratio_range[1], size=3)
    mult /= mult.prod() ** (1.0 / 3.0)
    return tuple(float(r0 * m) for m in mult)


def rasterize_ellipsoid(semi_axes_mm, spacing_mm) -> np.ndarray:
    """Binary local mask of the ellipsoid on its own odd-dimension grid.

    The grid center voxel is the ellipsoid center; a voxel is included iff
    its center lies inside the ellipsoid. The grid tight-fits the ellipsoid
    plus a 1-voxel margin.
    """
    axes = np.asarray(semi_axes_mm, dtype=np.float64)
    sp = np.asarray(spacing_mm, dtype=np.float64)
    if np.any(axes <= 0):
        raise ValueError(f"semi-axes must be > 0, got {semi_axes_mm}")
    half = [int(math.ceil(a / s)) + 1 for a, s in zip(axes, sp)]
    coords = [ (np.arange(2 * h + 1) - h) * s / a for h, s, a in zip(half, sp, axes) ]
    q = (coords[0][:, None, None] ** 2 + coords[1][None, :, None] ** 2
         + coords[2][None, None, :] ** 2)
    mask = q <= 1.0
    if not mask.any():  # sub-voxel ellipsoid: keep the center voxel
        mask[half[0], half[1], half[2]] = True
    return mask


def elastic_deform(mask: np.ndarray, spacing_mm, cfg: SynthesisConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Warp a local binary mask by a smoothed random displacement field.

    Per-axis white noise is Gaussian-smoothed (elastic_sigma_mm) and rescaled
    so the maximum displacement magnitude equals elastic_magnitude_mm; the
    mask is pulled back with nearest-neighbor sampling. Magnitude 0 is the
    identity. The grid is padded symmetrically so no content is clipped and
    the center-voxel convention is preserved.
    """
    if not mask.any():
        raise ValueError("elastic_deform requires a non-empty mask")
    if cfg.elastic_magnitude_mm == 0:
        return mask.copy()
    sp = np.asarray(spacing_mm, dtype=np.float64)
    pad = [int(math.ceil(cfg.elastic_magnitude_mm / s)) + 1 for s in sp]
    padded = np.pad(mask, [(p, p) for p in pad])
    sigma_vox = [cfg.elastic_sigma_mm / s for s in sp]
    disp = np.stack([gaussian_filter(rng.standard_normal(padded.shape), sigma=sigma_vox,
                                     mode="constant", cval=0.0)
                     for _ in range(3)])
    mag = np.sqrt((disp**2).sum(axis=0))
    peak = mag.max()
    if peak > 0:
        disp *= cfg.elastic_magnitude_mm / peak
    idx = np.indices(padded.shape, dtype=np.float64)
    src = idx + disp / sp[:, None, None, None]  # displacement mm -> voxels
    warped = map_coordinates(padded.astype(np.uint8), src, order=0,
                             mode="constant", cval=0).astype(bool)
    if not warped.any():  # degenerate warp of a tiny mask: keep the input
        return padded
    return warped


# ---------------------------------------------------------------------------
# Position generation
# ---------------------------------------------------------------------------

def sample_position(pancreas: Mask, model: TumorStatsModel,
                    rng: np.random.Generator) -> tuple[int, int, int]:
    """Draw a tumor center: z slab from the offset histogram, then uniform
    over pancreas voxels in that slab (uniform over all on an empty slab)."""
    panc = pancreas.labels > 0
    if not panc.any():
        raise ValueError("empty pancreas mask")
    voxels = np.argwhere(panc)
    zmin, zmax = int(voxels[:, 2].min()), int(voxels[:, 2].max())
    offset = model.offset_z_hist.sample(rng)
    # half-voxel overhang so a uniform offset draw hits every slab equally
    zc = (zmin + zmax) / 2.0
    z = int(np.floor(zc + offset * ((zmax - zmin) / 2.0 + 0.5) + 0.5))
    z = min(max(z, zmin), zmax)
    slab = voxels[voxels[:, 2] == z]
    cands = slab if len(slab) else voxels
    pick = cands[rng.integers(len(cands))]
    return (int(pick[0]), int(pick[1]), int(pick[2]))


# ---------------------------------------------------------------------------
# Texture generation
# ---------------------------------------------------------------------------

def _window_slices(center, half, pad, dims):
    """Volume slices for the window [center - half - pad, center + half + pad]."""
    vol = []
    for c, h, p, n in zip(center, half, pad, dims):
        lo = max(0, c - h - p)
        hi = min(n, c + h + p + 1)
        if hi <= lo:
            return None
        vol.append(slice(lo, hi))
    return tuple(vol)


def _place_local(local: np.ndarray, center, pad, dims):
    """Embed a local odd-dim grid (center voxel at `center`) into a volume window.

    Returns (window array, volume slices) or (None, None) when the local grid
    misses the volume entirely.
    """
    half = [d // 2 for d in local.shape]
    vol_sl = _window_slices(center, half, pad, dims)
    if vol_sl is None:
        return None, None
    shape = tuple(s.stop - s.start for s in vol_sl)
    win = np.zeros(shape, dtype=local.dtype)
    loc_sl, dest_sl = [], []
    for c, h, d, v in zip(center, half, local.shape, vol_sl):
        l_lo = max(0, v.start - (c - h))
        l_hi = min(d, v.stop - (c - h))
        if l_hi <= l_lo:
            return None, None
        loc_sl.append(slice(l_lo, l_hi))
        o = (c - h + l_lo) - v.start
        dest_sl.append(slice(o, o + (l_hi - l_lo)))
    win[tuple(dest_sl)] = local[tuple(loc_sl)]
    return win, vol_sl


def neighborhood_median(v: Volume, pancreas: Mask, center, r_mm: float,
                        exclude: np.ndarray | None = None,
                        exclude_volume: np.ndarray | None = None) -> float:
    """Median pancreas HU within r_mm of center, excluding the tumor footprint.

    If fewer than MIN_NEIGHBORHOOD_VOXELS qualify, the radius grows by 1.5x
    up to 3 times before giving up. Masking to pancreas voxels also covers
    extreme positions where the tumor juts out of the organ.
    """
    check_geometry(v, pancreas)
    if r_mm <= 0:
        raise ValueError(f"r_mm must be > 0, got {r_mm}")
    return _neighborhood_median_arr(v.values, pancreas.labels > 0, v.spacing, center,
                                    r_mm, exclude, exclude_volume)


def _neighborhood_median_arr(values, panc, spacing, center, r_mm,
                             exclude=None, exclude_volume=None) -> float:
    dims = values.shape
    sp = np.asarray(spacing, dtype=np.float64)
    eligible = panc.copy()
    if exclude_volume is not None:
        eligible &= ~exclude_volume
    if exclude is not None and exclude.any():
        win, vol_sl = _place_local(exclude, center, (0, 0, 0), dims)
        if win is not None:
            eligible[vol_sl] &= ~win
    r = float(r_mm)
    fallback = None
    for _ in range(4):  # original radius plus three 1.5x expansions
        half = [int(math.ceil(r / s)) for s in sp]
        vol_sl = _window_slices(center, half, (0, 0, 0), dims)
        idx = np.argwhere(eligible[vol_sl])
        if len(idx):
            origin = np.array([s.start for s in vol_sl])
            d = np.sqrt(((((idx + origin) - np.asarray(center)) * sp) ** 2).sum(axis=1))
            sel = idx[d <= r]
            if len(sel):
                fallback = values[vol_sl][sel[:, 0], sel[:, 1], sel[:, 2]]
                if len(sel) >= MIN_NEIGHBORHOOD_VOXELS:
                    return lower_median(fallback)
        r *= 1.5
    if fallback is not None:  # sparse but usable neighborhood after expansion
        return lower_median(fallback)
    raise ValueError(
        f"no pancreas voxels within {r / 1.5:.1f} mm of {tuple(center)} "
        f"after radius expansion (pathological mask)")


def compute_delta_i(m: float, reg, rng: np.random.Generator) -> float:
    """Intensity drop: alpha * m + beta + eps with eps ~ Normal(0, sigma_eps^2).

    Always consumes one normal draw so the rng stream does not depend on
    sigma_eps.
    """
    eps = reg.sigma_eps * rng.standard_normal()
    return float(reg.alpha * m + reg.beta + eps)


def generate_texture(tumor: np.ndarray, m: float, delta_i: float, cfg: SynthesisConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-voxel Normal(m - delta_i, texture_sigma_hu^2) draws over the footprint."""
    if not tumor.any():
        raise ValueError("generate_texture requires a non-empty mask")
    mu = m - delta_i
    field = np.zeros(tumor.shape, dtype=np.float64)
    n = int(tumor.sum())
    field[tumor] = mu + cfg.texture_sigma_hu * rng.standard_normal(n)
    return field


# ---------------------------------------------------------------------------
# Blending
# ---------------------------------------------------------------------------

def _blur_radii(cfg: SynthesisConfig, spacing):
    if cfg.blur_sigma_mm == 0:
        return None, (0, 0, 0)
    sigma_vox = [cfg.blur_sigma_mm / s for s in spacing]
    radius = tuple(int(3 * sv) for sv in sigma_vox)  # truncate support at 3 sigma
    return sigma_vox, radius


def _weights_window(tumor: np.ndarray, center, cfg: SynthesisConfig, dims, spacing):
    """Blend weight field on the volume window around the placed footprint.

    Returns (w, indicator, volume slices); w is renormalized to max 1.
    """
    sigma_vox, radius = _blur_radii(cfg, spacing)
    ind, vol_sl = _place_local(tumor, center, radius, dims)
    if ind is None or not ind.any():
        raise ValueError("tumor footprint lies entirely outside the volume")
    w = ind.astype(np.float64)
    if sigma_vox is not None and any(r > 0 for r in radius):
        w = gaussian_filter(w, sigma=sigma_vox, radius=radius, mode="constant", cval=0.0)
    w /= w.max()
    return w, ind, vol_sl


def _extend_texture(texture_win: np.ndarray, ind: np.ndarray, spacing) -> np.ndarray:
    """Fill non-footprint window voxels with the nearest footprint value."""
    if ind.all():
        return texture_win
    _, nearest = distance_transform_edt(~ind, sampling=spacing, return_indices=True)
    return texture_win[nearest[0], nearest[1], nearest[2]]


def blend(v: Volume, pancreas: Mask, tumor: np.ndarray, texture: np.ndarray,
          center, cfg: SynthesisConfig) -> tuple[Volume, Mask]:
    """Composite the textured tumor into the volume under a blurred edge mask.

    w = renormalized Gaussian blur of the footprint indicator; output HU is
    (1 - w) * input + w * texture (texture extended to the blurred support by
    nearest footprint voxel); the output mask is {w >= core_threshold}.
    """
    check_geometry(v, pancreas)
    values = v.values.copy()
    out_mask = np.zeros(v.dims, dtype=np.int32)
    _blend_commit(values, out_mask, 1, tumor, texture, center, cfg, v.spacing)
    return (Volume(values=values, spacing=v.spacing, origin=v.origin),
            Mask(labels=out_mask, spacing=v.spacing, origin=v.origin))


def _blend_commit(values, out_mask, label, tumor, texture, center, cfg, spacing,
                  precomputed=None):
    """Apply one tumor's blend in place; returns (w, volume slices)."""
    dims = values.shape
    if precomputed is None:
        w, ind, vol_sl = _weights_window(tumor, center, cfg, dims, spacing)
    else:
        w, ind, vol_sl = precomputed
    sigma_vox, radius = _blur_radii(cfg, spacing)
    tex_win, _ = _place_local(texture, center, radius, dims)
    tex_ext = _extend_texture(tex_win, ind, spacing)
    window = values[vol_sl]
    hot = w > 0
    blended = (1.0 - w[hot]) * window[hot].astype(np.float64) + w[hot] * tex_ext[hot]
    window[hot] = blended.astype(np.float32)
    out_mask[vol_sl][w >= cfg.core_threshold] = label
    return w, vol_sl


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def synthesize_tumor(v: Volume, pancreas: Mask, model: TumorStatsModel,
                     cfg: SynthesisConfig | None = None,
                     rng: np.random.Generator | None = None) -> SynthesisResult:
    """Insert cfg.tumors_per_volume synthetic tumors into a healthy volume.

    Tumors get labels 1..K in placement order. Overlapping placements are
    rejected and the position resampled up to MAX_POSITION_ATTEMPTS times
    (unless cfg.allow_overlap); a tumor that cannot be placed is dropped and
    the result flagged. Bit-deterministic for a fixed rng state.
    """
    cfg = cfg or SynthesisConfig()
    seeded_from_cfg = rng is None
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    check_geometry(v, pancreas)
    panc = pancreas.labels > 0
    if not panc.any():
        raise ValueError("empty pancreas mask")
    pancreas_volume = float(panc.sum()) * v.voxel_volume_mm3

    values = v.values.copy()
    out_mask = np.zeros(v.dims, dtype=np.int32)
    modified = np.zeros(v.dims, dtype=bool)  # any blend support so far
    tumors: list[TumorProvenance] = []
    reduced = False

    for _ in range(cfg.tumors_per_volume):
        ratio = sample_size_ratio(model, cfg, rng)
        axes = derive_semi_axes(ratio, pancreas_volume, cfg, rng)
        footprint = rasterize_ellipsoid(axes, v.spacing)
        raster_count = int(footprint.sum())
        footprint = elastic_deform(footprint, v.spacing, cfg, rng)

        placed = None
        attempts = 0
        while attempts < MAX_POSITION_ATTEMPTS:
            center = sample_position(pancreas, model, rng)
            attempts += 1
            w, ind, vol_sl = _weights_window(footprint, center, cfg, v.dims, v.spacing)
            core = w >= cfg.core_threshold
            if cfg.allow_overlap or not (out_mask[vol_sl][core] > 0).any():
                placed = (center, (w, ind, vol_sl))
                break
        if placed is None:
            reduced = True
            continue
        center, pre = placed

        m = _neighborhood_median_arr(values, panc, v.spacing, center,
                                     model.neighborhood_radius_mm,
                                     exclude=footprint, exclude_volume=modified)
        delta_i = compute_delta_i(m, model.intensity_regression, rng)
        eps = delta_i - (model.intensity_regression.alpha * m + model.intensity_regression.beta)
        texture = generate_texture(footprint, m, delta_i, cfg, rng)

        label = len(tumors) + 1
        w, vol_sl = _blend_commit(values, out_mask, label, footprint, texture,
                                  center, cfg, v.spacing, precomputed=pre)
        modified[vol_sl] |= w > 0

        tumors.append(TumorProvenance(
            label=label, stratum_index=stratum_index(ratio, cfg), size_ratio=ratio,
            semi_axes_mm=axes, center_voxel=center, raster_voxel_count=raster_count,
            tiny=raster_count == 1, neighborhood_median=m, delta_i=delta_i,
            epsilon=eps, position_attempts=attempts))

    if not tumors:
        raise ValueError("no tumor could be placed without overlap; volume too crowded")

    return SynthesisResult(
        volume_out=Volume(values=values, spacing=v.spacing, origin=v.origin),
        tumor_mask=Mask(labels=out_mask, spacing=v.spacing, origin=v.origin),
        seed=cfg.seed if seeded_from_cfg else None,
        tumors_requested=cfg.tumors_per_volume,
        reduced_count=reduced,
        tumors=tumors)
