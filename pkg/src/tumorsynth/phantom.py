"""Procedural CT phantoms: an ellipsoidal soft-tissue "pancreas" in a uniform
background. Used by the demos and the acceptance suite; no patient data needed.
"""

from __future__ import annotations

import numpy as np

from .volgrid import Mask, Volume


def make_phantom(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0), semi_axes_mm=None,
                 center_voxel=None, pancreas_hu: float = 90.0,
                 background_hu: float = -100.0) -> tuple[Volume, Mask]:
    """Build a synthetic scan and its pancreas mask.

    The organ is an axis-aligned ellipsoid of constant HU centered at
    center_voxel (grid center by default) with semi-axes defaulting to 40% of
    the field of view per axis.
    """
    dims = tuple(int(d) for d in dims)
    sp = np.asarray(spacing, dtype=np.float64)
    if semi_axes_mm is None:
        semi_axes_mm = tuple(0.4 * d * s for d, s in zip(dims, sp))
    if center_voxel is None:
        center_voxel = tuple((d - 1) / 2.0 for d in dims)
    axes = np.asarray(semi_axes_mm, dtype=np.float64)
    c = np.asarray(center_voxel, dtype=np.float64)

    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    q = sum((((g - ci) * si) / ai) ** 2 for g, ci, si, ai in zip(grids, c, sp, axes))
    inside = q <= 1.0

    values = np.full(dims, background_hu, dtype=np.float32)
    values[inside] = pancreas_hu
    labels = inside.astype(np.int32)
    spacing = tuple(float(s) for s in sp)
    return (Volume(values=values, spacing=spacing),
            Mask(labels=labels, spacing=spacing))
