"""Shared hand-specified stats model for the demo scripts."""

import numpy as np

from tumorsynth.cohortstats import (OffsetHistogram, RegressionParams,
                                    SkewNormalParams, TumorStatsModel)


def demo_model() -> TumorStatsModel:
    """PDAC-like statistics: positively skewed sizes, ~30% + 15 HU hypodensity."""
    return TumorStatsModel(
        tumor_type="PDAC",
        size_ratio_dist=SkewNormalParams(location=0.02, scale=0.12, shape=4.0),
        intensity_regression=RegressionParams(alpha=0.3, beta=15.0, sigma_eps=3.0),
        offset_z_hist=OffsetHistogram(bin_edges=tuple(np.linspace(-1, 1, 21)),
                                      probabilities=tuple([0.05] * 20)),
        neighborhood_radius_mm=15.0,
    )
