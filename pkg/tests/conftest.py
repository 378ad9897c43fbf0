import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tumorsynth.cohortstats import (OffsetHistogram, RegressionParams,
                                    SkewNormalParams, TumorStatsModel)


def build_model(alpha=0.3, beta=15.0, sigma_eps=3.0, location=0.02, scale=0.12,
                shape=4.0, tumor_type="PDAC", radius_mm=15.0,
                offset_probs=None) -> TumorStatsModel:
    """A hand-specified stats model wide enough to populate the default strata."""
    probs = offset_probs if offset_probs is not None else [0.05] * 20
    return TumorStatsModel(
        tumor_type=tumor_type,
        size_ratio_dist=SkewNormalParams(location=location, scale=scale, shape=shape),
        intensity_regression=RegressionParams(alpha=alpha, beta=beta, sigma_eps=sigma_eps),
        offset_z_hist=OffsetHistogram(bin_edges=tuple(np.linspace(-1, 1, len(probs) + 1)),
                                      probabilities=tuple(probs)),
        neighborhood_radius_mm=radius_mm,
        n_cases=3,
    )


@pytest.fixture
def stats_model():
    return build_model()
