"""Pancreatic tumor synthesis and evaluation toolkit.

Submodules:
    volgrid      volumes, masks, NIfTI-1 subset I/O, slice rendering
    cohortstats  per-case statistics and cohort model fitting
    synth        shape/position/texture tumor synthesis pipeline
    detect_eval  FROC, Dice, stratified sensitivity, ROC
    turing       visual Turing test HTTP service
    phantom      procedural test phantoms
    cli          batch command-line entry point
"""

from .volgrid import (Image2D, Mask, Volume, WindowSpec, check_geometry,
                      read_mask, read_volume, render_slice, write_mask, write_volume)
from .cohortstats import (CaseStats, OffsetHistogram, RegressionParams,
                          SkewNormalParams, TumorStatsModel, compute_case_stats,
                          fit_intensity_regression, fit_skew_normal, fit_stats_model,
                          load_stats_model, sample_skew_normal, save_stats_model)
from .synth import (SynthesisConfig, SynthesisResult, TumorProvenance, blend,
                    case_rng, compute_delta_i, derive_semi_axes, elastic_deform,
                    generate_texture, neighborhood_median, rasterize_ellipsoid,
                    sample_position, sample_size_ratio, synthesize_tumor)
from .detect_eval import (BinSensitivity, CaseEval, FrocCurve, Instance, RocCurve,
                          dice, extract_instances, froc, match_instances, roc,
                          stratified_sensitivity, write_eval_report)
from .phantom import make_phantom

__version__ = "0.1.0"
