"""
Detection and segmentation metrics
==================================

Simulates an imperfect detector over a batch of synthesized cases and walks
the evaluation stack: instance extraction, FROC at the protocol FP targets,
Dice, and radius-stratified sensitivity at 20 mm.
"""

import math
from pathlib import Path

import numpy as np

from tumorsynth import (CaseEval, SynthesisConfig, dice, froc, make_phantom,
                        stratified_sensitivity, synthesize_tumor, write_eval_report)
from tumorsynth.synth import case_rng
from tumorsynth.volgrid import Mask, Volume

from demo_helpers import demo_model

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)

model = demo_model()
cfg = SynthesisConfig(seed=21)
volume, pancreas = make_phantom(spacing=(2.0, 2.0, 2.0))

rng = np.random.default_rng(55)
cases, dices = [], {}
for i in range(12):
    result = synthesize_tumor(volume, pancreas, model, cfg, case_rng(cfg.seed, i))
    gt = result.tumor_mask

    # a fake detector: erode/keep the tumor with probability 0.8, plus random FPs
    pred = (gt.labels > 0).astype(np.int32)
    score = np.zeros(volume.dims, dtype=np.float32)
    if rng.random() < 0.8:
        score[pred > 0] = rng.uniform(0.6, 1.0)
    else:
        pred[:] = 0
    for _ in range(rng.integers(0, 3)):  # false positives away from the tumor
        c = rng.integers(3, 10, size=3)
        pred[c[0], c[1], c[2]] = 1
        score[c[0], c[1], c[2]] = rng.uniform(0.1, 0.9)

    pred_mask = Mask(labels=pred, spacing=volume.spacing)
    score_map = Volume(values=score, spacing=volume.spacing)
    cases.append(CaseEval.from_masks(pred_mask, gt, score_map))
    dices[f"case{i:02d}"] = dice(pred_mask, gt)

targets = [0.05, 0.7, 0.8, 0.9, 1.0]
curve = froc(cases, targets)
print("FROC operating points (threshold, FP/subject, sensitivity):")
for p in curve.points:
    print(f"  {p.threshold:.2f}  {p.fp_per_subject:.2f}  {p.sensitivity:.2f}")
for t in targets:
    print(f"sensitivity @ {t} FP/subject: {curve.sensitivity_at[t]:.2f}")

bins = stratified_sensitivity(cases, [0.0, 20.0, math.inf], fp_target=0.7)
for b in bins:
    hi = "inf" if math.isinf(b.radius_hi_mm) else f"{b.radius_hi_mm:.0f}"
    sens = "undefined" if b.sensitivity is None else f"{b.sensitivity:.2f}"
    print(f"radius {b.radius_lo_mm:.0f}-{hi} mm: {b.n_detected}/{b.n_gt} -> {sens}")

write_eval_report(out / "report", curve, bins, dices)
print("\nreport (results.json, summary.csv, froc_points.tsv) ->", out / "report")
