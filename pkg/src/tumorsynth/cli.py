"""Command-line entry point wiring the library into reproducible batch runs.

Subcommands: fit-stats, synthesize, evaluate, turing-export, serve.
Option precedence is flags > environment (TUMORSYNTH_*) > config file >
built-in defaults. Every run writes a reproducibility record next to its
artifacts; failures print a machine-readable JSON error to stderr and exit 1
(invalid arguments exit 2).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .cohortstats import (compute_case_stats, fit_stats_model, load_stats_model,
                          save_stats_model)
from .detect_eval import CaseEval, dice, froc, stratified_sensitivity, write_eval_report
from .synth import SynthesisConfig, case_rng, synthesize_tumor
from .volgrid import read_mask, read_volume, write_mask, write_volume

ENV_PREFIX = "TUMORSYNTH_"

DEFAULT_FP_TARGETS = (0.05, 0.7, 0.8, 0.9, 1.0)


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name.upper())


def _resolve(flag_value, env_name: str, default=None, cast=str):
    """flags > env > default (config-file values are handled by the caller)."""
    if flag_value is not None:
        return flag_value
    raw = _env(env_name)
    if raw is not None:
        return cast(raw)
    return default


def _read_csv(path, required: set[str]) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows or not required.issubset(rows[0].keys()):
        raise ValueError(f"{path}: manifest needs columns {sorted(required)}")
    return rows


def _case_name(row: dict, index: int) -> str:
    if row.get("case"):
        return row["case"]
    stem = Path(row["volume"]).name
    for suffix in (".nii.gz", ".nii"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return f"case-{index:04d}"


def _write_record(out_dir, record: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {"tool": "tumorsynth", "version": __version__, **record}
    (out / "run_record.json").write_text(json.dumps(record, indent=2) + "\n")


# ---------------------------------------------------------------------------
# fit-stats
# ---------------------------------------------------------------------------

def cmd_fit_stats(args) -> int:
    rows = _read_csv(args.manifest, {"volume", "pancreas", "tumor"})
    cases = []
    for row in rows:
        v = read_volume(row["volume"])
        cases.append(compute_case_stats(v, read_mask(row["pancreas"]),
                                        read_mask(row["tumor"]), args.radius_mm))
    model = fit_stats_model(cases, args.radius_mm, args.tumor_type)
    out = Path(_resolve(args.out, "OUT", "stats_model.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_stats_model(model, out)
    sidecar = {
        "tool": "tumorsynth", "version": __version__, "command": "fit-stats",
        "manifest": str(args.manifest), "radius_mm": args.radius_mm,
        "tumor_type": args.tumor_type, "n_cases": len(cases), "output": str(out),
    }
    out.with_suffix(out.suffix + ".provenance.json").write_text(
        json.dumps(sidecar, indent=2) + "\n")
    print(f"fitted {args.tumor_type} model from {len(cases)} cases -> {out}")
    return 0


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

def _load_synth_config(args) -> SynthesisConfig:
    cfg_path = _resolve(args.config, "CONFIG")
    cfg = SynthesisConfig.from_json(cfg_path) if cfg_path else SynthesisConfig()
    seed = _resolve(args.seed, "SEED", cast=int)
    if seed is not None:
        cfg = SynthesisConfig.from_dict({**cfg.to_dict(), "seed": seed})
    return cfg

def _synthesize_one(task) -> dict:
    index, row, name, model_path, cfg_dict, out_dir = task
    cfg = SynthesisConfig.from_dict(cfg_dict)
    model = load_stats_model(model_path)
    volume = read_volume(row["volume"])
    pancreas = read_mask(row["pancreas"])
    result = synthesize_tumor(volume, pancreas, model, cfg, case_rng(cfg.seed, index))
    out = Path(out_dir)
    vol_path = out / f"{name}_volume.nii.gz"
    mask_path = out / f"{name}_mask.nii.gz"
    write_volume(result.volume_out, vol_path)
    write_mask(result.tumor_mask, mask_path)
    prov = {
        "tool": "tumorsynth", "version": __version__, "command": "synthesize",
        "case": name, "case_index": index,
        "inputs": {"volume": row["volume"], "pancreas": row["pancreas"]},
        "outputs": {"volume": vol_path.name, "mask": mask_path.name},
        "model": str(model_path), "config": cfg.to_dict(),
        **result.provenance_dict(),
        "seed": cfg.seed,
    }
    (out / f"{name}_provenance.json").write_text(json.dumps(prov, indent=2) + "\n")
    return {"case": name, "tumors_placed": len(result.tumors)}


def cmd_synthesize(args) -> int:
    if args.print_config:
        print(json.dumps(SynthesisConfig().to_dict(), indent=2))
        return 0
    if not args.manifest or not args.model:
        raise ValueError("synthesize requires a manifest and --model (or --print-config)")
    cfg = _load_synth_config(args)
    out_dir = Path(_resolve(args.out, "OUT", "synth_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_csv(args.manifest, {"volume", "pancreas"})
    tasks = [(i, row, _case_name(row, i), args.model, cfg.to_dict(), str(out_dir))
             for i, row in enumerate(rows)]
    jobs = _resolve(args.jobs, "JOBS", 1, cast=int)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_synthesize_one, tasks))
    else:
        summaries = [_synthesize_one(t) for t in tasks]
    # record omits the scheduling degree: outputs do not depend on it
    _write_record(out_dir, {
        "command": "synthesize", "manifest": str(args.manifest),
        "model": str(args.model), "config": cfg.to_dict(), "seed": cfg.seed,
        "cases": summaries,
    })
    print(f"synthesized {len(summaries)} case(s) -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _parse_floats(text: str) -> list[float]:
    return [math.inf if t.strip() in ("inf", "Inf") else float(t)
            for t in text.split(",") if t.strip()]


def cmd_evaluate(args) -> int:
    pred_rows = {r["case"]: r for r in _read_csv(args.pred, {"case", "mask"})}
    gt_rows = {r["case"]: r for r in _read_csv(args.gt, {"case", "mask"})}
    missing = sorted(set(gt_rows) ^ set(pred_rows))
    if missing:
        raise ValueError(f"pred/GT manifests disagree on cases: {missing}")
    fp_targets = _parse_floats(args.fp_targets)
    bins = _parse_floats(args.radius_bins)

    cases, dices = [], {}
    for case in sorted(gt_rows):
        pred_mask = read_mask(pred_rows[case]["mask"])
        gt_mask = read_mask(gt_rows[case]["mask"])
        score_path = pred_rows[case].get("score_map") or None
        score_map = read_volume(score_path) if score_path else None
        cases.append(CaseEval.from_masks(pred_mask, gt_mask, score_map,
                                         connectivity=args.connectivity,
                                         iou_threshold=args.iou_threshold))
        dices[case] = dice(pred_mask, gt_mask)

    curve = froc(cases, fp_targets)
    strata = stratified_sensitivity(cases, bins, args.stratify_at)
    out_dir = Path(_resolve(args.out, "OUT", "eval_out"))
    write_eval_report(out_dir, curve, strata, dices)
    _write_record(out_dir, {
        "command": "evaluate", "pred": str(args.pred), "gt": str(args.gt),
        "fp_targets": [str(t) for t in fp_targets], "radius_bins": [str(b) for b in bins],
        "stratify_at": args.stratify_at, "connectivity": args.connectivity,
        "iou_threshold": args.iou_threshold, "n_cases": len(cases),
    })
    for t in fp_targets:
        print(f"sensitivity @ {t} FP/subject: {curve.sensitivity_at[t]:.4f}")
    print(f"report -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# turing-export / serve
# ---------------------------------------------------------------------------

def cmd_turing_export(args) -> int:
    from .turing import export_slices
    out_dir = Path(_resolve(args.out, "OUT", "turing_out"))
    seed = _resolve(args.seed, "SEED", 0, cast=int)
    items = export_slices(args.real, args.synth, args.n_per_class, seed, out_dir)
    _write_record(out_dir, {
        "command": "turing-export", "real": str(args.real), "synth": str(args.synth),
        "n_per_class": args.n_per_class, "seed": seed, "n_items": len(items),
    })
    print(f"exported {len(items)} slices -> {out_dir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .turing import create_app
    data_root = _resolve(args.data_root, "DATA_ROOT", "turing_data")
    ui_dir = _resolve(args.ui_dir, "UI_DIR")
    app = create_app(data_root, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser / main
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tumorsynth",
        description="Pancreatic tumor synthesis and evaluation toolkit")
    p.add_argument("--version", action="version", version=f"tumorsynth {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    fs = sub.add_parser("fit-stats", help="fit a tumor stats model from a cohort manifest")
    fs.add_argument("manifest", help="CSV with volume,pancreas,tumor columns")
    fs.add_argument("--out", help="output model JSON path")
    fs.add_argument("--radius-mm", type=float, default=15.0,
                    help="neighborhood sampling radius (default 15)")
    fs.add_argument("--tumor-type", choices=["PDAC", "Cyst"], default="PDAC")
    fs.set_defaults(fn=cmd_fit_stats)

    sy = sub.add_parser("synthesize", help="insert synthetic tumors per a healthy manifest")
    sy.add_argument("manifest", nargs="?", help="CSV with volume,pancreas columns")
    sy.add_argument("--model", help="stats model JSON from fit-stats")
    sy.add_argument("--config", help="synthesis config JSON")
    sy.add_argument("--seed", type=int, help="override config seed")
    sy.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    sy.add_argument("--out", help="output directory")
    sy.add_argument("--print-config", action="store_true",
                    help="print default synthesis config JSON and exit")
    sy.set_defaults(fn=cmd_synthesize)

    ev = sub.add_parser("evaluate", help="FROC/DSC/stratified report from prediction and GT manifests")
    ev.add_argument("--pred", required=True, help="CSV with case,mask[,score_map] columns")
    ev.add_argument("--gt", required=True, help="CSV with case,mask columns")
    ev.add_argument("--out", help="report directory")
    ev.add_argument("--fp-targets", default=",".join(str(t) for t in DEFAULT_FP_TARGETS),
                    help="comma-separated FP/subject targets")
    ev.add_argument("--radius-bins", default="0,20,inf",
                    help="comma-separated radius bin edges in mm")
    ev.add_argument("--stratify-at", type=float, default=0.7,
                    help="FP/subject rate fixing the stratification threshold")
    ev.add_argument("--connectivity", type=int, choices=[6, 26], default=26)
    ev.add_argument("--iou-threshold", type=float, default=0.0,
                    help="require IoU above this for a hit (default: any overlap)")
    ev.set_defaults(fn=cmd_evaluate)

    te = sub.add_parser("turing-export", help="export the reader-study slice set")
    te.add_argument("--real", required=True, help="CSV with case,volume,tumor_mask columns")
    te.add_argument("--synth", required=True, help="CSV with case,volume,tumor_mask columns")
    te.add_argument("--n-per-class", type=int, required=True)
    te.add_argument("--seed", type=int)
    te.add_argument("--out", help="output directory")
    te.set_defaults(fn=cmd_turing_export)

    sv = sub.add_parser("serve", help="run the visual Turing test HTTP service")
    sv.add_argument("--data-root", help="session storage directory")
    sv.add_argument("--ui-dir", help="static reader UI bundle to host at /ui")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8008)
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
