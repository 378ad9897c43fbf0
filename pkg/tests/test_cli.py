import csv
import json

import numpy as np
import pytest

from conftest import build_model
from tumorsynth.cli import main
from tumorsynth.cohortstats import load_stats_model, save_stats_model
from tumorsynth.phantom import make_phantom
from tumorsynth.synth import SynthesisConfig, case_rng, synthesize_tumor
from tumorsynth.volgrid import Mask, Volume, write_mask, write_volume


def write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=fieldnames)
        wr.writeheader()
        wr.writerows(rows)
    return str(path)


@pytest.fixture
def phantom_setup(tmp_path):
    """Phantom volume/mask pair on disk plus a stats model and manifest."""
    v, p = make_phantom()
    write_volume(v, tmp_path / "vol.nii.gz")
    write_mask(p, tmp_path / "panc.nii.gz")
    save_stats_model(build_model(), tmp_path / "model.json")
    manifest = write_csv(tmp_path / "manifest.csv",
                         [{"case": "ph0", "volume": str(tmp_path / "vol.nii.gz"),
                           "pancreas": str(tmp_path / "panc.nii.gz")}],
                         ["case", "volume", "pancreas"])
    return tmp_path, manifest


class TestArgHandling:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["synthesize", "--bogus"])
        assert e.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == 2

    def test_print_config(self, capsys):
        assert main(["synthesize", "--print-config"]) == 0
        cfg = json.loads(capsys.readouterr().out)
        assert cfg == SynthesisConfig().to_dict()

    def test_runtime_error_exits_1_with_json(self, capsys, tmp_path):
        rc = main(["fit-stats", str(tmp_path / "missing.csv")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] in ("FileNotFoundError", "OSError")
        assert "missing.csv" in err["message"]


class TestSynthesizeCommand:
    def test_outputs_and_sidecars(self, phantom_setup):
        tmp, manifest = phantom_setup
        rc = main(["synthesize", manifest, "--model", str(tmp / "model.json"),
                   "--out", str(tmp / "out"), "--seed", "3"])
        assert rc == 0
        assert (tmp / "out" / "ph0_volume.nii.gz").exists()
        assert (tmp / "out" / "ph0_mask.nii.gz").exists()
        prov = json.loads((tmp / "out" / "ph0_provenance.json").read_text())
        assert prov["seed"] == 3
        assert prov["tumors_placed"] >= 1
        assert prov["config"]["blur_sigma_mm"] == 1.0
        record = json.loads((tmp / "out" / "run_record.json").read_text())
        assert record["command"] == "synthesize"
        assert record["version"]

    def test_matches_library_path(self, phantom_setup):
        tmp, manifest = phantom_setup
        main(["synthesize", manifest, "--model", str(tmp / "model.json"),
              "--out", str(tmp / "out"), "--seed", "9"])
        from tumorsynth.volgrid import read_mask, read_volume
        got = read_volume(tmp / "out" / "ph0_volume.nii.gz")
        v, p = make_phantom()
        model = load_stats_model(tmp / "model.json")
        cfg = SynthesisConfig.from_dict({**SynthesisConfig().to_dict(), "seed": 9})
        expect = synthesize_tumor(v, p, model, cfg, case_rng(9, 0))
        assert np.array_equal(got.values, expect.volume_out.values)
        got_mask = read_mask(tmp / "out" / "ph0_mask.nii.gz")
        assert np.array_equal(got_mask.labels, expect.tumor_mask.labels)

    def test_env_out_override(self, phantom_setup, monkeypatch):
        tmp, manifest = phantom_setup
        monkeypatch.setenv("TUMORSYNTH_OUT", str(tmp / "env_out"))
        monkeypatch.setenv("TUMORSYNTH_SEED", "4")
        main(["synthesize", manifest, "--model", str(tmp / "model.json")])
        assert (tmp / "env_out" / "ph0_volume.nii.gz").exists()
        prov = json.loads((tmp / "env_out" / "ph0_provenance.json").read_text())
        assert prov["seed"] == 4

    def test_flag_beats_env(self, phantom_setup, monkeypatch):
        tmp, manifest = phantom_setup
        monkeypatch.setenv("TUMORSYNTH_SEED", "4")
        main(["synthesize", manifest, "--model", str(tmp / "model.json"),
              "--out", str(tmp / "flag_out"), "--seed", "11"])
        prov = json.loads((tmp / "flag_out" / "ph0_provenance.json").read_text())
        assert prov["seed"] == 11

    def test_requires_model(self, phantom_setup, capsys):
        tmp, manifest = phantom_setup
        assert main(["synthesize", manifest]) == 1
        assert "model" in json.loads(capsys.readouterr().err)["message"]


class TestEvaluateCommand:
    def _write_eval_fixture(self, tmp_path):
        """The 2-subject FROC hand fixture, on disk."""
        dims = (8, 8, 8)

        def save(name, voxels, scores=None):
            labels = np.zeros(dims, dtype=np.int32)
            for vx in voxels:
                labels[vx] = 1
            write_mask(Mask(labels=labels, spacing=(1, 1, 1)), tmp_path / f"{name}.nii.gz")
            if scores is not None:
                vals = np.zeros(dims, dtype=np.float32)
                for vx, s in scores.items():
                    vals[vx] = s
                write_volume(Volume(values=vals, spacing=(1, 1, 1)),
                             tmp_path / f"{name}_scores.nii.gz")

        save("gt_a", [(1, 1, 1), (1, 1, 2)])
        save("pred_a", [(1, 1, 1), (5, 5, 5)],
             scores={(1, 1, 1): 0.9, (5, 5, 5): 0.4})
        save("gt_b", [(2, 2, 2)])
        save("pred_b", [(6, 6, 6)], scores={(6, 6, 6): 0.8})
        pred = write_csv(tmp_path / "pred.csv", [
            {"case": "a", "mask": str(tmp_path / "pred_a.nii.gz"),
             "score_map": str(tmp_path / "pred_a_scores.nii.gz")},
            {"case": "b", "mask": str(tmp_path / "pred_b.nii.gz"),
             "score_map": str(tmp_path / "pred_b_scores.nii.gz")},
        ], ["case", "mask", "score_map"])
        gt = write_csv(tmp_path / "gt.csv", [
            {"case": "a", "mask": str(tmp_path / "gt_a.nii.gz")},
            {"case": "b", "mask": str(tmp_path / "gt_b.nii.gz")},
        ], ["case", "mask"])
        return pred, gt

    def test_hand_fixture_sensitivities(self, tmp_path, capsys):
        pred, gt = self._write_eval_fixture(tmp_path)
        rc = main(["evaluate", "--pred", pred, "--gt", gt,
                   "--out", str(tmp_path / "report"), "--fp-targets", "0.5,1.0"])
        assert rc == 0
        results = json.loads((tmp_path / "report" / "results.json").read_text())
        assert results["froc"]["sensitivity_at"]["0.5"] == pytest.approx(0.5)
        assert results["froc"]["sensitivity_at"]["1.0"] == pytest.approx(0.5)
        assert results["dice"]["per_case"]["a"] == pytest.approx(2 * 1 / (2 + 2))

    def test_mismatched_manifests(self, tmp_path, capsys):
        pred, gt = self._write_eval_fixture(tmp_path)
        bad_gt = write_csv(tmp_path / "bad_gt.csv",
                           [{"case": "zzz", "mask": "x.nii"}], ["case", "mask"])
        assert main(["evaluate", "--pred", pred, "--gt", bad_gt]) == 1
        assert "disagree" in json.loads(capsys.readouterr().err)["message"]


class TestTuringExportCommand:
    def test_export(self, tmp_path):
        from test_turing import write_manifests
        manifests = write_manifests(tmp_path / "cases")
        rc = main(["turing-export", "--real", manifests["real"],
                   "--synth", manifests["synth"], "--n-per-class", "2",
                   "--seed", "5", "--out", str(tmp_path / "study")])
        assert rc == 0
        assert len(list((tmp_path / "study").glob("item-*.png"))) == 4
        assert (tmp_path / "study" / "key.csv").exists()
        assert (tmp_path / "study" / "run_record.json").exists()


class TestFitStatsCommand:
    def test_fit_from_synthetic_cohort(self, tmp_path):
        model = build_model()
        cfg = SynthesisConfig(seed=1)
        rows = []
        hu_rng = np.random.default_rng(5)
        for i in range(4):
            v, p = make_phantom(dims=(40, 40, 40),
                                pancreas_hu=float(hu_rng.uniform(70, 110)))
            res = synthesize_tumor(v, p, model, cfg, case_rng(1, i))
            write_volume(res.volume_out, tmp_path / f"v{i}.nii.gz")
            write_mask(p, tmp_path / f"p{i}.nii.gz")
            write_mask(res.tumor_mask, tmp_path / f"t{i}.nii.gz")
            rows.append({"volume": str(tmp_path / f"v{i}.nii.gz"),
                         "pancreas": str(tmp_path / f"p{i}.nii.gz"),
                         "tumor": str(tmp_path / f"t{i}.nii.gz")})
        manifest = write_csv(tmp_path / "cohort.csv", rows, ["volume", "pancreas", "tumor"])
        out = tmp_path / "fitted.json"
        rc = main(["fit-stats", manifest, "--out", str(out), "--tumor-type", "PDAC"])
        assert rc == 0
        fitted = load_stats_model(out)
        assert fitted.n_cases == 4
        sidecar = json.loads((tmp_path / "fitted.json.provenance.json").read_text())
        assert sidecar["command"] == "fit-stats"
