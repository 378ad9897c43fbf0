"""
Visual Turing test: sessions, judgments, results
================================================

Creates a reader session mixing real- and synthetic-tumor slices, plays a
scripted reader against the session store, and prints accuracy/ROC.

For the interactive study, run the HTTP service instead:

    tumorsynth serve --data-root study_data --ui-dir frontend/dist --port 8008

then open http://127.0.0.1:8008/ui/ in a browser.
"""

import csv
from pathlib import Path

import numpy as np

from tumorsynth import SynthesisConfig, make_phantom, synthesize_tumor, write_mask, write_volume
from tumorsynth.synth import case_rng
from tumorsynth.turing import SessionStore

from demo_helpers import demo_model

out = Path(__file__).parent / "output" / "reader_study"
out.mkdir(parents=True, exist_ok=True)

# build 8 "real" and 8 synthetic tumor cases (here both synthesized, with
# different seeds standing in for the two sources)
model = demo_model()
manifests = {}
for kind, seed in (("real", 100), ("synth", 200)):
    rows = []
    for i in range(8):
        volume, pancreas = make_phantom(spacing=(2.0, 2.0, 2.0))
        result = synthesize_tumor(volume, pancreas, model,
                                  SynthesisConfig(seed=seed), case_rng(seed, i))
        vp = out / f"{kind}{i}_vol.nii.gz"
        mp = out / f"{kind}{i}_mask.nii.gz"
        write_volume(result.volume_out, vp)
        write_mask(result.tumor_mask, mp)
        rows.append({"case": f"{kind}{i}", "volume": str(vp), "tumor_mask": str(mp)})
    manifests[kind] = out / f"{kind}.csv"
    with open(manifests[kind], "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=["case", "volume", "tumor_mask"])
        wr.writeheader()
        wr.writerows(rows)

store = SessionStore(out / "data")
sid = store.create_session(str(manifests["real"]), str(manifests["synth"]),
                           n_per_class=8, seed=3)
print("session", sid, "with", len(store.load(sid).items), "items")

# a scripted reader guessing by coin flip with graded confidence
rng = np.random.default_rng(9)
while True:
    nxt = store.next_item(sid)
    if nxt["status"] == "complete":
        break
    judgment = "synthetic" if rng.random() < 0.5 else "real"
    confidence = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
    store.submit_response(sid, nxt["item_id"], judgment, confidence)

results = store.results(sid)
print(f"accuracy: {results['accuracy']:.2f}")
print(f"AUC: {results['roc']['auc']:.3f}")
for name, s in results["stratified_accuracy"].items():
    acc = "n/a" if s["accuracy"] is None else f"{s['accuracy']:.2f}"
    print(f"  {name} tumors (<>{results['radius_threshold_mm']} mm): "
          f"{s['correct']}/{s['n']} = {acc}")
