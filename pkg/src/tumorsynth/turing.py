"""Visual Turing test service: sessions mixing real- and synthetic-tumor
slices, served one item at a time over HTTP, with judgments recorded to an
append-only event log and ROC/accuracy results computed on completion.

Reader-facing payloads never carry truth labels or class counts; the event
log on disk is the single source of truth and sessions survive restarts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field

from .detect_eval import SMALL_TUMOR_RADIUS_MM, roc
from .volgrid import WindowSpec, read_mask, read_volume, render_slice

JUDGMENTS = ("real", "synthetic")


class SessionError(Exception):
    """Invalid session operation (unknown id, duplicate response, ...)."""

    def __init__(self, message: str, kind: str = "conflict"):
        super().__init__(message)
        self.kind = kind  # "not_found" | "conflict" | "bad_request"


@dataclass
class SessionItem:
    item_id: str
    case: str
    volume_path: str
    mask_path: str
    slice_index: int
    truth: str                # "real" | "synthetic" -- never sent to readers
    radius_mm: float


@dataclass
class SessionState:
    session_id: str
    items: list
    responses: dict           # item_id -> response dict
    finalized: bool
    window: WindowSpec
    overlay: bool
    seed: int

    @property
    def complete(self) -> bool:
        return self.finalized or len(self.responses) == len(self.items)

    def next_unanswered(self):
        for i, item in enumerate(self.items):
            if item.item_id not in self.responses:
                return i, item
        return None, None


def read_manifest(path) -> list[dict]:
    """Turing manifest CSV: case, volume, tumor_mask columns."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    required = {"case", "volume", "tumor_mask"}
    if not rows or not required.issubset(rows[0].keys()):
        raise ValueError(f"{path}: manifest needs columns {sorted(required)}")
    return rows


def pick_slice(volume_path, mask_path) -> tuple[int, float]:
    """Axial slice with the largest in-slice tumor area, plus the tumor's
    equivalent sphere radius in mm."""
    mask = read_mask(mask_path)
    tum = mask.labels > 0
    if not tum.any():
        raise ValueError(f"{mask_path}: tumor mask is empty")
    per_slice = tum.sum(axis=(0, 1))
    z = int(per_slice.argmax())
    vol_mm3 = float(tum.sum()) * mask.voxel_volume_mm3
    radius = (3.0 * vol_mm3 / (4.0 * math.pi)) ** (1.0 / 3.0)
    return z, radius


class SessionStore:
    """Event-sourced session persistence: one append-only JSONL per session."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _log_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        with open(self._log_path(session_id), "a") as f:
            f.write(json.dumps(event) + "\n")
            f.flush()

    # -- creation -----------------------------------------------------------

    def create_session(self, real_manifest, synth_manifest, n_per_class: int, seed: int,
                       overlay: bool = False, window: WindowSpec | None = None) -> str:
        if n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        window = window or WindowSpec()
        rng = np.random.default_rng(seed)
        items = []
        for truth, manifest in (("real", real_manifest), ("synthetic", synth_manifest)):
            rows = read_manifest(manifest)
            if len(rows) < n_per_class:
                raise ValueError(
                    f"{manifest}: needs >= {n_per_class} rows, has {len(rows)}")
            chosen = rng.choice(len(rows), size=n_per_class, replace=False)
            for ri in chosen:
                row = rows[int(ri)]
                z, radius = pick_slice(row["volume"], row["tumor_mask"])
                items.append(SessionItem(
                    item_id="", case=row["case"], volume_path=row["volume"],
                    mask_path=row["tumor_mask"], slice_index=z, truth=truth,
                    radius_mm=radius))
        order = rng.permutation(len(items))
        items = [items[int(i)] for i in order]
        for i, item in enumerate(items):
            item.item_id = f"item-{i:04d}"

        session_id = uuid.uuid4().hex[:12]
        self._append(session_id, {
            "type": "session_created",
            "session_id": session_id,
            "seed": int(seed),
            "overlay": bool(overlay),
            "window": {"level": window.level, "width": window.width},
            "items": [{
                "item_id": it.item_id, "case": it.case, "volume": it.volume_path,
                "tumor_mask": it.mask_path, "slice_index": it.slice_index,
                "truth": it.truth, "radius_mm": it.radius_mm,
            } for it in items],
        })
        return session_id

    # -- state --------------------------------------------------------------

    def load(self, session_id: str) -> SessionState:
        path = self._log_path(session_id)
        if not path.exists():
            raise SessionError(f"unknown session {session_id!r}", kind="not_found")
        items, responses = [], {}
        finalized = False
        window = WindowSpec()
        overlay = False
        seed = 0
        with open(path) as f:
            for line in f:
                ev = json.loads(line)
                if ev["type"] == "session_created":
                    seed = ev["seed"]
                    overlay = ev["overlay"]
                    window = WindowSpec(level=ev["window"]["level"], width=ev["window"]["width"])
                    items = [SessionItem(
                        item_id=d["item_id"], case=d["case"], volume_path=d["volume"],
                        mask_path=d["tumor_mask"], slice_index=d["slice_index"],
                        truth=d["truth"], radius_mm=d["radius_mm"]) for d in ev["items"]]
                elif ev["type"] == "response_recorded":
                    responses[ev["item_id"]] = ev
                elif ev["type"] == "session_finalized":
                    finalized = True
        return SessionState(session_id=session_id, items=items, responses=responses,
                            finalized=finalized, window=window, overlay=overlay, seed=seed)

    # -- reader operations --------------------------------------------------

    def next_item(self, session_id: str) -> dict:
        state = self.load(session_id)
        if state.complete:
            return {"status": "complete", "answered": len(state.responses),
                    "total": len(state.items)}
        i, item = state.next_unanswered()
        return {
            "status": "active",
            "item_id": item.item_id,
            "index": i,
            "total": len(state.items),
            "answered": len(state.responses),
            "overlay": state.overlay,
            "image_url": f"/sessions/{session_id}/items/{item.item_id}/image",
        }

    def item_png(self, session_id: str, item_id: str,
                 overlay: bool | None = None) -> bytes:
        state = self.load(session_id)
        matches = [it for it in state.items if it.item_id == item_id]
        if not matches:
            raise SessionError(f"unknown item {item_id!r}", kind="not_found")
        item = matches[0]
        volume = read_volume(item.volume_path)
        img = render_slice(volume, "z", item.slice_index, state.window)
        # the toggle exists only for overlay-enabled sessions
        show_overlay = state.overlay if overlay is None else (overlay and state.overlay)
        if not show_overlay:
            return img.png
        mask = read_mask(item.mask_path)
        tumor = (mask.labels[:, :, item.slice_index] > 0).T
        rgb = np.stack([img.pixels] * 3, axis=-1).astype(np.int16)
        rgb[tumor, 0] = np.minimum(255, rgb[tumor, 0] + 80)  # red tint over tumor
        buf = io.BytesIO()
        Image.fromarray(rgb.astype(np.uint8), mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def submit_response(self, session_id: str, item_id: str, judgment: str,
                        confidence: float, elapsed_ms: float | None = None) -> dict:
        if judgment not in JUDGMENTS:
            raise SessionError(f"judgment must be one of {JUDGMENTS}", kind="bad_request")
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            raise SessionError(f"confidence must lie in [0, 1], got {confidence}",
                               kind="bad_request")
        with self._lock(session_id):
            state = self.load(session_id)
            if state.complete:
                raise SessionError("session is already complete")
            if item_id in state.responses:
                raise SessionError(f"item {item_id!r} already answered")
            _, current = state.next_unanswered()
            if current.item_id != item_id:
                raise SessionError(
                    f"out-of-order response: expected {current.item_id!r}, got {item_id!r}")
            self._append(session_id, {
                "type": "response_recorded",
                "item_id": item_id,
                "judgment": judgment,
                "confidence": float(confidence),
                "elapsed_ms": elapsed_ms,
            })
            state = self.load(session_id)
        return {"accepted": True, "answered": len(state.responses),
                "total": len(state.items),
                "status": "complete" if state.complete else "active"}

    def finalize(self, session_id: str) -> dict:
        with self._lock(session_id):
            state = self.load(session_id)
            if not state.finalized:
                self._append(session_id, {"type": "session_finalized"})
        return {"status": "complete", "answered": len(state.responses),
                "total": len(state.items)}

    # -- results ------------------------------------------------------------

    def results(self, session_id: str) -> dict:
        state = self.load(session_id)
        if not state.complete:
            raise SessionError("session is not complete; results are withheld")
        answered = [(it, state.responses[it.item_id])
                    for it in state.items if it.item_id in state.responses]
        if not answered:
            raise SessionError("no responses recorded")
        correct = sum(1 for it, r in answered if r["judgment"] == it.truth)
        labels = [it.truth == "synthetic" for it, _ in answered]
        scores = [r["confidence"] if r["judgment"] == "synthetic" else 1.0 - r["confidence"]
                  for _, r in answered]
        strata = {}
        for name, keep in (("small", lambda it: it.radius_mm < SMALL_TUMOR_RADIUS_MM),
                           ("large", lambda it: it.radius_mm >= SMALL_TUMOR_RADIUS_MM)):
            sub = [(it, r) for it, r in answered if keep(it)]
            hit = sum(1 for it, r in sub if r["judgment"] == it.truth)
            strata[name] = {"n": len(sub), "correct": hit,
                            "accuracy": (hit / len(sub)) if sub else None}
        out = {
            "session_id": session_id,
            "n_items": len(state.items),
            "n_answered": len(answered),
            "accuracy": correct / len(answered),
            "radius_threshold_mm": SMALL_TUMOR_RADIUS_MM,
            "stratified_accuracy": strata,
        }
        if any(labels) and not all(labels):
            curve = roc(labels, scores)
            out["roc"] = curve.to_dict()
        else:
            out["roc"] = None  # degenerate single-class session
        return out


def export_slices(real_manifest, synth_manifest, n_per_class: int, seed: int,
                  out_dir, window: WindowSpec | None = None) -> list[dict]:
    """Write the study slice set to disk: shuffled item PNGs plus key.csv.

    key.csv holds the truth labels and belongs to the study organizer, not
    the readers.
    """
    window = window or WindowSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    items = []
    for truth, manifest in (("real", real_manifest), ("synthetic", synth_manifest)):
        rows = read_manifest(manifest)
        if len(rows) < n_per_class:
            raise ValueError(f"{manifest}: needs >= {n_per_class} rows, has {len(rows)}")
        for ri in rng.choice(len(rows), size=n_per_class, replace=False):
            row = rows[int(ri)]
            z, radius = pick_slice(row["volume"], row["tumor_mask"])
            items.append({"case": row["case"], "volume": row["volume"],
                          "slice_index": z, "truth": truth, "radius_mm": radius})
    items = [items[int(i)] for i in rng.permutation(len(items))]
    key_rows = []
    for i, item in enumerate(items):
        name = f"item-{i:04d}.png"
        img = render_slice(read_volume(item["volume"]), "z", item["slice_index"], window)
        (out / name).write_bytes(img.png)
        key_rows.append({"item": name, "truth": item["truth"], "case": item["case"],
                         "slice_index": item["slice_index"], "radius_mm": item["radius_mm"]})
    with open(out / "key.csv", "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=["item", "truth", "case", "slice_index", "radius_mm"])
        wr.writeheader()
        wr.writerows(key_rows)
    return key_rows


# ---------------------------------------------------------------------------
# HTTP app
# ---------------------------------------------------------------------------

class CreateSession(BaseModel):
    real_manifest: str
    synth_manifest: str
    n_per_class: int = Field(ge=1)
    seed: int = 0
    overlay: bool = False
    window_level: float = 40.0
    window_width: float = 400.0


class SubmitResponse(BaseModel):
    item_id: str
    judgment: str
    confidence: float
    elapsed_ms: float | None = None


def create_app(data_root, ui_dir=None):
    """FastAPI app over a SessionStore; optionally serves the reader UI bundle."""
    from fastapi import FastAPI, HTTPException, Response

    store = SessionStore(data_root)
    app = FastAPI(title="tumorsynth visual Turing test")

    def _http(err: SessionError) -> HTTPException:
        code = {"not_found": 404, "conflict": 409, "bad_request": 422}[err.kind]
        return HTTPException(status_code=code, detail=str(err))

    @app.post("/sessions", status_code=201)
    def post_session(req: CreateSession):
        try:
            sid = store.create_session(
                req.real_manifest, req.synth_manifest, req.n_per_class, req.seed,
                overlay=req.overlay,
                window=WindowSpec(level=req.window_level, width=req.window_width))
        except (ValueError, OSError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        state = store.load(sid)
        return {"session_id": sid, "total": len(state.items)}

    @app.get("/sessions/{sid}/next")
    def get_next(sid: str):
        try:
            return store.next_item(sid)
        except SessionError as e:
            raise _http(e)

    @app.get("/sessions/{sid}/items/{item_id}/image")
    def get_image(sid: str, item_id: str, overlay: bool | None = None):
        try:
            png = store.item_png(sid, item_id, overlay)
        except SessionError as e:
            raise _http(e)
        return Response(content=png, media_type="image/png")

    @app.post("/sessions/{sid}/responses")
    def post_response(sid: str, req: SubmitResponse):
        try:
            return store.submit_response(sid, req.item_id, req.judgment,
                                         req.confidence, req.elapsed_ms)
        except SessionError as e:
            raise _http(e)

    @app.post("/sessions/{sid}/finalize")
    def post_finalize(sid: str):
        try:
            return store.finalize(sid)
        except SessionError as e:
            raise _http(e)

    @app.get("/sessions/{sid}/results")
    def get_results(sid: str):
        try:
            return store.results(sid)
        except SessionError as e:
            raise _http(e)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
