"""HTTP service hosting live annotation sessions.

JSON API over one dataset: create a session on a mirror, fetch patches as
base64 PNGs (depth preview, current mask, hint overlay), post polyline
strokes that are rasterized server-side and refined, undo, and read the
session report. Masks travel as base64 PNG; hint maps additionally as
run-length data so thin clients can diff them cheaply. Each session owns a
lock (writes serialized, reads snapshot under it briefly) and an
append-only journal file, so concurrent sessions never interleave.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .config import Config
from .hints import polyline_hint
from .preprocess import Mirror, list_mirror_ids, load_mirror
from .refine import make_refiner
from .session import Session, rle_encode
from .strokes import StrokeWidthStats, compute_stroke_stats, get_stroke_widths

__all__ = ["create_app"]

_STATUS_BY_CODE = {
    "not-found": 404,
    "invalid-argument": 400,
    "invalid-hint": 400,
    "shape-mismatch": 400,
    "wrong-mode": 400,
    "budget-exhausted": 400,
    "nothing-to-undo": 400,
    "backend-unavailable": 503,
    "timeout": 503,
    "protocol-error": 502,
}


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _error_response(exc: Exception) -> JSONResponse:
    code = getattr(exc, "code", None)
    if not isinstance(code, str):
        if isinstance(exc, FileNotFoundError):
            code = "not-found"
        elif isinstance(exc, ValueError):
            code = "invalid-argument"
        else:
            code = "internal-error"
    status = _STATUS_BY_CODE.get(code, 500)
    return JSONResponse({"error": code, "message": str(exc)}, status_code=status)


def _png_b64(image: np.ndarray) -> str:
    from PIL import Image

    buffer = io.BytesIO()
    Image.fromarray(image, mode="L").save(buffer, format="PNG")
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def _depth_preview(depth: np.ndarray) -> np.ndarray:
    lo, hi = float(depth.min()), float(depth.max())
    if hi <= lo:
        return np.zeros(depth.shape, dtype=np.uint8)
    return ((depth - lo) / (hi - lo) * 255.0).astype(np.uint8)


def _mask_png(mask: np.ndarray) -> str:
    return _png_b64((mask.astype(np.uint8)) * 255)


def _hints_png(delta: np.ndarray) -> str:
    return _png_b64(((delta.astype(np.int16) + 1) * 255 // 2).astype(np.uint8))


class CreateSessionBody(BaseModel):
    mirror_id: str
    journal: bool = True


class HintBody(BaseModel):
    patch: int = Field(ge=0)
    points: list = Field(min_length=1)
    width: float = Field(ge=1.0, le=64.0)
    sign: int


class _LiveSession:
    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()


def _fallback_stats() -> StrokeWidthStats:
    # Hint-width statistics are only consulted by simulated hint
    # generation; live sessions never sample from them. Still, a session
    # needs a stats object, so an uninformative one stands in when the
    # dataset ships no ground truth.
    return StrokeWidthStats(raw_widths=[], mu=5.0, sigma=1.0, gamma_shape=None,
                            gamma_loc=None, gamma_scale=None, n_filtered=0)


def create_app(cfg: Config, journal_dir=None, ui_dir=None) -> FastAPI:
    cfg.validate()
    app = FastAPI(title="etchloop annotation service")
    journals = Path(journal_dir) if journal_dir else Path(cfg.dataset_root) / "journals"
    sessions: dict[str, _LiveSession] = {}
    registry_lock = threading.Lock()
    mirror_cache: dict[str, Mirror] = {}
    stats_cache: list = []

    def get_mirror(mirror_id: str) -> Mirror:
        with registry_lock:
            if mirror_id not in mirror_cache:
                if mirror_id not in list_mirror_ids(cfg.dataset_root):
                    raise ServiceError("not-found", f"unknown mirror {mirror_id!r}")
                mirror_cache[mirror_id] = load_mirror(cfg.dataset_root, mirror_id,
                                                      require_gt=False)
            return mirror_cache[mirror_id]

    def get_stats() -> StrokeWidthStats:
        with registry_lock:
            if not stats_cache:
                widths = []
                for mirror_id in list_mirror_ids(cfg.dataset_root):
                    if mirror_id not in mirror_cache:
                        mirror_cache[mirror_id] = load_mirror(
                            cfg.dataset_root, mirror_id, require_gt=False)
                    gt = mirror_cache[mirror_id].gt
                    if gt is not None:
                        widths.extend(get_stroke_widths(gt))
                try:
                    stats_cache.append(compute_stroke_stats(widths))
                except ValueError:
                    stats_cache.append(_fallback_stats())
            return stats_cache[0]

    def get_session(session_id: str) -> _LiveSession:
        with registry_lock:
            if session_id not in sessions:
                raise ServiceError("not-found", f"unknown session {session_id!r}")
            return sessions[session_id]

    def session_summary(session: Session) -> dict:
        # gt is unavailable live, so the suggested patch order is a plain
        # activity heuristic: least-touched kept patches first.
        activity = [0] * session.patch_count()
        for entry in session.history:
            activity[entry.patch] += 1
        kept = [k for k in range(session.patch_count()) if session.grid.keep[k]]
        suggested = sorted(kept, key=lambda k: (activity[k], k))
        return {
            "annotated_pixels": session.annotated_pixels(),
            "interaction_count": session.interaction_count,
            "activity": activity,
            "suggested": suggested,
            "conservative_width": session.stats.conservative_width(),
        }

    def patch_payload(live: _LiveSession, k: int) -> dict:
        session = live.session
        with live.lock:
            view = session.patch_view(k)
            summary = session_summary(session)
        return {
            "patch": k,
            "origin": list(session.grid.origins[k]),
            "patch_size": session.grid.patch_size,
            "valid": list(session.grid.valid_extent(k)),
            "depth_png": _png_b64(_depth_preview(view["depth"])),
            "mask_png": _mask_png(view["pred"]),
            "hints_png": _hints_png(view["delta"]),
            "hints_rle": rle_encode(view["delta"]),
            **summary,
        }

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/mirrors")
    def list_mirrors():
        # The browser picker has no filesystem access, so the dataset
        # listing has to come over the wire.
        try:
            return {"mirrors": list_mirror_ids(cfg.dataset_root)}
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)

    @app.post("/v1/session")
    def create_session(body: CreateSessionBody):
        try:
            mirror = get_mirror(body.mirror_id)
            if mirror.pred_init is None:
                raise ServiceError("not-found",
                                   f"{body.mirror_id}: no initial prediction")
            refiner = make_refiner(cfg.backend, gt=mirror.gt)
            session_id = uuid.uuid4().hex
            journal_path = None
            if body.journal:
                journals.mkdir(parents=True, exist_ok=True)
                journal_path = journals / f"{session_id}.jsonl"
            session = Session(mirror, refiner, get_stats(), mode="live",
                              width_mode=cfg.width_mode, seed=cfg.seed,
                              cap=cfg.cap, patch_size=cfg.patch_size,
                              journal_path=journal_path)
            with registry_lock:
                sessions[session_id] = _LiveSession(session)
            return {
                "session_id": session_id,
                "mirror_id": body.mirror_id,
                "patch_size": session.grid.patch_size,
                "grid": [session.grid.height, session.grid.width],
                "patches": session.patch_count(),
                "keep": list(session.grid.keep),
                "journal": None if journal_path is None else str(journal_path),
                **session_summary(session),
            }
        except Exception as exc:  # noqa: BLE001 - mapped to wire errors
            return _error_response(exc)

    @app.get("/v1/session/{session_id}/patch/{k}")
    def get_patch(session_id: str, k: int):
        try:
            live = get_session(session_id)
            return patch_payload(live, k)
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)

    @app.post("/v1/session/{session_id}/hint")
    def post_hint(session_id: str, body: HintBody):
        try:
            if body.sign not in (1, -1):
                raise ServiceError("invalid-argument",
                                   f"sign must be 1 or -1, got {body.sign}")
            points = [(float(p[0]), float(p[1])) for p in body.points]
            live = get_session(session_id)
            session = live.session
            size = session.grid.patch_size
            hint = polyline_hint((size, size), points, body.width, body.sign)
            with live.lock:
                refined = session.apply_live_hint(body.patch, hint)
                delta = session.grid.crop(session._delta, body.patch)
                summary = session_summary(session)
            return {
                "patch": body.patch,
                "mask_png": _mask_png(refined),
                "hints_png": _hints_png(delta),
                "hints_rle": rle_encode(delta),
                **summary,
            }
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)

    @app.post("/v1/session/{session_id}/undo")
    def post_undo(session_id: str):
        try:
            live = get_session(session_id)
            with live.lock:
                k = live.session.undo()
            return patch_payload(live, k)
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)

    @app.get("/v1/session/{session_id}/report")
    def get_report(session_id: str):
        try:
            live = get_session(session_id)
            with live.lock:
                text = live.session.report_csv_text()
            return PlainTextResponse(text, media_type="text/csv")
        except Exception as exc:  # noqa: BLE001
            return _error_response(exc)

    ui_root = Path(ui_dir) if ui_dir else Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_root.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_root, html=True), name="ui")

    return app
