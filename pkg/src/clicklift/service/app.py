"""HTTP API for the interactive annotation workbench.

All endpoints speak JSON; frame images and masks travel as PNG. Long-running
propagation is an async job with polling. Bind address and port come from the
CLI (``clicklift serve``) or any ASGI runner pointed at ``app``.
"""

from __future__ import annotations

import base64

from fastapi import FastAPI, HTTPException, Query, Response

from ..annotation import AnnotationError
from ..errors import ClickliftError, ConfigError, StorageError
from .schemas import (
    AnnotationModel,
    ClickRequest,
    ClickResponse,
    FrameInfoModel,
    FramesResponse,
    JobResponse,
    MaskStateModel,
    PendingMaskModel,
    PropagateRequest,
    PropagateResponse,
    ReviewRequest,
    ReviewResponse,
    SessionCreateRequest,
    SessionCreateResponse,
)
from .sessions import Session, SessionSettings, SessionStore, mask_png_bytes


def _annotation_models(annotations) -> list[AnnotationModel]:
    return [AnnotationModel(**a.to_dict()) for a in annotations]


def create_app() -> FastAPI:
    app = FastAPI(title="clicklift annotation service", version="0.1.0")
    store = SessionStore()
    app.state.store = store

    def _session_or_404(session_id: str) -> Session:
        session = store.get_session(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    @app.post("/sessions", response_model=SessionCreateResponse)
    def create_session(request: SessionCreateRequest):
        settings = SessionSettings(
            seed=request.seed,
            tau=request.tau,
            depth=request.depth,
            flow_provider=request.flow_provider,
            mask_provider=request.mask_provider,
            region_grow_tolerance=request.region_grow_tolerance,
        )
        try:
            session = store.create_session(request.manifest_path, settings)
        except (StorageError, ConfigError, OSError) as exc:
            raise HTTPException(status_code=400, detail=f"cannot open manifest: {exc}")
        return SessionCreateResponse(session_id=session.session_id)

    @app.get("/sessions/{session_id}/frames", response_model=FramesResponse)
    def list_frames(session_id: str):
        session = _session_or_404(session_id)
        with session.lock:
            pending_by_frame: dict[str, int] = {}
            for (fid, _cid), entry in session.masks.items():
                if not entry.auto:
                    pending_by_frame[fid] = pending_by_frame.get(fid, 0) + 1
            frames = []
            for index, record in enumerate(session.manifest.frames):
                anns = session.project.annotations_for(record.frame_id)
                frames.append(
                    FrameInfoModel(
                        frame_id=record.frame_id,
                        index=index,
                        image_width=record.image_width,
                        image_height=record.image_height,
                        manual_annotations=sum(1 for a in anns if a.origin == "manual"),
                        propagated_annotations=sum(1 for a in anns if a.origin == "propagated"),
                        pending_masks=pending_by_frame.get(record.frame_id, 0),
                        has_ground_truth=record.gt_image_labels_path is not None,
                        annotations=_annotation_models(anns),
                    )
                )
            mask_states = [
                MaskStateModel(
                    frame_id=fid,
                    class_id=cid,
                    auto=entry.auto,
                    decision=entry.decision,
                    pixels=entry.mask.area,
                )
                for (fid, cid), entry in sorted(session.masks.items())
            ]
        return FramesResponse(
            session_id=session_id,
            class_names=list(session.manifest.taxonomy.names),
            frames=frames,
            masks=mask_states,
        )

    @app.get("/frames/{frame_id}/image")
    def frame_image(frame_id: str, session_id: str = Query(...)):
        session = _session_or_404(session_id)
        try:
            record = session.manifest.frame(frame_id)
        except ClickliftError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=record.image_path.read_bytes(), media_type="image/png")

    @app.get("/sessions/{session_id}/masks/{frame_id}/{class_id}")
    def mask_image(session_id: str, frame_id: str, class_id: int):
        session = _session_or_404(session_id)
        with session.lock:
            entry = session.masks.get((frame_id, class_id))
            if entry is None:
                raise HTTPException(
                    status_code=404, detail=f"no mask for frame {frame_id!r} class {class_id}"
                )
            payload = mask_png_bytes(entry.mask.mask)
        return Response(content=payload, media_type="image/png")

    @app.post("/sessions/{session_id}/clicks", response_model=ClickResponse)
    def submit_click(session_id: str, request: ClickRequest):
        session = _session_or_404(session_id)
        try:
            annotations, warning, preview = session.submit_click(
                frame_id=request.frame_id,
                u=request.u,
                v=request.v,
                class_id=request.class_id,
                polarity=request.polarity,
                want_preview=request.preview,
            )
        except AnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ClickResponse(
            annotations=_annotation_models(annotations),
            warning=warning,
            preview_png_base64=(
                None if preview is None else base64.b64encode(preview).decode("ascii")
            ),
        )

    @app.post("/sessions/{session_id}/propagate", response_model=PropagateResponse)
    def run_propagation(session_id: str, request: PropagateRequest):
        session = _session_or_404(session_id)
        job = store.start_propagation(session, request.depth)
        return PropagateResponse(job_id=job.job_id)

    @app.get("/jobs/{job_id}", response_model=JobResponse)
    def job_status(job_id: str):
        job = store.get_job(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return JobResponse(
            job_id=job.job_id,
            status=job.status,
            error=job.error,
            pending=[PendingMaskModel(**p) for p in job.pending],
        )

    @app.post("/sessions/{session_id}/review", response_model=ReviewResponse)
    def review_mask(session_id: str, request: ReviewRequest):
        session = _session_or_404(session_id)
        try:
            decision, remaining = session.review(
                request.frame_id, request.class_id, request.action
            )
        except AnnotationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return ReviewResponse(
            frame_id=request.frame_id,
            class_id=request.class_id,
            decision=decision,
            pending_remaining=remaining,
        )

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str):
        session = _session_or_404(session_id)
        payload = session.export_zip()
        return Response(
            content=payload,
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="{session_id}.zip"'},
        )

    return app


app = create_app()
