"""Pydantic request/response models for the annotation HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class SessionCreateRequest(BaseModel):
    manifest_path: str
    seed: int = 0
    tau: float = Field(default=0.7, ge=0.0, le=1.0)
    depth: int = Field(default=4, ge=0)
    flow_provider: str = "egomotion"
    mask_provider: str = "region_grow"
    region_grow_tolerance: float = Field(default=12.0, ge=0.0)


class SessionCreateResponse(BaseModel):
    session_id: str


class AnnotationModel(BaseModel):
    frame_id: str
    u: int
    v: int
    class_id: int
    polarity: str
    origin: str
    source_frame_id: str


class FrameInfoModel(BaseModel):
    frame_id: str
    index: int
    image_width: int
    image_height: int
    manual_annotations: int
    propagated_annotations: int
    pending_masks: int
    has_ground_truth: bool
    annotations: list[AnnotationModel]


class MaskStateModel(BaseModel):
    frame_id: str
    class_id: int
    auto: bool
    decision: Optional[str] = None
    pixels: int


class FramesResponse(BaseModel):
    session_id: str
    class_names: list[str]
    frames: list[FrameInfoModel]
    masks: list[MaskStateModel] = []


class ClickRequest(BaseModel):
    frame_id: str
    u: int
    v: int
    class_id: int
    polarity: Literal["positive", "negative"] = "positive"
    preview: bool = True


class ClickResponse(BaseModel):
    annotations: list[AnnotationModel]
    warning: Optional[str] = None
    preview_png_base64: Optional[str] = None


class PropagateRequest(BaseModel):
    depth: Optional[int] = Field(default=None, ge=0)


class PropagateResponse(BaseModel):
    job_id: str


class PendingMaskModel(BaseModel):
    frame_id: str
    class_id: int
    decision: Optional[str] = None
    pixels: int


class JobResponse(BaseModel):
    job_id: str
    status: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None
    pending: list[PendingMaskModel] = []


class ReviewRequest(BaseModel):
    frame_id: str
    class_id: int
    action: Literal["accept", "reject"]


class ReviewResponse(BaseModel):
    frame_id: str
    class_id: int
    decision: str
    pending_remaining: int
