"""Session, job, and review bookkeeping for the interactive service.

Each session owns one annotation project over one dataset manifest. Writes
are serialized through the session lock (single writer); mask results from a
finished propagation job are immutable, and review decisions only flip their
accept/reject flag. Everything a session has done is reconstructable from
the project's provenance log.
"""

from __future__ import annotations

import io
import threading
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..annotation import (
    MANUAL,
    NEGATIVE,
    POSITIVE,
    AnnotationProject,
    ClassMask,
    ScatterAnnotation,
    add_annotation,
)
from ..errors import AnnotationError, ClickliftError, ProviderError
from ..pipeline import (
    DatasetCache,
    build_mask_provider,
    build_project,
    densify_frames,
    evaluate_run,
    finalize_frames,
    propagate_clicks,
    write_outputs,
)
from ..storage import load_manifest


@dataclass
class SessionSettings:
    """Per-session pipeline knobs; fixed at session creation."""

    seed: int = 0
    tau: float = 0.7
    depth: int = 4
    flow_provider: str = "egomotion"
    mask_provider: str = "region_grow"
    region_grow_tolerance: float = 12.0


class _ProviderConfig:
    """Adapter so build_mask_provider can read session settings."""

    def __init__(self, settings: SessionSettings):
        self.mask_provider = settings.mask_provider
        self.region_grow_tolerance = settings.region_grow_tolerance


@dataclass(eq=False)
class MaskEntry:
    """One densified class mask plus its review state.

    Masks on manually annotated frames are trusted and auto-accepted;
    propagated frames' masks start undecided and wait in the review queue.
    """

    mask: ClassMask
    auto: bool
    decision: Optional[str] = None  # "accepted" | "rejected" | None


def mask_png_bytes(mask: np.ndarray) -> bytes:
    """8-bit single-channel PNG: 255 inside the mask, 0 outside."""
    img = Image.fromarray((np.asarray(mask, dtype=bool) * np.uint8(255)), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _zip_tree_bytes(root: Path) -> bytes:
    """Deterministic zip of a directory: sorted names, zeroed timestamps."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED, compresslevel=6) as zf:
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            info = zipfile.ZipInfo(path.relative_to(root).as_posix(), date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, path.read_bytes())
    return buf.getvalue()


class Session:
    """One annotator's workspace over one manifest."""

    def __init__(self, session_id: str, manifest_path: Path | str, settings: SessionSettings):
        self.session_id = session_id
        self.manifest_path = Path(manifest_path)
        self.settings = settings
        self.lock = threading.RLock()
        self.manifest = load_manifest(self.manifest_path)
        self.cache = DatasetCache(self.manifest)
        self.project = build_project(self.manifest)
        self.mask_provider = build_mask_provider(_ProviderConfig(settings))
        self.masks: dict[tuple[str, int], MaskEntry] = {}
        self.project.record_event(
            "session_created",
            manifest_path=str(self.manifest_path),
            settings=asdict(settings),
        )

    # -- clicks ------------------------------------------------------------

    def _preview_for(self, frame_id: str, class_id: int) -> Optional[bytes]:
        anns = self.project.annotations_for(frame_id)
        positives = [(a.u, a.v) for a in anns if a.class_id == class_id and a.polarity == POSITIVE]
        negatives = [
            (a.u, a.v)
            for a in anns
            if (a.class_id == class_id and a.polarity == NEGATIVE)
            or (a.class_id != class_id and a.polarity == POSITIVE)
        ]
        if not positives:
            return None
        try:
            proposal = self.mask_provider.propose(self.cache.image(frame_id), positives, negatives)
        except ProviderError:
            return None
        if proposal is None:
            return None
        return mask_png_bytes(proposal.mask)

    def submit_click(
        self,
        frame_id: str,
        u: int,
        v: int,
        class_id: int,
        polarity: str,
        want_preview: bool = True,
    ) -> tuple[list[ScatterAnnotation], Optional[str], Optional[bytes]]:
        with self.lock:
            ann = ScatterAnnotation(
                frame_id=frame_id, u=u, v=v, class_id=class_id, polarity=polarity
            )
            warning = add_annotation(self.project, ann)
            preview = self._preview_for(frame_id, class_id) if want_preview else None
            return self.project.annotations_for(frame_id), warning, preview

    # -- propagation and review ---------------------------------------------

    def run_propagation(self, depth: Optional[int] = None) -> None:
        """Propagate clicks, densify every clicked frame, rebuild the queue."""
        with self.lock:
            effective = self.settings.depth if depth is None else depth
            propagate_clicks(self.project, self.cache, effective, self.settings.flow_provider)
            anchors = {
                fid
                for fid, anns in self.project.annotations.items()
                if any(a.origin == MANUAL for a in anns)
            }
            masks_by_frame = densify_frames(self.project, self.cache, self.mask_provider)
            entries: dict[tuple[str, int], MaskEntry] = {}
            for fid, masks in masks_by_frame.items():
                for m in masks:
                    auto = fid in anchors
                    entries[(fid, m.class_id)] = MaskEntry(
                        mask=m, auto=auto, decision="accepted" if auto else None
                    )
            self.masks = entries

    def pending_entries(self) -> list[tuple[str, int, MaskEntry]]:
        with self.lock:
            return [
                (fid, cid, entry)
                for (fid, cid), entry in sorted(self.masks.items())
                if not entry.auto
            ]

    def pending_remaining(self) -> int:
        return sum(1 for _, _, e in self.pending_entries() if e.decision is None)

    def review(self, frame_id: str, class_id: int, action: str) -> tuple[str, int]:
        with self.lock:
            entry = self.masks.get((frame_id, class_id))
            if entry is None:
                raise AnnotationError(f"no pending mask for frame {frame_id!r} class {class_id}")
            decision = "accepted" if action == "accept" else "rejected"
            entry.decision = decision
            self.project.record_event(
                "mask_review", frame_id=frame_id, class_id=class_id, action=action
            )
            return decision, self.pending_remaining()

    # -- export --------------------------------------------------------------

    def accepted_masks_by_frame(self) -> dict[str, list[ClassMask]]:
        kept: dict[str, list[ClassMask]] = {}
        for (fid, _cid), entry in sorted(self.masks.items()):
            if entry.decision == "accepted":
                kept.setdefault(fid, []).append(entry.mask)
        return kept

    def export_zip(self) -> bytes:
        """Dense labels + report, bundled as a deterministic zip archive."""
        import tempfile

        with self.lock:
            results = finalize_frames(
                self.project, self.cache, self.accepted_masks_by_frame(), self.settings.tau
            )
            report = evaluate_run(self.project, self.cache, results)
            with tempfile.TemporaryDirectory(prefix="clicklift-export-") as tmp:
                write_outputs(Path(tmp), results, report, project=None)
                return _zip_tree_bytes(Path(tmp))


@dataclass(eq=False)
class JobRecord:
    job_id: str
    session_id: str
    status: str = "queued"  # queued | running | done | failed
    error: Optional[str] = None
    pending: list[dict] = field(default_factory=list)


class SessionStore:
    """In-process registry of sessions and propagation jobs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._jobs: dict[str, JobRecord] = {}
        self._session_counter = 0
        self._job_counter = 0

    def create_session(self, manifest_path: str, settings: SessionSettings) -> Session:
        with self._lock:
            self._session_counter += 1
            session_id = f"s{self._session_counter:04d}"
        session = Session(session_id, manifest_path, settings)
        with self._lock:
            self._sessions[session_id] = session
        return session

    def get_session(self, session_id: str) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(session_id)

    def get_job(self, job_id: str) -> Optional[JobRecord]:
        with self._lock:
            return self._jobs.get(job_id)

    def start_propagation(self, session: Session, depth: Optional[int]) -> JobRecord:
        with self._lock:
            self._job_counter += 1
            job = JobRecord(job_id=f"j{self._job_counter:04d}", session_id=session.session_id)
            self._jobs[job.job_id] = job

        def _run():
            job.status = "running"
            try:
                session.run_propagation(depth)
                job.pending = [
                    {
                        "frame_id": fid,
                        "class_id": cid,
                        "decision": entry.decision,
                        "pixels": entry.mask.area,
                    }
                    for fid, cid, entry in session.pending_entries()
                ]
                job.status = "done"
            except Exception as exc:  # job results must report, not crash the app
                job.error = str(exc)
                job.status = "failed"

        threading.Thread(target=_run, name=f"propagation-{job.job_id}", daemon=True).start()
        return job


def rebuild_session_state(manifest_path: Path | str, provenance: list[dict]) -> Session:
    """Replay a provenance log into a fresh session (event-sourcing check).

    The replayed session matches the original's annotations, mask queue, and
    review decisions; it does not re-record provenance while replaying.
    """
    settings = SessionSettings()
    for event in provenance:
        if event.get("event") == "session_created":
            settings = SessionSettings(**event["settings"])
            break
    session = Session("replay", manifest_path, settings)
    project = session.project
    for event in provenance:
        kind = event.get("event")
        if kind == "annotation_added":
            ann = ScatterAnnotation.from_dict(event["annotation"])
            project.annotations.setdefault(ann.frame_id, []).append(ann)
        elif kind == "propagation_reset":
            for fid in list(project.annotations):
                kept = [a for a in project.annotations[fid] if a.origin == MANUAL]
                if kept:
                    project.annotations[fid] = kept
                else:
                    del project.annotations[fid]
            session.masks = {}
        elif kind == "propagation_run":
            anchors = set(event.get("anchors", ()))
            masks_by_frame = densify_frames(project, session.cache, session.mask_provider)
            session.masks = {
                (fid, m.class_id): MaskEntry(
                    mask=m, auto=fid in anchors, decision="accepted" if fid in anchors else None
                )
                for fid, masks in masks_by_frame.items()
                for m in masks
            }
        elif kind == "mask_review":
            entry = session.masks.get((event["frame_id"], event["class_id"]))
            if entry is not None:
                entry.decision = "accepted" if event["action"] == "accept" else "rejected"
    return session
