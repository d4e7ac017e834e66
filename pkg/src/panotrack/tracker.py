"""Track lifecycle for the feedback tracker, in end-to-end and data-association modes.

Per frame:

1. predict every live track;
2. turn live tracks into prior instances (``make_instances``);
3. split the frame's detections into bound ``D_F`` and free ``D_L``
   (``decode_with_priors``);
4. apply the lifecycle rules of the configured mode.

Status machine: tentative -> active -> lost -> removed, with lost -> active on a
re-match while the track is still within ``max_age``. A track is removed on its
``max_age``-th consecutive frame without an update, so ``max_age = 1`` deletes
unmatched tracks immediately.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import motion
from .association import DEFAULT_GATE, Detection, build_cost_matrix, cascade_match, hungarian
from .feedback import FlexiTrackInstance, decode_with_priors, make_instances
from .geometry import PanoBox, angular_delta
from .mot_io import AnnotationRecord, MotValidationError, SequenceMeta


class TrackerError(RuntimeError):
    pass


class ConsistencyError(TrackerError):
    """A bound detection names a track that does not exist (or no longer exists)."""


class Status(str, enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class TrackerConfig:
    tau_init: float = 0.55
    tau_update: float = 0.45
    mode: str = "e2e"
    gate_radius: float = 50.0
    noise_scale: float = 0.5
    feature_noise_scale: float | None = None
    max_age: int = 1
    min_hits: int = 1
    conf_split: float = 0.6
    cascade: bool = False
    iou_gate: float = DEFAULT_GATE
    da_rebind: bool = False
    rng_seed: int = 0
    panoramic: bool = True
    # fill frames a track missed (at most max_age - 1 in a row) once it is re-matched
    interpolate: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("tau_init", "tau_update", "conf_split"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mode not in ("e2e", "da"):
            raise ValueError(f"mode must be 'e2e' or 'da', got {self.mode!r}")
        if not self.gate_radius > 0:
            raise ValueError(f"gate_radius must be positive, got {self.gate_radius}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be non-negative, got {self.noise_scale}")
        if self.feature_noise_scale is not None and self.feature_noise_scale < 0:
            raise ValueError("feature_noise_scale must be non-negative")
        if self.max_age < 1 or self.min_hits < 1:
            raise ValueError("max_age and min_hits must be at least 1")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError(f"iou_gate must lie in [0, 1], got {self.iou_gate}")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Track:
    track_id: int
    kstate: motion.KalmanState
    score: float
    class_id: int
    age: int = 1
    hits: int = 1
    time_since_update: int = 0
    status: Status = Status.TENTATIVE
    last_box: PanoBox | None = None

    @property
    def box(self) -> PanoBox:
        return self.kstate.box()


def detection_from_record(rec: AnnotationRecord, W: float) -> Detection:
    return Detection(
        PanoBox.from_ltwh(rec.left, rec.top, min(rec.width, W), rec.height, W),
        rec.confidence,
        rec.class_id,
        rec.track_id,
    )


def record_from_box(
    frame_id: int, track_id: int, box: PanoBox, score: float, class_id: int, panoramic: bool
) -> AnnotationRecord:
    left = box.left if panoramic else box.cx - box.w / 2.0
    return AnnotationRecord(frame_id, track_id, left, box.top, box.w, box.h, score, class_id, 1.0)


class Tracker:
    """Mutable tracker state for one sequence. Not safe for concurrent use."""

    def __init__(
        self,
        config: TrackerConfig,
        image_width: float,
        image_height: float,
        motion_config: motion.MotionConfig = motion.MotionConfig(),
        keep_history: bool = False,
    ):
        config.validate()
        self.config = config
        self.W = float(image_width)
        self.H = float(image_height)
        self.motion_config = motion_config
        self.tracks: list[Track] = []
        self.next_id = 1
        self.frame_id = 0
        self._predicted_for: int | None = None
        self.last_actions: list[tuple[str, int]] = []
        self.keep_history = keep_history
        self.backfill: list[AnnotationRecord] = []
        self.history: list[tuple[int, list[FlexiTrackInstance], list[Detection]]] = []

    # -- helpers -----------------------------------------------------------

    def _by_id(self) -> dict[int, Track]:
        return {t.track_id: t for t in self.tracks}

    def _new_track(self, det: Detection) -> Track:
        t = Track(
            track_id=self.next_id,
            kstate=motion.init_state(det.box, self.motion_config, wrap=self.config.panoramic),
            score=det.score,
            class_id=det.class_id,
            last_box=det.box,
        )
        if self.config.min_hits <= 1:
            t.status = Status.ACTIVE
        self.next_id += 1
        self.tracks.append(t)
        return t

    def _update(self, t: Track, det: Detection) -> None:
        gap = t.time_since_update
        if self.config.interpolate and gap > 1 and t.last_box is not None:
            self._interpolate(t, t.last_box, det.box, gap)
        t.kstate = motion.update(t.kstate, det.box, self.motion_config)
        t.score = det.score
        t.hits += 1
        t.time_since_update = 0
        t.last_box = det.box
        if t.status in (Status.LOST, Status.TENTATIVE) and t.hits >= self.config.min_hits:
            t.status = Status.ACTIVE
        elif t.status == Status.LOST:
            t.status = Status.TENTATIVE

    def _interpolate(self, t: Track, a: PanoBox, b: PanoBox, gap: int) -> None:
        if t.hits + 1 < self.config.min_hits:
            return
        frame = self._predicted_for
        dx = angular_delta(a.cx, b.cx, a.W) if self.config.panoramic else b.cx - a.cx
        for g in range(1, gap):
            f = g / gap
            box = PanoBox(
                a.cx + f * dx,
                a.cy + f * (b.cy - a.cy),
                a.w + f * (b.w - a.w),
                a.h + f * (b.h - a.h),
                a.W,
            )
            self.backfill.append(
                record_from_box(frame - gap + g, t.track_id, box, t.score, t.class_id, self.config.panoramic)
            )

    def predict(self, frame_id: int) -> None:
        if self._predicted_for == frame_id:
            return
        for t in self.tracks:
            t.kstate = motion.predict(t.kstate, self.motion_config)
            t.age += 1
            t.time_since_update += 1
        self._predicted_for = frame_id

    def _finish(self, frame_id: int) -> list[AnnotationRecord]:
        out = []
        for t in self.tracks:
            if t.time_since_update > 0:
                if t.time_since_update >= self.config.max_age:
                    t.status = Status.REMOVED
                else:
                    t.status = Status.LOST
        self.tracks = [t for t in self.tracks if t.status != Status.REMOVED]
        for t in sorted(self.tracks, key=lambda t: t.track_id):
            if t.status == Status.ACTIVE and t.time_since_update == 0 and t.hits >= self.config.min_hits:
                out.append(
                    record_from_box(
                        frame_id, t.track_id, t.last_box, t.score, t.class_id, self.config.panoramic
                    )
                )
        self.frame_id = frame_id
        return out

    def _check_bound(self, d_f: Sequence[Detection]) -> dict[int, Track]:
        by_id = self._by_id()
        seen = set()
        for d in d_f:
            if d.track_id not in by_id:
                raise ConsistencyError(f"bound detection refers to unknown track {d.track_id}")
            if d.track_id in seen:
                raise ConsistencyError(f"track {d.track_id} bound to two detections")
            seen.add(d.track_id)
        return by_id

    # -- lifecycle -----------------------------------------------------------

    def step_e2e(
        self, frame_id: int, d_f: Sequence[Detection], d_l: Sequence[Detection]
    ) -> list[AnnotationRecord]:
        """Threshold lifecycle: bound detections above ``tau_update`` update their track,
        free detections above ``tau_init`` start a track, everything else is dropped."""
        self.predict(frame_id)
        by_id = self._check_bound(d_f)
        actions = []
        for d in d_f:
            if d.score > self.config.tau_update:
                self._update(by_id[d.track_id], d)
                actions.append(("update", d.track_id))
            else:
                actions.append(("delete", d.track_id))
        for d in d_l:
            if d.score > self.config.tau_init:
                t = self._new_track(d)
                actions.append(("initialize", t.track_id))
            else:
                actions.append(("delete", -1))
        self.last_actions = actions
        return self._finish(frame_id)

    def step_da(
        self, frame_id: int, d_f: Sequence[Detection], d_l: Sequence[Detection]
    ) -> list[AnnotationRecord]:
        """Assignment lifecycle: IoU-gated optimal matching between tracks and detections.

        Unless ``da_rebind`` is set, bound detections keep their identity and only the
        free ones enter the global assignment.
        """
        self.predict(frame_id)
        by_id = self._check_bound(d_f)
        cfg = self.config
        actions = []
        if cfg.da_rebind:
            pool = [Detection(d.box, d.score, d.class_id) for d in list(d_f) + list(d_l)]
            cand = list(self.tracks)
        else:
            for d in d_f:
                self._update(by_id[d.track_id], d)
                actions.append(("update", d.track_id))
            bound = {d.track_id for d in d_f}
            pool = list(d_l)
            cand = [t for t in self.tracks if t.track_id not in bound]

        boxes = [t.box for t in cand]
        classes = [t.class_id for t in cand]
        if cfg.cascade:
            pairs, _, free = cascade_match(
                boxes, pool, cfg.conf_split, cfg.iou_gate, cfg.panoramic, classes
            )
        else:
            cost = build_cost_matrix(boxes, [d.box for d in pool], "iou", cfg.iou_gate, cfg.panoramic)
            if cand and pool:
                cost.gate_mask &= np.array(classes)[:, None] == np.array(
                    [d.class_id for d in pool]
                )[None, :]
            pairs = hungarian(cost)
            used = {j for _, j in pairs}
            free = [j for j in range(len(pool)) if j not in used]
        for i, j in pairs:
            self._update(cand[i], pool[j])
            actions.append(("update", cand[i].track_id))
        for j in free:
            if pool[j].score > cfg.tau_init:
                t = self._new_track(pool[j])
                actions.append(("initialize", t.track_id))
            else:
                actions.append(("delete", -1))
        self.last_actions = actions
        return self._finish(frame_id)

    def step(self, frame_id: int, dets: Sequence[Detection]) -> list[AnnotationRecord]:
        if frame_id <= self.frame_id:
            raise MotValidationError(
                f"frames must be strictly increasing: {frame_id} after {self.frame_id}"
            )
        self.predict(frame_id)
        live = [t for t in self.tracks if t.status != Status.REMOVED]
        instances = make_instances(
            live,
            self.config.noise_scale,
            [self.config.rng_seed, frame_id],
            self.H,
            self.config.feature_noise_scale,
        )
        d_f, d_l = decode_with_priors(
            instances, list(dets), self.config.gate_radius, self.config.panoramic
        )
        if self.keep_history:
            self.history.append((frame_id, instances, list(dets)))
        if self.config.mode == "e2e":
            return self.step_e2e(frame_id, d_f, d_l)
        return self.step_da(frame_id, d_f, d_l)


def _frames(det_stream) -> Iterable[tuple[int, list]]:
    if isinstance(det_stream, Mapping):
        return det_stream.items()
    return det_stream


def run_sequence(
    det_stream: Mapping[int, Sequence] | Iterable[tuple[int, Sequence]],
    config: TrackerConfig,
    meta: SequenceMeta,
    motion_config: motion.MotionConfig = motion.MotionConfig(),
    tracker: Tracker | None = None,
) -> dict[int, list[AnnotationRecord]]:
    """Run the tracker over a frame-indexed detection stream.

    Items may be ``Detection`` or MOT ``AnnotationRecord``. Frames missing from the
    stream are processed as empty so that tracks age correctly.
    """
    trk = tracker or Tracker(config, meta.image_width, meta.image_height, motion_config)
    W = float(meta.image_width)
    out: dict[int, list[AnnotationRecord]] = {}
    prev = 0
    for frame_id, items in _frames(det_stream):
        if frame_id <= prev:
            raise MotValidationError(f"frames out of order: {frame_id} after {prev}")
        for gap in range(prev + 1, frame_id):
            out[gap] = trk.step(gap, [])
        dets = [d if isinstance(d, Detection) else detection_from_record(d, W) for d in items]
        out[frame_id] = trk.step(frame_id, dets)
        prev = frame_id
    for rec in trk.backfill:
        out.setdefault(rec.frame_id, []).append(rec)
    trk.backfill = []
    for f in out:
        out[f].sort(key=lambda r: r.track_id)
    return out
