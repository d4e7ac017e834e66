"""Synthetic panoramic scenes with known identities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PanoBox
from .mot_io import AnnotationRecord, SequenceMeta


@dataclass
class Scene:
    meta: SequenceMeta
    gt: dict[int, list[AnnotationRecord]]
    dets: dict[int, list[AnnotationRecord]]


def _record(frame: int, tid: int, box: PanoBox, conf: float, cls: int) -> AnnotationRecord:
    return AnnotationRecord(frame, tid, box.left, box.top, box.w, box.h, conf, cls, 1.0)


def constant_velocity_scene(
    n_objects: int = 6,
    n_frames: int = 600,
    width: int = 2048,
    height: int = 480,
    seed: int = 0,
    dropout: float = 0.0,
    jitter: float = 0.0,
    max_speed: float = 15.0,
    name: str = "synthetic",
) -> Scene:
    """Objects move at constant velocity in disjoint horizontal bands, wrapping around the seam.

    Bands keep boxes of different objects from ever overlapping, so identities are
    unambiguous. Object 1 always starts next to the seam and moves across it.
    Detections copy the gt boxes (plus ``jitter`` pixels of Gaussian noise) and are
    dropped independently with probability ``dropout``.
    """
    rng = np.random.default_rng(seed)
    band = height / n_objects
    objects = []
    for k in range(n_objects):
        h = float(rng.uniform(0.5, 0.8) * band)
        w = float(rng.uniform(24.0, 60.0))
        cy = band * (k + 0.5)
        speed = float(rng.uniform(2.0, max_speed)) * (1 if rng.random() < 0.5 else -1)
        cx = float(rng.uniform(0, width))
        if k == 0:
            cx, speed = width - 3.0 * abs(speed), abs(speed)
        objects.append((cx, cy, w, h, speed))

    gt: dict[int, list[AnnotationRecord]] = {}
    dets: dict[int, list[AnnotationRecord]] = {}
    for f in range(1, n_frames + 1):
        gt[f], dets[f] = [], []
        for k, (cx0, cy, w, h, v) in enumerate(objects):
            box = PanoBox(cx0 + v * (f - 1), cy, w, h, width)
            gt[f].append(_record(f, k + 1, box, 1.0, 1))
            if rng.random() < dropout:
                continue
            noisy = box
            if jitter > 0:
                dx, dy = rng.normal(0, jitter, 2)
                noisy = PanoBox(box.cx + dx, box.cy + dy, w, h, width)
            score = float(rng.uniform(0.7, 1.0))
            dets[f].append(_record(f, -1, noisy, score, 1))
        dets[f].sort(key=lambda r: -r.confidence)
    meta = SequenceMeta(name, width, height, 10.0, n_frames, True)
    return Scene(meta, gt, dets)


def crowd_scene(
    n_objects: int = 8,
    n_frames: int = 10,
    width: int = 2048,
    height: int = 480,
    seed: int = 0,
    spread: float = 300.0,
) -> Scene:
    """Several people clustered in one region of the panorama, drifting slowly."""
    rng = np.random.default_rng(seed)
    # centred near x=100 so part of the crowd straddles the seam
    cx0 = 100.0 + rng.uniform(-spread, spread, n_objects)
    cy0 = rng.uniform(150, 330, n_objects)
    vx = rng.normal(0, 3, n_objects)
    vy = rng.normal(0, 1, n_objects)
    gt: dict[int, list[AnnotationRecord]] = {}
    dets: dict[int, list[AnnotationRecord]] = {}
    for f in range(1, n_frames + 1):
        gt[f], dets[f] = [], []
        for k in range(n_objects):
            box = PanoBox(cx0[k] + vx[k] * (f - 1), cy0[k] + vy[k] * (f - 1), 40.0, 100.0, width)
            gt[f].append(_record(f, k + 1, box, 1.0, 1))
            dets[f].append(_record(f, -1, box, float(rng.uniform(0.6, 1.0)), 1))
        dets[f].sort(key=lambda r: -r.confidence)
    return Scene(SequenceMeta("crowd", width, height, 10.0, n_frames, True), gt, dets)
