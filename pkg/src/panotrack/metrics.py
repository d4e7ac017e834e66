"""Tracking metrics: CLEAR MOTA, IDF1, HOTA (with DetA/AssA) and per-frame OSPA.

All similarities are box IoU, wrap-aware when the sequence is panoramic. Per-sequence
results keep their raw counts so that several sequences can be pooled before any
ratio is taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .association import CostMatrix, hungarian
from .geometry import PanoBox, iou_matrix, ltwh_iou_matrix
from .mot_io import AnnotationRecord, MotValidationError, SequenceMeta

ALPHAS = np.arange(0.05, 0.99, 0.05)
EPS = np.finfo(float).eps


@dataclass
class EvalOptions:
    iou_threshold: float = 0.5
    ospa_cutoff: float = 1.0
    ospa_order: float = 1.0
    panoramic: bool | None = None  # None: take it from the sequence metadata
    class_aware: bool = True


def match_frame(
    gt_boxes: Sequence[PanoBox],
    pred_boxes: Sequence[PanoBox],
    threshold: float = 0.5,
    panoramic: bool = True,
    similarity: np.ndarray | None = None,
) -> list[tuple[int, int, float]]:
    """Maximum-similarity matching among pairs with IoU >= ``threshold``.

    Returns ``(gt_index, pred_index, iou)`` triples. The matching has maximum size
    over admissible pairs, then maximum total IoU.
    """
    sim = iou_matrix(gt_boxes, pred_boxes, panoramic) if similarity is None else similarity
    if sim.size == 0:
        return []
    pairs = hungarian(CostMatrix(-sim, sim >= threshold - EPS), tie_break=False)
    return [(i, j, float(sim[i, j])) for i, j in pairs]


@dataclass
class SequenceCounts:
    """Raw accumulators for one or more sequences."""

    n_frames: int = 0
    gt_dets: int = 0
    pred_dets: int = 0
    # CLEAR
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    # identity
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0
    # HOTA, one entry per alpha
    hota_tp: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    hota_fp: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    hota_fn: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    assa_weighted: np.ndarray = field(default_factory=lambda: np.zeros(len(ALPHAS)))
    # OSPA, summed over scored frames
    ospa_sum: float = 0.0
    ospa_frames: int = 0

    def __add__(self, other: "SequenceCounts") -> "SequenceCounts":
        out = SequenceCounts()
        for name in self.__dataclass_fields__:
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out


@dataclass
class EvalResult:
    name: str
    hota: float
    deta: float
    assa: float
    mota: float
    idf1: float
    ospa: float
    tp: int
    fp: int
    fn: int
    idsw: int
    counts: SequenceCounts = field(repr=False, default_factory=SequenceCounts)

    @classmethod
    def from_counts(cls, name: str, c: SequenceCounts) -> "EvalResult":
        empty = c.gt_dets == 0 and c.pred_dets == 0
        if empty:
            # nothing to find and nothing reported: perfect by convention
            hota = deta = assa = idf1 = 1.0
        else:
            deta_a = c.hota_tp / np.maximum(1.0, c.hota_tp + c.hota_fn + c.hota_fp)
            assa_a = c.assa_weighted / np.maximum(1.0, c.hota_tp)
            hota = float(np.mean(np.sqrt(deta_a * assa_a)))
            deta = float(np.mean(deta_a))
            assa = float(np.mean(assa_a))
            idf1 = c.idtp / max(1.0, c.idtp + 0.5 * c.idfp + 0.5 * c.idfn)
        if c.gt_dets == 0:
            mota = 1.0 if c.fp == 0 else -float(c.fp)
        else:
            mota = 1.0 - (c.fn + c.fp + c.idsw) / c.gt_dets
        ospa = c.ospa_sum / c.ospa_frames if c.ospa_frames else 0.0
        return cls(name, hota, deta, assa, mota, float(idf1), float(ospa), c.tp, c.fp, c.fn, c.idsw, c)


def ospa_distance(sim: np.ndarray, cutoff: float = 1.0, order: float = 1.0) -> float:
    """OSPA between two box sets given their IoU matrix, base distance ``1 - IoU``."""
    m, n = sim.shape
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)
    d = np.minimum(cutoff, 1.0 - sim) ** order
    r, c = linear_sum_assignment(d)
    total = d[r, c].sum() + cutoff**order * abs(m - n)
    return float((total / max(m, n)) ** (1.0 / order))


def _boxes(recs: Sequence[AnnotationRecord], W: float) -> list[PanoBox]:
    return [PanoBox.from_ltwh(r.left, r.top, min(r.width, W), r.height, W) for r in recs]


def _ltwh(recs: Sequence[AnnotationRecord]) -> np.ndarray:
    return np.array([[r.left, r.top, r.width, r.height] for r in recs], dtype=float).reshape(-1, 4)


def _similarity(gt, pred, W, panoramic, class_aware) -> np.ndarray:
    if panoramic:
        sim = iou_matrix(_boxes(gt, W), _boxes(pred, W), True)
    else:
        # planar sequences: raw image coordinates, nothing is wrapped
        sim = ltwh_iou_matrix(_ltwh(gt), _ltwh(pred))
    if class_aware and sim.size:
        sim = sim * (
            np.array([r.class_id for r in gt])[:, None] == np.array([r.class_id for r in pred])[None, :]
        )
    return sim


def _remove_ignored(gt, pred, sim, threshold):
    """Drop ignored gt, and predictions that match an ignored gt box."""
    ign = np.array([r.ignore for r in gt], dtype=bool)
    if not ign.any():
        return gt, pred, sim
    drop_pred = set()
    if len(pred):
        for i, j, _ in match_frame([], [], threshold, similarity=sim):
            if ign[i]:
                drop_pred.add(j)
    keep_g = np.flatnonzero(~ign)
    keep_p = np.array([j for j in range(len(pred)) if j not in drop_pred], dtype=int)
    return (
        [gt[i] for i in keep_g],
        [pred[j] for j in keep_p],
        sim[np.ix_(keep_g, keep_p)],
    )


def evaluate(
    gt_stream: Mapping[int, Sequence[AnnotationRecord]],
    pred_stream: Mapping[int, Sequence[AnnotationRecord]],
    meta: SequenceMeta,
    options: EvalOptions = EvalOptions(),
) -> EvalResult:
    panoramic = meta.panoramic if options.panoramic is None else options.panoramic
    W = float(meta.image_width)
    thr = options.iou_threshold
    extra = set(pred_stream) - set(range(1, meta.n_frames + 1))
    if extra:
        raise MotValidationError(
            f"{meta.name}: predictions for frames outside 1..{meta.n_frames}: {sorted(extra)[:5]}"
        )
    extra = set(gt_stream) - set(range(1, meta.n_frames + 1))
    if extra:
        raise MotValidationError(f"{meta.name}: ground truth outside 1..{meta.n_frames}")

    frames = []
    for f in range(1, meta.n_frames + 1):
        gt = list(gt_stream.get(f, []))
        pred = list(pred_stream.get(f, []))
        sim = _similarity(gt, pred, W, panoramic, options.class_aware)
        gt, pred, sim = _remove_ignored(gt, pred, sim, thr)
        frames.append(
            (np.array([r.track_id for r in gt], dtype=int), np.array([r.track_id for r in pred], dtype=int), sim)
        )

    c = SequenceCounts(n_frames=meta.n_frames)
    gt_ids = sorted({int(i) for g, _, _ in frames for i in g})
    pr_ids = sorted({int(i) for _, p, _ in frames for i in p})
    gmap = {v: k for k, v in enumerate(gt_ids)}
    pmap = {v: k for k, v in enumerate(pr_ids)}
    frames = [
        (np.array([gmap[i] for i in g], dtype=int), np.array([pmap[i] for i in p], dtype=int), s)
        for g, p, s in frames
    ]
    ng, npr = len(gt_ids), len(pr_ids)

    _clear(frames, thr, c)
    _identity(frames, thr, ng, npr, c)
    _hota(frames, ng, npr, c)
    for g, p, s in frames:
        if len(g) or len(p):
            c.ospa_sum += ospa_distance(s, options.ospa_cutoff, options.ospa_order)
            c.ospa_frames += 1
    return EvalResult.from_counts(meta.name, c)


def _clear(frames, thr, c: SequenceCounts) -> None:
    """CLEAR counts; a pair matched in the previous frame is kept while still above threshold."""
    last_match: dict[int, int] = {}  # gt id -> pred id it was last matched to
    prev_pairs: dict[int, int] = {}
    for g, p, sim in frames:
        c.gt_dets += len(g)
        c.pred_dets += len(p)
        if len(g) == 0 or len(p) == 0:
            c.fn += len(g)
            c.fp += len(p)
            prev_pairs = {}
            continue
        score = sim.copy()
        cont = np.array([[prev_pairs.get(gi) == pj for pj in p] for gi in g])
        score = np.where(cont & (sim >= thr - EPS), score + 1000.0, score)
        pairs = hungarian(CostMatrix(-score, sim >= thr - EPS), tie_break=False)
        cur = {}
        for i, j in pairs:
            gi, pj = int(g[i]), int(p[j])
            if gi in last_match and last_match[gi] != pj:
                c.idsw += 1
            last_match[gi] = pj
            cur[gi] = pj
        c.tp += len(pairs)
        c.fn += len(g) - len(pairs)
        c.fp += len(p) - len(pairs)
        prev_pairs = cur


def _identity(frames, thr, ng, npr, c: SequenceCounts) -> None:
    """IDF1 counts from a global one-to-one gt-id / pred-id mapping maximising IDTP."""
    gt_count = np.zeros(ng)
    pr_count = np.zeros(npr)
    overlap = np.zeros((ng, npr))
    for g, p, sim in frames:
        np.add.at(gt_count, g, 1)
        np.add.at(pr_count, p, 1)
        if len(g) and len(p):
            ok = sim >= thr - EPS
            gi, pj = np.nonzero(ok)
            np.add.at(overlap, (g[gi], p[pj]), 1)
    idtp = 0
    if ng and npr:
        r, k = linear_sum_assignment(-overlap)
        idtp = int(overlap[r, k].sum())
    c.idtp += idtp
    c.idfn += int(gt_count.sum()) - idtp
    c.idfp += int(pr_count.sum()) - idtp


def _hota(frames, ng, npr, c: SequenceCounts) -> None:
    gt_count = np.zeros(ng)
    pr_count = np.zeros(npr)
    potential = np.zeros((ng, npr))
    for g, p, sim in frames:
        np.add.at(gt_count, g, 1)
        np.add.at(pr_count, p, 1)
        if len(g) and len(p):
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            s_iou = np.zeros_like(sim)
            np.divide(sim, denom, out=s_iou, where=denom > EPS)
            potential[np.ix_(g, p)] += s_iou
    align = potential / np.maximum(EPS, gt_count[:, None] + pr_count[None, :] - potential)

    matches = np.zeros((len(ALPHAS), ng, npr))
    for g, p, sim in frames:
        if len(g) == 0 or len(p) == 0:
            c.hota_fn += len(g)
            c.hota_fp += len(p)
            continue
        score = align[np.ix_(g, p)] * sim
        prev_mask = None
        pairs: list = []
        for a, alpha in enumerate(ALPHAS):
            mask = sim >= alpha - EPS
            # the admissible set only shrinks with alpha; reuse the matching while it is unchanged
            if prev_mask is None or not np.array_equal(mask, prev_mask):
                pairs = hungarian(CostMatrix(-score, mask), tie_break=False)
                prev_mask = mask
            n = len(pairs)
            c.hota_tp[a] += n
            c.hota_fn[a] += len(g) - n
            c.hota_fp[a] += len(p) - n
            for i, j in pairs:
                matches[a, g[i], p[j]] += 1
    for a in range(len(ALPHAS)):
        m = matches[a]
        ass = m / np.maximum(1.0, gt_count[:, None] + pr_count[None, :] - m)
        c.assa_weighted[a] += float((m * ass).sum())


def pool(results: Sequence[EvalResult], name: str = "COMBINED") -> EvalResult:
    """Aggregate by summing raw counts across sequences, then recomputing every ratio."""
    total = SequenceCounts()
    for r in results:
        total = total + r.counts
    return EvalResult.from_counts(name, total)
