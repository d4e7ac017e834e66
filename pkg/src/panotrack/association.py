"""Cost matrices and gated optimal assignment between tracks and detections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import PanoBox, iou_matrix

DEFAULT_GATE = 0.7


@dataclass(frozen=True)
class Detection:
    box: PanoBox
    score: float
    class_id: int = 1
    track_id: int = -1


@dataclass
class CostMatrix:
    values: np.ndarray
    gate_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            if self.values.size:
                raise ValueError("cost matrix must be two-dimensional")
            self.values = self.values.reshape(0, 0)
        if self.gate_mask is None:
            self.gate_mask = np.isfinite(self.values)
        self.gate_mask = np.asarray(self.gate_mask, dtype=bool)
        if self.gate_mask.shape != self.values.shape:
            raise ValueError(
                f"gate mask shape {self.gate_mask.shape} != cost shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values[self.gate_mask])):
            raise ValueError("admissible cells must have finite cost")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def build_cost_matrix(
    tracks: Sequence[PanoBox],
    dets: Sequence[PanoBox],
    metric: str = "iou",
    gate_threshold: float = DEFAULT_GATE,
    panoramic: bool = True,
) -> CostMatrix:
    """``1 - IoU`` costs; a pair is admissible when its cost is at most ``gate_threshold``."""
    if metric != "iou":
        raise ValueError(f"unsupported metric {metric!r}")
    cost = 1.0 - iou_matrix(tracks, dets, panoramic=panoramic)
    return CostMatrix(cost, cost <= gate_threshold)


def _solve(values: np.ndarray, mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality matching over admissible cells, minimum cost among those.

    Inadmissible cells get a penalty larger than any possible spread of admissible
    totals, so every extra admissible match outweighs any cost difference; matched
    inadmissible cells are dropped afterwards.
    """
    n, m = values.shape
    if n == 0 or m == 0 or not mask.any():
        return []
    adm = values[mask]
    spread = float(adm.max() - adm.min()) if adm.size else 0.0
    big = (spread + 1.0) * (min(n, m) + 1)
    c = np.where(mask, values - adm.min(), big)
    rows, cols = linear_sum_assignment(c)
    return [(int(r), int(k)) for r, k in zip(rows, cols) if mask[r, k]]


def _total(values: np.ndarray, pairs) -> float:
    return float(sum(values[r, c] for r, c in pairs))


def hungarian(c: CostMatrix, tie_break: bool = True) -> list[tuple[int, int]]:
    """Optimal gated assignment as a sorted list of ``(row, col)`` pairs.

    Among admissible matchings of maximum size the total cost is minimised. With
    ``tie_break`` the lexicographically smallest of the co-optimal matchings is
    returned: rows are fixed one at a time to the smallest column that still admits
    an optimal completion.
    """
    values, mask = c.values, c.gate_mask
    best = sorted(_solve(values, mask))
    if not tie_break or len(best) == 0:
        return best
    size, cost = len(best), _total(values, best)
    tol = 1e-9 * max(1.0, abs(cost))

    n = values.shape[0]
    current = dict(best)
    fixed: dict[int, int] = {}
    for r in range(n):
        cur = current.get(r)
        taken = set(fixed.values())
        for k in np.flatnonzero(mask[r]):
            if cur is not None and k >= cur:
                break
            if k in taken:
                continue
            # rows after r stay free; rows before r are frozen and their columns taken
            sub_mask = mask.copy()
            sub_mask[: r + 1, :] = False
            sub_mask[:, list(fixed.values()) + [k]] = False
            sub = _solve(values, sub_mask)
            total = _total(values, sub) + values[r, k] + _total(values, fixed.items())
            if len(sub) + len(fixed) + 1 == size and total <= cost + tol:
                current = {**fixed, r: int(k), **dict(sub)}
                break
        if r in current:
            fixed[r] = current[r]
    return sorted(current.items())


def cascade_match(
    tracks: Sequence[PanoBox],
    dets: Sequence[Detection],
    conf_split: float,
    gate_threshold: float = DEFAULT_GATE,
    panoramic: bool = True,
    track_classes: Sequence[int] | None = None,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Two-stage matching: high-confidence detections first, then the rest against leftovers.

    Returns ``(matched, unmatched_tracks, unmatched_dets)`` with indices into the inputs.
    """
    cost = build_cost_matrix(tracks, [d.box for d in dets], "iou", gate_threshold, panoramic)
    mask = cost.gate_mask.copy()
    if track_classes is not None and len(dets):
        det_cls = np.array([d.class_id for d in dets])
        mask &= np.asarray(track_classes)[:, None] == det_cls[None, :]

    high = [j for j, d in enumerate(dets) if d.score >= conf_split]
    low = [j for j, d in enumerate(dets) if d.score < conf_split]
    matched: list[tuple[int, int]] = []
    free_tracks = list(range(len(tracks)))
    for group in (high, low):
        if not group or not free_tracks:
            continue
        sub = CostMatrix(
            cost.values[np.ix_(free_tracks, group)], mask[np.ix_(free_tracks, group)]
        )
        pairs = [(free_tracks[r], group[k]) for r, k in hungarian(sub)]
        matched.extend(pairs)
        taken = {t for t, _ in pairs}
        free_tracks = [t for t in free_tracks if t not in taken]
    used = {d for _, d in matched}
    return (
        sorted(matched),
        free_tracks,
        [j for j in range(len(dets)) if j not in used],
    )
