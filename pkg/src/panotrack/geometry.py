"""Wrap-aware box geometry for equirectangular panoramas.

Only the x axis wraps: the left and right image edges are the same meridian.
Boxes are kept in center form (cx, cy, w, h) so that seam-crossing boxes have
a single-valued representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def wrap_x(x: float, W: float) -> float:
    """Map ``x`` onto ``[0, W)``."""
    if W <= 0:
        raise ValueError(f"image width must be positive, got {W}")
    r = x % W
    # float modulo can land exactly on W for tiny negative inputs
    return 0.0 if r >= W else float(r)


def angular_delta(x1: float, x2: float, W: float) -> float:
    """Signed minimal displacement from ``x1`` to ``x2`` on a cylinder of circumference ``W``.

    The result lies in ``[-W/2, W/2)``; a displacement of exactly half a turn maps to ``-W/2``.
    """
    if W <= 0:
        raise ValueError(f"image width must be positive, got {W}")
    half = W / 2.0
    r = (x2 - x1 + half) % W
    if r >= W:
        r = 0.0
    return float(r - half)


@dataclass(frozen=True)
class PanoBox:
    """Axis-aligned box on an unrolled panorama of width ``W``.

    ``cx`` is normalised into ``[0, W)`` on construction. The box crosses the seam
    when ``cx - w/2 < 0`` or ``cx + w/2 > W``.
    """

    cx: float
    cy: float
    w: float
    h: float
    W: float

    def __post_init__(self):
        if not self.W > 0:
            raise ValueError(f"image width must be positive, got {self.W}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extent must be positive, got w={self.w}, h={self.h}")
        if self.w > self.W:
            raise ValueError(f"box width {self.w} exceeds image width {self.W}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError("box coordinates must be finite")
        object.__setattr__(self, "cx", wrap_x(float(self.cx), self.W))

    @classmethod
    def from_ltwh(cls, left: float, top: float, w: float, h: float, W: float) -> "PanoBox":
        return cls(left + w / 2.0, top + h / 2.0, w, h, W)

    @property
    def left(self) -> float:
        """Left edge, wrapped into ``[0, W)``."""
        return wrap_x(self.cx - self.w / 2.0, self.W)

    @property
    def top(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def crosses_seam(self) -> bool:
        return self.cx - self.w / 2.0 < 0 or self.cx + self.w / 2.0 > self.W

    def shifted(self, dx: float) -> "PanoBox":
        return PanoBox(self.cx + dx, self.cy, self.w, self.h, self.W)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


def to_fragments(b: PanoBox) -> list[tuple[float, float, float, float]]:
    """Split a box into non-wrapping ``(x0, y0, x1, y1)`` pieces (one or two)."""
    x0 = b.cx - b.w / 2.0
    x1 = b.cx + b.w / 2.0
    y0, y1 = b.top, b.top + b.h
    if x0 < 0:
        return [(x0 + b.W, y0, b.W, y1), (0.0, y0, x1, y1)]
    if x1 > b.W:
        return [(x0, y0, b.W, y1), (0.0, y0, x1 - b.W, y1)]
    return [(x0, y0, x1, y1)]


def _check_width(boxes: Sequence[PanoBox], W: float | None) -> float | None:
    for b in boxes:
        if W is None:
            W = b.W
        elif b.W != W:
            raise ValueError(f"mixed image widths: {W} and {b.W}")
    return W


def pano_iou(a: PanoBox, b: PanoBox) -> float:
    """IoU on the cylinder; equals planar IoU when neither box crosses the seam."""
    if a.W != b.W:
        raise ValueError(f"mixed image widths: {a.W} and {b.W}")
    return float(iou_matrix([a], [b], panoramic=True)[0, 0])


def planar_iou(a: PanoBox, b: PanoBox) -> float:
    if a.W != b.W:
        raise ValueError(f"mixed image widths: {a.W} and {b.W}")
    return float(iou_matrix([a], [b], panoramic=False)[0, 0])


def boxes_to_array(boxes: Sequence[PanoBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=float)


def _overlap(a0, aw, b0, bw) -> np.ndarray:
    """Length of ``[a0, a0 + aw) & [b0, b0 + bw)``, exact when one interval contains the other."""
    a1, b1 = a0 + aw, b0 + bw
    ov = np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0, None)
    # report the exact extent for containment so identical boxes score exactly 1
    ov = np.where((a0 >= b0) & (a1 <= b1), aw, ov)
    return np.where((b0 >= a0) & (b1 <= a1), bw, ov)


def iou_matrix(a: Sequence[PanoBox], b: Sequence[PanoBox], panoramic: bool = True) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``.

    With ``panoramic`` the x-overlap is the overlap of arcs on the circle: box ``a``
    is lifted to ``[x0, x0 + w)`` with ``x0`` in ``[0, W)`` and intersected with the
    three translates ``b + kW``, ``k`` in {-1, 0, 1}. Widths never exceed ``W`` so
    the translates are disjoint and no other ``k`` can contribute.
    """
    W = _check_width(a, None)
    W = _check_width(b, W)
    A = boxes_to_array(a)
    B = boxes_to_array(b)
    out = np.zeros((len(A), len(B)))
    if len(A) == 0 or len(B) == 0:
        return out

    ax0 = (A[:, 0] - A[:, 2] / 2.0)[:, None]
    bx0 = (B[:, 0] - B[:, 2] / 2.0)[None, :]
    aw = A[:, 2][:, None]
    bw = B[:, 2][None, :]
    if panoramic:
        ax0 = np.mod(ax0, W)
        bx0 = np.mod(bx0, W)
        ix = sum(_overlap(ax0, aw, bx0 + k * W, bw) for k in (-1.0, 0.0, 1.0))
    else:
        ix = _overlap(ax0, aw, bx0, bw)
    ay0 = (A[:, 1] - A[:, 3] / 2.0)[:, None]
    by0 = (B[:, 1] - B[:, 3] / 2.0)[None, :]
    iy = _overlap(ay0, A[:, 3][:, None], by0, B[:, 3][None, :])
    inter = ix * iy
    union = (A[:, 2] * A[:, 3])[:, None] + (B[:, 2] * B[:, 3])[None, :] - inter
    np.divide(inter, union, out=out, where=union > 0)
    return np.clip(out, 0.0, 1.0)


def ltwh_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Planar IoU of raw ``(left, top, w, h)`` rows, with no wrapping of any kind."""
    A = np.asarray(a, dtype=float).reshape(-1, 4)
    B = np.asarray(b, dtype=float).reshape(-1, 4)
    out = np.zeros((len(A), len(B)))
    if len(A) == 0 or len(B) == 0:
        return out
    ix = _overlap(A[:, 0:1], A[:, 2:3], B[None, :, 0], B[None, :, 2])
    iy = _overlap(A[:, 1:2], A[:, 3:4], B[None, :, 1], B[None, :, 3])
    inter = ix * iy
    union = (A[:, 2] * A[:, 3])[:, None] + (B[:, 2] * B[:, 3])[None, :] - inter
    np.divide(inter, union, out=out, where=union > 0)
    return np.clip(out, 0.0, 1.0)


def center_distance_matrix(
    a: Sequence[PanoBox], b: Sequence[PanoBox], panoramic: bool = True
) -> np.ndarray:
    """Euclidean center distance with the x component taken around the cylinder."""
    W = _check_width(a, None)
    W = _check_width(b, W)
    A = boxes_to_array(a)
    B = boxes_to_array(b)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    dx = B[:, 0][None, :] - A[:, 0][:, None]
    if panoramic:
        dx = np.mod(dx + W / 2.0, W) - W / 2.0
    dy = B[:, 1][None, :] - A[:, 1][:, None]
    return np.hypot(dx, dy)
