"""Track priors fed back into detection, and the entropy bookkeeping around them.

Each live track is turned into a prior instance: a 128-d feature vector and a
128-d anchor. Anchor layout (our convention):

    dims 0-3   cx/W, cy/H, w/W, h/H of the predicted box
    dims 4-127 zero before noise

Feature layout: dim 0 last score, dim 1 class id, dims 2-5 velocities
(vcx/W, vcy/H, vw/W, vh/H), remaining dims zero before noise.

The decoder here is geometric: instances claim detections through gated optimal
matching. Claimed detections carry the instance's track id, the rest are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .association import CostMatrix, Detection, hungarian
from .geometry import PanoBox, center_distance_matrix, iou_matrix, wrap_x

EMBED_DIM = 128
NORM_TOL = 1e-9


@dataclass(frozen=True)
class FlexiTrackInstance:
    track_id: int
    feature: np.ndarray
    anchor: np.ndarray
    score: float
    class_id: int
    image_width: float
    image_height: float

    def box(self, min_extent: float = 1e-3) -> PanoBox:
        W, H = self.image_width, self.image_height
        cx, cy, w, h = self.anchor[:4]
        return PanoBox(
            wrap_x(cx * W, W),
            cy * H,
            float(np.clip(w * W, min_extent, W)),
            max(h * H, min_extent),
            W,
        )


def encode_anchor(box: PanoBox, image_height: float) -> np.ndarray:
    a = np.zeros(EMBED_DIM)
    a[:4] = (box.cx / box.W, box.cy / image_height, box.w / box.W, box.h / image_height)
    return a


def encode_feature(track, image_height: float) -> np.ndarray:
    f = np.zeros(EMBED_DIM)
    W = track.kstate.W
    v = track.kstate.mean[4:8]
    f[0] = track.score
    f[1] = track.class_id
    f[2:6] = (v[0] / W, v[1] / image_height, v[2] / W, v[3] / image_height)
    return f


def make_instances(
    tracks: Sequence,
    noise_scale: float,
    rng_seed,
    image_height: float,
    feature_noise_scale: float | None = None,
) -> list[FlexiTrackInstance]:
    """Build one prior instance per track, perturbing anchor and feature with Gaussian noise.

    Anchor box noise is relative to the box, as in denoising-query training: each of
    cx, w has std ``noise_scale * w / 2`` and each of cy, h has std
    ``noise_scale * h / 2`` (expressed in normalized anchor coordinates). Padding dims
    and the feature get plain ``N(0, scale)`` noise. ``feature_noise_scale`` defaults
    to ``noise_scale``.
    """
    if noise_scale < 0:
        raise ValueError(f"noise_scale must be non-negative, got {noise_scale}")
    fscale = noise_scale if feature_noise_scale is None else feature_noise_scale
    if fscale < 0:
        raise ValueError(f"feature_noise_scale must be non-negative, got {fscale}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for t in tracks:
        box = t.kstate.box()
        anchor = encode_anchor(box, image_height)
        feature = encode_feature(t, image_height)
        # always draw, so the stream does not depend on the scale
        n_anchor = rng.standard_normal(EMBED_DIM)
        n_feature = rng.standard_normal(EMBED_DIM)
        extent = np.ones(EMBED_DIM)
        extent[:4] = 0.5 * np.array(
            (box.w / box.W, box.h / image_height, box.w / box.W, box.h / image_height)
        )
        if noise_scale > 0:
            anchor = anchor + noise_scale * extent * n_anchor
        if fscale > 0:
            feature = feature + fscale * n_feature
        out.append(
            FlexiTrackInstance(
                t.track_id, feature, anchor, float(t.score), t.class_id, box.W, image_height
            )
        )
    return out


def gate_mask(
    instances: Sequence[FlexiTrackInstance],
    dets: Sequence[Detection],
    gate_radius: float,
    panoramic: bool = True,
) -> np.ndarray:
    """Admissible instance/detection pairs: same class and center distance within the radius."""
    if not instances or not dets:
        return np.zeros((len(instances), len(dets)), dtype=bool)
    dist = center_distance_matrix(
        [i.box() for i in instances], [d.box for d in dets], panoramic=panoramic
    )
    same = np.array([i.class_id for i in instances])[:, None] == np.array(
        [d.class_id for d in dets]
    )[None, :]
    return (dist <= gate_radius) & same


def prior_costs(
    instances: Sequence[FlexiTrackInstance], dets: Sequence[Detection], panoramic: bool = True
) -> np.ndarray:
    if not instances or not dets:
        return np.zeros((len(instances), len(dets)))
    return 1.0 - iou_matrix([i.box() for i in instances], [d.box for d in dets], panoramic)


def decode_with_priors(
    instances: Sequence[FlexiTrackInstance],
    dets: Sequence[Detection],
    gate_radius: float,
    panoramic: bool = True,
) -> tuple[list[Detection], list[Detection]]:
    """Split detections into identity-bound ``D_F`` and free ``D_L``.

    Every instance claims at most one detection inside its gate; conflicts are
    resolved globally by optimal assignment on ``1 - IoU``.
    """
    if gate_radius <= 0:
        raise ValueError(f"gate_radius must be positive, got {gate_radius}")
    cost = prior_costs(instances, dets, panoramic)
    mask = gate_mask(instances, dets, gate_radius, panoramic)
    pairs = hungarian(CostMatrix(cost, mask))
    claimed = {j: instances[i].track_id for i, j in pairs}
    d_f = [replace(dets[j], track_id=tid) for j, tid in sorted(claimed.items())]
    d_l = [replace(d, track_id=-1) for j, d in enumerate(dets) if j not in claimed]
    return d_f, d_l


# -- entropy diagnostics ------------------------------------------------------


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a non-empty probability vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError(f"not a probability vector (sum={p.sum()!r})")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _frame_vectors(frame) -> list:
    if isinstance(frame, np.ndarray) and frame.ndim == 1:
        return [frame]
    frame = list(frame)
    if frame and np.isscalar(frame[0]):
        return [np.asarray(frame, dtype=float)]
    return frame


def entropy_independent(candidate_dists: Iterable, joint=None) -> tuple[list[float], float]:
    """Per-frame detection entropy and the cumulative total including association.

    Each frame holds one probability vector or a list of them (one per target); the
    frame entropy sums over targets. ``joint`` is an optional probability vector over
    whole-sequence association hypotheses. Without it the association term is the
    entropy of the deterministic, gate-free optimal matching given the detections,
    which is zero: the matching is a function of the per-frame data already counted.
    """
    per_frame = [sum(entropy(v) for v in _frame_vectors(f)) for f in candidate_dists]
    assoc = entropy(joint) if joint is not None else 0.0
    return per_frame, float(sum(per_frame) + assoc)


def _conditional_entropy(item) -> float:
    # plain vector, or a mixture of (weight, vector) branches of one conditioning variable
    if isinstance(item, np.ndarray) or (len(item) and np.isscalar(item[0])):
        return entropy(item)
    weights = [w for w, _ in item]
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > NORM_TOL:
        raise ValueError("branch weights must form a probability vector")
    return float(sum(w * entropy(v) for w, v in item if w > 0))


def entropy_feedback(conditional_dists: Iterable) -> float:
    return float(sum(feedback_per_frame(conditional_dists)))


def feedback_per_frame(conditional_dists: Iterable) -> list[float]:
    return [sum(_conditional_entropy(i) for i in frame) for frame in conditional_dists]


def candidate_distribution(costs, temperature: float = 1.0) -> np.ndarray:
    """Softmax over negative costs."""
    z = -np.asarray(costs, dtype=float) / temperature
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def gate_conditionals(p: np.ndarray, inside: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """Condition ``p`` on whether the outcome falls inside the gate.

    Returns ``[(P(inside), p | inside), (P(outside), p | outside)]`` with empty
    branches dropped. The weighted entropy of the branches never exceeds ``H(p)``
    (the difference is the binary entropy of ``P(inside)``) and equals it when the
    gate admits everything.
    """
    p = np.asarray(p, dtype=float)
    inside = np.asarray(inside, dtype=bool)
    if inside.all() or not inside.any():
        return [(1.0, p)]
    out = []
    for sel in (inside, ~inside):
        mass = float(p[sel].sum())
        if mass > 0:
            q = np.where(sel, p, 0.0) / mass
            out.append((mass, q))
    # renormalise weights exactly so rounding never trips validation
    total = sum(w for w, _ in out)
    return [(w / total, q) for w, q in out]


@dataclass
class EntropyReport:
    per_frame_h: list[float]
    per_frame_h_feedback: list[float]
    h_independent: float
    h_feedback: float
    n_frames: int
    h_association: float = 0.0
    association_source: str = "matching-surrogate"
    gate_radius: float = math.inf
    extra: dict = field(default_factory=dict)

    @property
    def reduction(self) -> float:
        return self.h_independent - self.h_feedback

    def check(self, tol: float = 1e-12) -> None:
        if min(self.per_frame_h + self.per_frame_h_feedback + [0.0]) < 0:
            raise AssertionError("negative entropy")
        if self.h_feedback > self.h_independent + tol:
            raise AssertionError(
                f"feedback entropy {self.h_feedback} exceeds independent {self.h_independent}"
            )

    def to_text(self, name: str | None = None) -> str:
        rows = []
        if name is not None:
            rows.append(("sequence", name))
        rows += [
            ("n_frames", str(self.n_frames)),
            ("gate_radius", f"{self.gate_radius:g}"),
            ("h_independent", repr(self.h_independent)),
            ("h_feedback", repr(self.h_feedback)),
            ("reduction", repr(self.reduction)),
            ("h_association", repr(self.h_association)),
            ("association_term", self.association_source),
        ]
        return "\n".join(f"{k}={v}" for k, v in rows) + "\n"


def scenario_entropy(
    frames: Iterable[tuple[Sequence[FlexiTrackInstance], Sequence[Detection]]],
    gate_radius: float,
    panoramic: bool = True,
    temperature: float = 1.0,
    joint=None,
) -> EntropyReport:
    """Entropy report for a sequence of (prior instances, detections) frames.

    Each instance gets a candidate distribution over the frame's detections (softmax
    of negative ``1 - IoU``). The independent term uses it as is; the feedback term
    conditions it on the instance's gate.
    """
    independent, conditional = [], []
    for instances, dets in frames:
        if not instances or not dets:
            independent.append([])
            conditional.append([])
            continue
        costs = prior_costs(instances, dets, panoramic)
        inside = gate_mask(instances, dets, gate_radius, panoramic)
        ps = [candidate_distribution(row, temperature) for row in costs]
        independent.append(ps)
        conditional.append([gate_conditionals(p, m) for p, m in zip(ps, inside)])
    per_frame, h_ind = entropy_independent(independent, joint)
    per_frame_fb = feedback_per_frame(conditional)
    return EntropyReport(
        per_frame_h=per_frame,
        per_frame_h_feedback=per_frame_fb,
        h_independent=h_ind,
        h_feedback=float(sum(per_frame_fb)),
        n_frames=len(per_frame),
        h_association=h_ind - float(sum(per_frame)),
        association_source="joint" if joint is not None else "matching-surrogate",
        gate_radius=gate_radius,
    )
