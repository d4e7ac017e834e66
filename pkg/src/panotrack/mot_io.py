"""Reading and writing MOT-format sequences.

One record per line, nine comma-separated fields::

    frame, track_id, left, top, width, height, confidence, class, visibility

``track_id`` is -1 for detection files. In ground truth ``confidence`` is a 0/1
flag; records flagged 0 are kept but marked ``ignore``.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

DEFAULT_MIN_AREA = 800.0


class MotError(ValueError):
    """Base class for problems with MOT input."""


class MotFormatError(MotError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


class MotParseError(MotFormatError):
    pass


class MotValidationError(MotFormatError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    frame_id: int
    track_id: int
    left: float
    top: float
    width: float
    height: float
    confidence: float
    class_id: int
    visibility: float
    # set by load_sequence; not part of the on-disk record
    ignore: bool = field(default=False, compare=False)
    small: bool = field(default=False, compare=False)

    @property
    def area(self) -> float:
        return self.width * self.height


def _int_field(tok: str, name: str, lineno: int | None) -> int:
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        v = float(tok)
    except ValueError:
        raise MotParseError(f"{name} is not numeric: {tok!r}", lineno) from None
    if not v.is_integer():
        raise MotParseError(f"{name} must be an integer, got {tok!r}", lineno)
    return int(v)


def _float_field(tok: str, name: str, lineno: int | None) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise MotParseError(f"{name} is not numeric: {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise MotParseError(f"{name} is not finite: {tok!r}", lineno)
    return v


def parse_mot_line(line: str, lineno: int | None = 1) -> AnnotationRecord:
    """Parse one 9-field MOT line.

    >>> parse_mot_line("5,-1,0,0,10,10,0.9,2,1.0").track_id
    -1
    """
    parts = line.strip().split(",")
    if len(parts) != 9:
        raise MotFormatError(f"expected 9 fields, got {len(parts)}", lineno)
    toks = [p.strip() for p in parts]
    rec = AnnotationRecord(
        frame_id=_int_field(toks[0], "frame_id", lineno),
        track_id=_int_field(toks[1], "track_id", lineno),
        left=_float_field(toks[2], "left", lineno),
        top=_float_field(toks[3], "top", lineno),
        width=_float_field(toks[4], "width", lineno),
        height=_float_field(toks[5], "height", lineno),
        confidence=_float_field(toks[6], "confidence", lineno),
        class_id=_int_field(toks[7], "class_id", lineno),
        visibility=_float_field(toks[8], "visibility", lineno),
    )
    validate_record(rec, lineno)
    return rec


def validate_record(rec: AnnotationRecord, lineno: int | None = None) -> None:
    if rec.frame_id < 1:
        raise MotValidationError(f"frame_id must be positive, got {rec.frame_id}", lineno)
    if not (rec.width > 0 and rec.height > 0):
        raise MotValidationError(
            f"box extent must be positive, got {rec.width}x{rec.height}", lineno
        )
    if not 0.0 <= rec.visibility <= 1.0:
        raise MotValidationError(f"visibility {rec.visibility} outside [0, 1]", lineno)


def format_mot_line(rec: AnnotationRecord) -> str:
    return (
        f"{rec.frame_id},{rec.track_id},{rec.left:.2f},{rec.top:.2f},"
        f"{rec.width:.2f},{rec.height:.2f},{rec.confidence:.2f},{rec.class_id},"
        f"{rec.visibility:.2f}"
    )


def read_mot_file(path: str | os.PathLike) -> list[AnnotationRecord]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            records.append(parse_mot_line(s, lineno))
    return records


def write_tracks(
    tracks: Iterable[AnnotationRecord] | Mapping[int, Iterable[AnnotationRecord]],
    out_path: str | os.PathLike,
) -> Path:
    """Write records as MOT lines sorted by (frame, track_id).

    Accepts a flat iterable or a frame -> records mapping. The file is written to a
    temporary sibling and renamed into place.
    """
    if isinstance(tracks, Mapping):
        recs = [r for rs in tracks.values() for r in rs]
    else:
        recs = list(tracks)
    for r in recs:
        if not (r.width > 0 and r.height > 0):
            raise MotValidationError(f"refusing to write empty box for track {r.track_id}")
    recs.sort(key=lambda r: (r.frame_id, r.track_id))
    out_path = Path(out_path)
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "w", newline="\n") as f:
        for r in recs:
            f.write(format_mot_line(r) + "\n")
    os.replace(tmp, out_path)
    return out_path


@dataclass(frozen=True)
class SequenceMeta:
    name: str
    image_width: int
    image_height: int
    frame_rate: float
    n_frames: int
    panoramic: bool = True

    def __post_init__(self):
        if self.image_width <= 0:
            raise MotValidationError(f"image_width must be positive, got {self.image_width}")
        if self.image_height <= 0:
            raise MotValidationError(f"image_height must be positive, got {self.image_height}")
        if self.n_frames <= 0:
            raise MotValidationError(f"n_frames must be positive, got {self.n_frames}")


# sidecar keys, plus the seqinfo.ini spellings used by MOTChallenge
_META_KEYS = {
    "name": "name",
    "width": "image_width",
    "imwidth": "image_width",
    "height": "image_height",
    "imheight": "image_height",
    "fps": "frame_rate",
    "framerate": "frame_rate",
    "frames": "n_frames",
    "seqlength": "n_frames",
    "panoramic": "panoramic",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_key_values(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines, ``#``/``;`` comments and ``[section]`` headers skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;[":
            continue
        if "=" not in s:
            raise MotFormatError(f"expected key=value, got {s!r}", lineno)
        k, v = s.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_meta(path: str | os.PathLike, name: str | None = None) -> SequenceMeta:
    kv = parse_key_values(Path(path).read_text())
    fields: dict = {}
    for k, v in kv.items():
        key = _META_KEYS.get(k.lower())
        if key is not None:
            fields[key] = v
    fields.setdefault("name", name or Path(path).stem)
    missing = {"image_width", "image_height", "n_frames"} - fields.keys()
    if missing:
        raise MotValidationError(f"{path}: missing metadata keys {sorted(missing)}")
    try:
        return SequenceMeta(
            name=fields["name"],
            image_width=int(fields["image_width"]),
            image_height=int(fields["image_height"]),
            frame_rate=float(fields.get("frame_rate", 10.0)),
            n_frames=int(fields["n_frames"]),
            panoramic=parse_bool(fields.get("panoramic", "true")),
        )
    except ValueError as e:
        if isinstance(e, MotError):
            raise
        raise MotParseError(f"{path}: {e}") from None


def write_meta(meta: SequenceMeta, path: str | os.PathLike) -> None:
    Path(path).write_text(
        f"name={meta.name}\nwidth={meta.image_width}\nheight={meta.image_height}\n"
        f"fps={meta.frame_rate:g}\nframes={meta.n_frames}\n"
        f"panoramic={'true' if meta.panoramic else 'false'}\n"
    )


@dataclass
class LoadedSequence:
    meta: SequenceMeta
    gt: dict[int, list[AnnotationRecord]] | None
    dets: dict[int, list[AnnotationRecord]] | None


def group_frames(
    records: Iterable[AnnotationRecord], n_frames: int, kind: str, min_area: float = DEFAULT_MIN_AREA
) -> dict[int, list[AnnotationRecord]]:
    """Bucket records into frames ``1..n_frames``; every frame gets a (possibly empty) list.

    ``kind`` is ``"gt"`` (ordered by track id, duplicate ids rejected, 0-confidence
    records marked ignore), ``"pred"`` (tracker output: ordered by track id, duplicate
    ids rejected, any confidence) or ``"det"`` (ordered by descending confidence).
    """
    if kind not in ("gt", "pred", "det"):
        raise ValueError(f"unknown stream kind {kind!r}")
    frames: dict[int, list[AnnotationRecord]] = defaultdict(list)
    seen = set()
    for r in records:
        if r.frame_id > n_frames:
            raise MotValidationError(f"frame {r.frame_id} beyond sequence length {n_frames}")
        flags = {"small": r.area < min_area}
        if kind == "gt" and r.confidence not in (0.0, 1.0):
            raise MotValidationError(
                f"frame {r.frame_id} id {r.track_id}: gt confidence must be 0 or 1"
            )
        if kind != "det":
            key = (r.frame_id, r.track_id)
            if key in seen:
                raise MotValidationError(f"duplicate identity {r.track_id} in frame {r.frame_id}")
            seen.add(key)
        if kind == "gt":
            flags["ignore"] = r.confidence == 0.0
        frames[r.frame_id].append(replace(r, **flags))
    out = {}
    for f in range(1, n_frames + 1):
        rs = frames.get(f, [])
        if kind != "det":
            rs.sort(key=lambda r: r.track_id)
        else:
            rs.sort(key=lambda r: -r.confidence)
        out[f] = rs
    return out


def load_sequence(
    gt_path: str | os.PathLike | None,
    det_path: str | os.PathLike | None,
    meta: SequenceMeta,
    min_area: float = DEFAULT_MIN_AREA,
) -> LoadedSequence:
    gt = dets = None
    if gt_path is not None:
        gt = group_frames(read_mot_file(gt_path), meta.n_frames, "gt", min_area)
    if det_path is not None:
        dets = group_frames(read_mot_file(det_path), meta.n_frames, "det", min_area)
    return LoadedSequence(meta, gt, dets)


def drop_small(
    frames: Mapping[int, list[AnnotationRecord]],
) -> dict[int, list[AnnotationRecord]]:
    return {f: [r for r in rs if not r.small] for f, rs in frames.items()}
