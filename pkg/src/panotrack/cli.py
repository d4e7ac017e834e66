"""Command-line interface: ``track``, ``eval``, ``entropy-report`` and ``dssm-check``.

Sequence layout
---------------
A sequence named ``S`` is a MOT text file ``S.txt`` with a metadata sidecar
``S.meta`` (``key=value`` lines: ``name``, ``width``, ``height``, ``fps``,
``frames``, ``panoramic``). Detections, ground truth and tracker results are
all directories of such files; the sidecar may live in a separate directory
(``--meta-dir``).

Settings precedence
-------------------
Tracker settings are resolved as defaults < ``--config`` file < environment
variables < command-line flags. Environment variables use the ``PANOTRACK_``
prefix followed by the upper-cased setting name, for example
``PANOTRACK_TAU_INIT=0.6`` or ``PANOTRACK_MODE=da``.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .dssm import check_invariants
from .feedback import scenario_entropy
from .metrics import EvalOptions, evaluate
from .mot_io import (
    DEFAULT_MIN_AREA,
    MotError,
    SequenceMeta,
    drop_small,
    group_frames,
    parse_key_values,
    read_meta,
    read_mot_file,
    write_tracks,
)
from .report import to_csv, to_text
from .tracker import Tracker, TrackerConfig, detection_from_record, run_sequence

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3
ENV_PREFIX = "PANOTRACK_"
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    """Inputs are readable but inconsistent, or a checked contract does not hold."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- settings

# flag name -> TrackerConfig field
_TRACK_FLAGS = {
    "mode": "mode",
    "tau_init": "tau_init",
    "tau_update": "tau_update",
    "noise": "noise_scale",
    "feature_noise": "feature_noise_scale",
    "gate": "gate_radius",
    "max_age": "max_age",
    "min_hits": "min_hits",
    "conf_split": "conf_split",
    "cascade": "cascade",
    "iou_gate": "iou_gate",
    "da_rebind": "da_rebind",
    "seed": "rng_seed",
    "interpolate": "interpolate",
}
_FIELD_TYPES = {f.name: f.type for f in fields(TrackerConfig)}


def _coerce(name: str, raw) -> object:
    """Convert a string setting to the type of TrackerConfig field ``name``."""
    if not isinstance(raw, str):
        return raw
    kind = _FIELD_TYPES[name]
    text = raw.strip()
    try:
        if "bool" in kind:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if "None" in kind and text.lower() in ("", "none"):
            return None
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        return text
    except ValueError as e:
        raise UsageError(f"bad value for {name}: {e}") from None


# "panoramic" is resolved per sequence, so it is handled apart from TrackerConfig
_EXTRA_SETTINGS = ("panoramic",)


def _settings_from_mapping(kv: dict[str, str], origin: str) -> dict:
    out = {}
    for key, value in kv.items():
        name = key.strip().lower().replace("-", "_")
        name = _TRACK_FLAGS.get(name, name)
        if name in _EXTRA_SETTINGS:
            out[name] = value.strip().lower()
        elif name in _FIELD_TYPES and name != "panoramic":
            out[name] = _coerce(name, value)
        else:
            raise UsageError(f"{origin}: unknown setting {key!r}")
    return out


def _env_settings(environ) -> dict:
    kv = {k[len(ENV_PREFIX):]: v for k, v in environ.items() if k.startswith(ENV_PREFIX)}
    return _settings_from_mapping(kv, "environment")


def resolve_settings(args, environ=None) -> dict:
    settings: dict = TrackerConfig().as_dict()
    del settings["panoramic"]
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        settings.update(_settings_from_mapping(parse_key_values(path.read_text()), str(path)))
    settings.update(_env_settings(os.environ if environ is None else environ))
    for flag, name in _TRACK_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[name] = value
    if getattr(args, "panoramic", None) is not None:
        settings["panoramic"] = args.panoramic
    settings.setdefault("panoramic", "auto")
    if settings["panoramic"] not in ("on", "off", "auto"):
        raise UsageError(f"--panoramic must be on, off or auto, got {settings['panoramic']!r}")
    return settings


def tracker_config(settings: dict, meta: SequenceMeta | None = None) -> TrackerConfig:
    cfg = {k: v for k, v in settings.items() if k in _FIELD_TYPES and k != "panoramic"}
    mode = settings.get("panoramic", "auto")
    if mode == "auto":
        cfg["panoramic"] = True if meta is None else meta.panoramic
    else:
        cfg["panoramic"] = mode == "on"
    try:
        return TrackerConfig(**cfg)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


# ---------------------------------------------------------------- helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _find_sequences(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(directory.glob("*.txt"))}


def _meta_for(name: str, meta_dir: Path) -> tuple[SequenceMeta, Path]:
    path = meta_dir / f"{name}.meta"
    if not path.is_file():
        raise FileNotFoundError(f"missing metadata sidecar for sequence {name!r}: {path}")
    return read_meta(path, name), path


def _pick(available: dict[str, Path], wanted: Sequence[str] | None) -> dict[str, Path]:
    if not wanted:
        return available
    missing = [w for w in wanted if w not in available]
    if missing:
        raise FileNotFoundError(f"requested sequences not found: {', '.join(missing)}")
    return {w: available[w] for w in wanted}


def _pool_map(fn, jobs: list, workers: int | None) -> list:
    n = workers or os.cpu_count() or 1
    if n <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------- track


def _load_dets(det_path: Path, meta: SequenceMeta, min_area: float | None):
    area = DEFAULT_MIN_AREA if min_area is None else min_area
    frames = group_frames(read_mot_file(det_path), meta.n_frames, "det", area)
    return drop_small(frames) if min_area is not None else frames


def _track_one(job: tuple) -> tuple[str, str, str]:
    name, det_path, meta_path, out_path, settings, min_area = job
    meta = read_meta(meta_path, name)
    cfg = tracker_config(settings, meta)
    out = run_sequence(_load_dets(Path(det_path), meta, min_area), cfg, meta)
    write_tracks(out, out_path)
    return name, out_path, _sha256(Path(out_path))


def _run_track(inputs: dict, settings: dict, out_dir: Path, min_area, workers) -> dict:
    """``inputs`` maps sequence name -> {"detections": path, "meta": path}."""
    jobs = []
    for name, entry in sorted(inputs.items()):
        meta = read_meta(entry["meta"], name)
        tracker_config(settings, meta)  # reject bad settings before spawning workers
        jobs.append(
            (name, entry["detections"], entry["meta"], str(out_dir / f"{name}.txt"), settings, min_area)
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    results = _pool_map(_track_one, jobs, workers)
    duration = time.perf_counter() - started
    manifest = {
        "tool": "panotrack",
        "version": __version__,
        "command": "track",
        "settings": {k: settings[k] for k in sorted(settings)},
        "seed": settings["rng_seed"],
        "min_area_filter": min_area,
        "inputs": {
            name: {
                "detections": str(Path(e["detections"]).resolve()),
                "detections_sha256": _sha256(Path(e["detections"])),
                "meta": str(Path(e["meta"]).resolve()),
                "meta_sha256": _sha256(Path(e["meta"])),
            }
            for name, e in sorted(inputs.items())
        },
        "outputs": {
            name: {"path": str(Path(path).resolve()), "sha256": digest}
            for name, path, digest in sorted(results)
        },
        "duration_seconds": round(duration, 6),
    }
    _atomic_write_text(out_dir / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationFailure(f"{path}: not valid JSON ({e})") from None
    for key in ("settings", "inputs"):
        if key not in manifest:
            raise ValidationFailure(f"{path}: manifest lacks {key!r}")
    return manifest


def _verify_inputs(manifest: dict) -> None:
    for name, e in manifest["inputs"].items():
        for kind in ("detections", "meta"):
            p = Path(e[kind])
            if not p.is_file():
                raise FileNotFoundError(f"{name}: {kind} file listed in manifest is missing: {p}")
            want = e.get(f"{kind}_sha256")
            if want and _sha256(p) != want:
                raise ValidationFailure(f"{name}: {kind} file changed since the manifest was written: {p}")


def cmd_track(args) -> int:
    if args.from_manifest:
        manifest = read_manifest(Path(args.from_manifest))
        _verify_inputs(manifest)
        settings = dict(manifest["settings"])
        inputs = manifest["inputs"]
        min_area = manifest.get("min_area_filter")
        if args.out is None:
            raise UsageError("track --from-manifest needs --out")
    else:
        if args.dets is None or args.out is None:
            raise UsageError("track needs --dets and --out (or --from-manifest with --out)")
        settings = resolve_settings(args)
        det_dir = Path(args.dets)
        meta_dir = Path(args.meta_dir) if args.meta_dir else det_dir
        seqs = _pick(_find_sequences(det_dir), args.sequences)
        if not seqs:
            raise FileNotFoundError(f"no detection files (*.txt) in {det_dir}")
        inputs = {}
        for name, path in seqs.items():
            _, meta_path = _meta_for(name, meta_dir)
            inputs[name] = {"detections": str(path), "meta": str(meta_path)}
        min_area = args.min_area_filter
    manifest = _run_track(inputs, settings, Path(args.out), min_area, args.workers)
    for name, e in manifest["outputs"].items():
        print(f"{name}\t{e['path']}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    gt_dir, res_dir = Path(args.gt), Path(args.results)
    meta_dir = Path(args.meta_dir) if args.meta_dir else gt_dir
    gts, results = _find_sequences(gt_dir), _find_sequences(res_dir)
    if args.sequences:
        gts = _pick(gts, args.sequences)
        results = {k: v for k, v in results.items() if k in gts}
    only_gt = sorted(set(gts) - set(results))
    only_res = sorted(set(results) - set(gts))
    if only_gt or only_res:
        for name in only_gt:
            print(f"unmatched: {name} has ground truth but no result file", file=sys.stderr)
        for name in only_res:
            print(f"unmatched: {name} has a result file but no ground truth", file=sys.stderr)
        if not args.allow_partial:
            raise ValidationFailure("sequence names differ between ground truth and results")
    names = sorted(set(gts) & set(results))
    if not names:
        raise ValidationFailure("no sequences to evaluate")

    options = EvalOptions(
        iou_threshold=args.iou_threshold,
        panoramic=None if args.panoramic in (None, "auto") else args.panoramic == "on",
    )
    area = DEFAULT_MIN_AREA if args.min_area_filter is None else args.min_area_filter
    evaluated = []
    for name in names:
        meta, _ = _meta_for(name, meta_dir)
        gt = group_frames(read_mot_file(gts[name]), meta.n_frames, "gt", area)
        pred = group_frames(read_mot_file(results[name]), meta.n_frames, "pred", area)
        if args.min_area_filter is not None:
            gt, pred = drop_small(gt), drop_small(pred)
        evaluated.append(evaluate(gt, pred, meta, options))

    text = to_text(evaluated)
    sys.stdout.write(text)
    if args.report:
        _atomic_write_text(Path(args.report), text)
    if args.csv:
        _atomic_write_text(Path(args.csv), to_csv(evaluated))
    return EXIT_OK


# ---------------------------------------------------------------- entropy-report


def _history(det_path: Path, meta: SequenceMeta, cfg: TrackerConfig, min_area):
    trk = Tracker(cfg, meta.image_width, meta.image_height, keep_history=True)
    W = float(meta.image_width)
    for f, recs in _load_dets(det_path, meta, min_area).items():
        trk.step(f, [detection_from_record(r, W) for r in recs])
    return [(instances, dets) for _, instances, dets in trk.history]


def cmd_entropy(args) -> int:
    manifest = read_manifest(Path(args.manifest))
    _verify_inputs(manifest)
    settings = dict(manifest["settings"])
    min_area = manifest.get("min_area_filter")
    gate = args.gate
    lines, csv_rows, violations = [], [], []
    for name, entry in sorted(manifest["inputs"].items()):
        meta = read_meta(entry["meta"], name)
        cfg = tracker_config(settings, meta)
        radius = cfg.gate_radius if gate is None else gate
        frames = _history(Path(entry["detections"]), meta, cfg, min_area)
        rep = scenario_entropy(frames, radius, cfg.panoramic)
        try:
            rep.check(args.tolerance)
            status = "ok"
        except AssertionError as e:
            status = f"DEFECT {e}"
            violations.append(name)
        lines.append(rep.to_text(name) + f"status={status}\n")
        csv_rows.append(
            f"{name},{rep.h_independent!r},{rep.h_feedback!r},{rep.reduction!r},{rep.n_frames},{radius!r}"
        )
    text = "\n".join(lines)
    sys.stdout.write(text)
    if args.out:
        _atomic_write_text(Path(args.out), text)
    if args.csv:
        header = "sequence,h_independent,h_feedback,reduction,n_frames,gate_radius\n"
        _atomic_write_text(Path(args.csv), header + "\n".join(csv_rows) + "\n")
    if violations:
        raise ValidationFailure(
            "defect: entropy contract violated for " + ", ".join(violations)
        )
    return EXIT_OK


# ---------------------------------------------------------------- dssm-check


def cmd_dssm(args) -> int:
    rows = check_invariants(args.seed, args.channels, args.width, args.height)
    failed = 0
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        failed += not ok
    print(f"{len(rows) - failed}/{len(rows)} invariants hold")
    if failed:
        raise ValidationFailure(f"{failed} DynamicSSM invariant(s) failed")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _non_negative(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _on_off(text: str) -> bool:
    low = text.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panotrack", description="Panoramic multi-object tracking and evaluation.")
    p.add_argument("--version", action="version", version=f"panotrack {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("track", help="track detections and write MOT result files")
    t.add_argument("--dets", help="directory of detection files <seq>.txt")
    t.add_argument("--meta-dir", help="directory of <seq>.meta sidecars (default: --dets)")
    t.add_argument("--out", help="output directory for results and manifest.json")
    t.add_argument("--from-manifest", help="re-run exactly the inputs and settings of a manifest")
    t.add_argument("--config", help="key=value file of tracker settings (flags win)")
    t.add_argument("--sequences", nargs="+", help="only these sequence names")
    t.add_argument("--mode", choices=["e2e", "da"])
    t.add_argument("--tau-init", type=_unit_interval, help="initialization threshold (default 0.55)")
    t.add_argument("--tau-update", type=_unit_interval, help="update threshold (default 0.45)")
    t.add_argument("--noise", type=_non_negative, help="prior-instance noise scale (default 0.5)")
    t.add_argument("--feature-noise", type=_non_negative, help="separate noise scale for features")
    t.add_argument("--gate", type=float, help="gate radius in pixels (default 50)")
    t.add_argument("--max-age", type=_positive_int)
    t.add_argument("--min-hits", type=_positive_int)
    t.add_argument("--conf-split", type=_unit_interval, help="score split for the DA cascade")
    t.add_argument("--cascade", type=_on_off, metavar="on|off")
    t.add_argument("--iou-gate", type=_unit_interval)
    t.add_argument("--da-rebind", type=_on_off, metavar="on|off")
    t.add_argument("--interpolate", type=_on_off, metavar="on|off")
    t.add_argument("--seed", type=int)
    t.add_argument("--panoramic", choices=["on", "off", "auto"])
    t.add_argument("--min-area-filter", type=_non_negative, metavar="PX2",
                   help="drop detections smaller than this area before tracking")
    t.add_argument("--workers", type=_positive_int, help="worker processes (default: logical cores)")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score result files against ground truth")
    e.add_argument("--gt", required=True, help="directory of ground-truth files <seq>.txt")
    e.add_argument("--results", required=True, help="directory of result files <seq>.txt")
    e.add_argument("--meta-dir", help="directory of <seq>.meta sidecars (default: --gt)")
    e.add_argument("--sequences", nargs="+")
    e.add_argument("--allow-partial", action="store_true",
                   help="evaluate the common sequences when names do not line up")
    e.add_argument("--panoramic", choices=["on", "off", "auto"])
    e.add_argument("--iou-threshold", type=_unit_interval, default=0.5)
    e.add_argument("--min-area-filter", type=_non_negative, metavar="PX2")
    e.add_argument("--report", help="also write the text table here")
    e.add_argument("--csv", help="write a full-precision CSV table here")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("entropy-report", help="association entropy with and without gating")
    h.add_argument("--manifest", required=True, help="manifest.json of a track run (or its directory)")
    h.add_argument("--gate", type=float, help="gate radius override in pixels")
    h.add_argument("--tolerance", type=_non_negative, default=1e-12)
    h.add_argument("--out", help="also write the key=value report here")
    h.add_argument("--csv", help="write a CSV summary here")
    h.set_defaults(func=cmd_entropy)

    d = sub.add_parser("dssm-check", help="check DynamicSSM invariants on random maps")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--channels", type=_positive_int, default=3)
    d.add_argument("--width", type=_positive_int, default=6)
    d.add_argument("--height", type=_positive_int, default=5)
    d.set_defaults(func=cmd_dssm)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "gate", None) is not None and not args.gate > 0:
            raise UsageError("--gate must be positive")
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationFailure, MotError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
