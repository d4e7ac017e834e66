import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from panotrack.cli import main, resolve_settings, build_parser
from panotrack.mot_io import SequenceMeta, write_meta, write_tracks
from panotrack.synthetic import crowd_scene

GOLDEN = Path(__file__).parent / "data" / "golden"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _table(text):
    lines = text.splitlines()
    header = lines[0].split()
    return {row.split()[0]: dict(zip(header, row.split())) for row in lines[2:]}


def test_golden_noise_free_run(tmp_path, capsys):
    code, out, _ = run(["track", "--dets", GOLDEN / "dets", "--out", tmp_path, "--noise", 0], capsys)
    assert code == 0
    for name in ("seam", "band"):
        assert (tmp_path / f"{name}.txt").read_bytes() == (GOLDEN / "expected" / f"{name}.txt").read_bytes()
        assert f"{name}\t" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["settings"]["noise_scale"] == 0.0
    assert set(manifest["inputs"]) == {"seam", "band"}
    assert not list(tmp_path.glob(".*.tmp"))


def test_seeded_runs_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["track", "--dets", GOLDEN / "dets", "--out", d, "--seed", 1], capsys)[0] == 0
    for name in ("seam", "band"):
        assert (a / f"{name}.txt").read_bytes() == (b / f"{name}.txt").read_bytes()


def test_workers_do_not_change_results(tmp_path, capsys):
    for n in (1, 2):
        assert run(["track", "--dets", GOLDEN / "dets", "--out", tmp_path / str(n), "--workers", n], capsys)[0] == 0
    for name in ("seam", "band"):
        assert (tmp_path / "1" / f"{name}.txt").read_bytes() == (tmp_path / "2" / f"{name}.txt").read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["track", "--dets", "x", "--out", "y", "--tau-init", "1.5"],
        ["track", "--dets", "x", "--out", "y", "--gate", "0"],
        ["track", "--dets", "x", "--out", "y", "--noise", "nan"],
        ["track", "--dets", "x", "--out", "y", "--panoramic", "maybe"],
        ["track", "--out", "y"],
        ["eval", "--gt", "x"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1 and err


def test_missing_inputs_exit_3(tmp_path, capsys):
    assert run(["track", "--dets", tmp_path / "nope", "--out", tmp_path / "o"], capsys)[0] == 3
    shutil.copy(GOLDEN / "dets" / "seam.txt", tmp_path / "seam.txt")  # no sidecar
    assert run(["track", "--dets", tmp_path, "--out", tmp_path / "o"], capsys)[0] == 3
    assert run(["eval", "--gt", GOLDEN / "gt", "--results", tmp_path / "nope"], capsys)[0] == 3


def test_malformed_detections_exit_2(tmp_path, capsys):
    shutil.copy(GOLDEN / "dets" / "seam.meta", tmp_path / "seam.meta")
    (tmp_path / "seam.txt").write_text("1,-1,10,10,5\n")
    code, _, err = run(["track", "--dets", tmp_path, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "line 1" in err


def test_eval_gt_against_itself(capsys):
    code, out, _ = run(["eval", "--gt", GOLDEN / "gt", "--results", GOLDEN / "gt"], capsys)
    assert code == 0
    for row in _table(out).values():
        assert row["HOTA"] == "100.00" and row["MOTA"] == "100.00" and row["IDF1"] == "100.00"


def test_eval_golden_results(tmp_path, capsys):
    code, out, _ = run(["eval", "--gt", GOLDEN / "gt", "--results", GOLDEN / "expected", "--csv", tmp_path / "r.csv"], capsys)
    assert code == 0
    assert _table(out)["COMBINED"]["HOTA"] == "100.00"
    assert (tmp_path / "r.csv").read_text().startswith("sequence,HOTA,")


def _switch_fixture(root):
    gt, res = root / "gt", root / "res"
    gt.mkdir(parents=True)
    res.mkdir()
    meta = SequenceMeta("sw", 2048, 480, 10.0, 10, True)
    write_meta(meta, gt / "sw.meta")
    lines_gt = [f"{f},1,{100 + 5 * f}.00,100.00,40.00,100.00,1.00,1,1.00" for f in range(1, 11)]
    lines_res = [f"{f},{7 if f <= 6 else 8},{100 + 5 * f}.00,100.00,40.00,100.00,1.00,1,1.00" for f in range(1, 11)]
    (gt / "sw.txt").write_text("\n".join(lines_gt) + "\n")
    (res / "sw.txt").write_text("\n".join(lines_res) + "\n")
    return gt, res


def test_eval_id_switch_fixture(tmp_path, capsys):
    gt, res = _switch_fixture(tmp_path)
    code, out, _ = run(["eval", "--gt", gt, "--results", res, "--report", tmp_path / "r.txt"], capsys)
    row = _table(out)["sw"]
    assert code == 0 and row["IDF1"] == "60.00" and row["MOTA"] == "90.00" and row["IDSW"] == "1"
    assert (tmp_path / "r.txt").read_text() == out


def test_eval_partial(tmp_path, capsys):
    gt, res = _switch_fixture(tmp_path)
    shutil.copy(GOLDEN / "gt" / "seam.txt", gt / "seam.txt")
    code, _, err = run(["eval", "--gt", gt, "--results", res], capsys)
    assert code != 0 and "seam" in err
    code, out, err = run(["eval", "--gt", gt, "--results", res, "--allow-partial"], capsys)
    assert code == 0 and "seam" in err and "sw" in _table(out)


def test_eval_panoramic_off_splits_seam_object(tmp_path, capsys):
    gt, res = tmp_path / "gt", tmp_path / "res"
    gt.mkdir()
    res.mkdir()
    write_meta(SequenceMeta("s", 2048, 480, 10.0, 1, True), gt / "s.meta")
    (gt / "s.txt").write_text("1,1,-12.00,100.00,40.00,100.00,1.00,1,1.00\n")
    (res / "s.txt").write_text("1,1,2036.00,100.00,40.00,100.00,1.00,1,1.00\n")
    assert _table(run(["eval", "--gt", gt, "--results", res], capsys)[1])["s"]["TP"] == "1"
    off = _table(run(["eval", "--gt", gt, "--results", res, "--panoramic", "off"], capsys)[1])["s"]
    assert (off["TP"], off["FP"], off["FN"]) == ("0", "1", "1")


def test_settings_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("tau_init=0.7\ngate_radius=30\nmax_age=4\n")
    parser = build_parser()
    args = parser.parse_args(["track", "--config", str(cfg), "--tau-init", "0.9"])
    s = resolve_settings(args, {"PANOTRACK_TAU_INIT": "0.8", "PANOTRACK_MAX_AGE": "6"})
    assert (s["tau_init"], s["gate_radius"], s["max_age"]) == (0.9, 30.0, 6)
    args = parser.parse_args(["track", "--config", str(cfg)])
    assert resolve_settings(args, {"PANOTRACK_TAU_INIT": "0.8"})["tau_init"] == 0.8
    assert resolve_settings(args, {})["tau_init"] == 0.7
    assert resolve_settings(parser.parse_args(["track"]), {})["tau_init"] == 0.55


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("tau_init=2\n")
    code = run(["track", "--dets", GOLDEN / "dets", "--out", tmp_path / "o", "--config", cfg], capsys)[0]
    assert code == 1


def test_env_reaches_manifest(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PANOTRACK_MODE", "da")
    assert run(["track", "--dets", GOLDEN / "dets", "--out", tmp_path], capsys)[0] == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["settings"]["mode"] == "da"


def test_rerun_from_manifest(tmp_path, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    run(["track", "--dets", GOLDEN / "dets", "--out", first, "--seed", 5, "--tau-init", 0.6], capsys)
    assert run(["track", "--from-manifest", first / "manifest.json", "--out", second], capsys)[0] == 0
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    assert m1["settings"] == m2["settings"] and m1["inputs"] == m2["inputs"]
    assert [o["sha256"] for o in m1["outputs"].values()] == [o["sha256"] for o in m2["outputs"].values()]
    assert run(["track", "--from-manifest", first], capsys)[0] == 1


def test_manifest_detects_changed_inputs(tmp_path, capsys):
    dets = tmp_path / "dets"
    shutil.copytree(GOLDEN / "dets", dets)
    run(["track", "--dets", dets, "--out", tmp_path / "a"], capsys)
    with open(dets / "seam.txt", "a") as f:
        f.write("8,-1,5.00,5.00,10.00,10.00,0.90,1,1.00\n")
    assert run(["track", "--from-manifest", tmp_path / "a", "--out", tmp_path / "b"], capsys)[0] == 2


def _entropy(tmp_path, capsys, dets, extra=()):
    assert run(["track", "--dets", dets, "--out", tmp_path / "run", "--noise", 0], capsys)[0] == 0
    csv = tmp_path / "h.csv"
    code, out, _ = run(["entropy-report", "--manifest", tmp_path / "run", "--csv", csv, *extra], capsys)
    rows = [line.split(",") for line in csv.read_text().splitlines()[1:]]
    return code, out, {r[0]: (float(r[1]), float(r[2]), float(r[3])) for r in rows}


def _crowd_dir(root):
    root.mkdir()
    sc = crowd_scene(seed=0)
    write_tracks(sc.dets, root / "crowd.txt")
    write_meta(sc.meta, root / "crowd.meta")
    (root / "empty.txt").write_text("")
    write_meta(SequenceMeta("empty", 2048, 480, 10.0, 5, True), root / "empty.meta")
    return root


def test_entropy_report_crowd(tmp_path, capsys):
    code, out, rows = _entropy(tmp_path, capsys, _crowd_dir(tmp_path / "d"), ["--gate", 50])
    assert code == 0 and "status=ok" in out
    h_ind, h_fb, red = rows["crowd"]
    assert h_ind > 0 and red > 0 and h_fb == pytest.approx(h_ind - red)
    assert rows["empty"] == (0.0, 0.0, 0.0)


def test_entropy_report_all_inclusive_gate(tmp_path, capsys):
    code, _, rows = _entropy(tmp_path, capsys, _crowd_dir(tmp_path / "d"), ["--gate", 1e9])
    assert code == 0 and rows["crowd"][2] == 0.0 and rows["crowd"][0] > 0


def test_dssm_check(capsys):
    code, out, _ = run(["dssm-check", "--seed", 2], capsys)
    assert code == 0 and out.strip().endswith("invariants hold")
    assert "FAIL" not in out


def test_module_entry_point():
    env = dict(os.environ, PYTHONPATH=str(Path(__file__).parents[1] / "src"))
    proc = subprocess.run([sys.executable, "-m", "panotrack", "dssm-check"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "PASS" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "panotrack", "track", "--tau-init", "1.5"], capture_output=True, text=True, env=env)
    assert proc.returncode == 1
