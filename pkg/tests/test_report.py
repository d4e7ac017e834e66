import dataclasses

import pytest

from panotrack.metrics import evaluate
from panotrack.report import COLUMNS, parse_csv, report, rows, to_csv, to_text
from test_metrics import meta, rec, stream


def _id_switch():
    gt = stream([rec(f, 1, 100 + 5 * f) for f in range(1, 11)], 10)
    pred = stream([rec(f, 7 if f <= 6 else 8, 100 + 5 * f) for f in range(1, 11)], 10)
    return evaluate(gt, pred, meta(10, name="switch"))


def _asymmetric():
    a = evaluate(stream([rec(1, 1, 100)], 1), stream([rec(1, 1, 100)], 1), meta(1, name="a"))
    b = evaluate(stream([rec(f, 1, 100) for f in range(1, 10)], 9), stream([], 9), meta(9, name="b"))
    return a, b


def test_single_sequence_aggregate_row_is_identical():
    lines = to_text([_id_switch()]).splitlines()
    seq, agg = lines[2].split(), lines[3].split()
    assert seq[0] == "switch" and agg[0] == "COMBINED"
    assert seq[1:] == agg[1:]


def test_header_column_order():
    header = to_text([_id_switch()]).splitlines()[0].split()
    assert header == ["Sequence", "HOTA", "DetA", "AssA", "MOTA", "IDF1", "OSPA", "TP", "FP", "FN", "IDSW"]
    assert to_csv([_id_switch()]).splitlines()[0] == "sequence," + ",".join(COLUMNS)


def test_text_values_are_percentages():
    row = to_text([_id_switch()]).splitlines()[2].split()
    cells = dict(zip(["Sequence"] + COLUMNS, row))
    assert cells["MOTA"] == "90.00" and cells["IDF1"] == "60.00" and cells["IDSW"] == "1"


def test_csv_reparses_exactly():
    results = [_id_switch(), *_asymmetric()]
    parsed = parse_csv(to_csv(results))
    expected = rows(results)
    assert [p["sequence"] for p in parsed] == [r.name for r in expected]
    for p, r in zip(parsed, expected):
        for col, attr in zip(COLUMNS, ["hota", "deta", "assa", "mota", "idf1", "ospa", "tp", "fp", "fn", "idsw"]):
            assert p[col] == getattr(r, attr)


def test_pooled_row_differs_from_mean_of_ratios():
    a, b = _asymmetric()
    agg = parse_csv(to_csv([a, b]))[-1]
    assert agg["MOTA"] == pytest.approx(0.1)
    assert agg["MOTA"] != pytest.approx((a.mota + b.mota) / 2)  # 0.5 would be the naive mean


def test_report_dispatch_and_errors():
    r = _id_switch()
    assert report([r]) == to_text([r]) and report([r], "csv") == to_csv([r])
    with pytest.raises(ValueError):
        report([r], "xml")
    with pytest.raises(ValueError):
        rows([])


def test_names_with_commas_survive_csv():
    r = dataclasses.replace(_id_switch(), name="a,b")
    assert parse_csv(to_csv([r]))[0]["sequence"] == "a,b"
