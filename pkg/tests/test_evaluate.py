import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgaug.evaluate import (
    ConfusionMatrix, confusion, net_improvement, pr_curve, pr_curves, pr_curves_svg, prf_report, report_dict,
)

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "target_confusion_matrices.json").read_text())
CLASSES = tuple(FIXTURES["classes"])


def printed(case):
    return CLASSES, FIXTURES["matrices"][case]


def test_confusion_perfect():
    m = confusion(list("AANNj"), list("AANNj"), "ANj")
    np.testing.assert_array_equal(m.percent, 100 * np.eye(3))


def test_confusion_hand_count():
    m = confusion(["A", "A", "N"], ["A", "N", "N"], ["A", "N"])
    np.testing.assert_array_equal(m.counts, [[1, 1], [0, 1]])
    np.testing.assert_array_equal(m.percent, [[50, 50], [0, 100]])


def test_confusion_errors_and_empty_rows():
    with pytest.raises(ValueError):
        confusion([], [], "AN")
    with pytest.raises(ValueError, match="not in class order"):
        confusion(["A"], ["V"], "AN")
    m = confusion(["A"], ["N"], "ANj")
    assert m.empty_rows == ["N", "j"]
    np.testing.assert_array_equal(m.percent[1], 0.0)


def test_prf_binary_hand_case():
    # class "x": TP=9, FN=3 ; FP=1 via a "y" predicted as "x"
    m = ConfusionMatrix(("x", "y"), np.array([[9, 3], [1, 7]]))
    r = prf_report(m)["per_class"]["x"]
    assert r["precision"] == pytest.approx(0.9, abs=1e-12)
    assert r["recall"] == pytest.approx(0.75, abs=1e-12)
    assert r["f1"] == pytest.approx(0.818, abs=1e-3)


def test_prf_perfect_and_zero_denominators():
    r = prf_report(confusion(list("ABC"), list("ABC"), "ABC"))
    assert all(v == 1.0 for c in r["per_class"].values() for k, v in c.items() if k != "support")
    r = prf_report(confusion(["A", "A"], ["A", "A"], "AB"))
    assert r["per_class"]["B"]["precision"] == 0.0 and "precision:B" in r["undefined"]


labels = st.lists(st.sampled_from("PALNRfj"), min_size=1, max_size=60)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_micro_identity_and_row_sums(data):
    y_true = data.draw(labels)
    y_pred = data.draw(st.lists(st.sampled_from("PALNRfj"), min_size=len(y_true), max_size=len(y_true)))
    m = confusion(y_true, y_pred, CLASSES)
    r = prf_report(m)
    assert r["micro"]["precision"] == pytest.approx(r["accuracy"], abs=1e-12)
    assert r["micro"]["recall"] == pytest.approx(r["accuracy"], abs=1e-12)
    for row, n in zip(m.percent, m.support):
        if n:
            assert abs(row.sum() - 100.0) <= 0.2
    assert sum(c["support"] for c in r["per_class"].values()) == len(y_true)
    # swapping truth and prediction swaps precision and recall
    swapped = prf_report(confusion(y_pred, y_true, CLASSES))
    for c in CLASSES:
        if c not in [u.split(":")[1] for u in r["undefined"] + swapped["undefined"] if ":" in u]:
            assert swapped["per_class"][c]["precision"] == pytest.approx(r["per_class"][c]["recall"])


def test_pr_curve_hand_case():
    c = pr_curve([1, 0, 1, 0], [0.9, 0.8, 0.4, 0.1])
    assert c.average_precision == pytest.approx(0.5 * 1 + 0.5 * (2 / 3))
    np.testing.assert_allclose(c.precision, [1, 0.5, 2 / 3, 0.5])
    np.testing.assert_allclose(c.recall, [0.5, 0.5, 1, 1])


def test_pr_curve_degenerate_cases():
    assert pr_curve([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]).average_precision == 1.0
    c = pr_curve([1, 0, 0, 0, 1], [0.5] * 5)
    assert c.recall[-1] == 1.0 and c.precision[-1] == pytest.approx(0.4)
    assert not pr_curve([0, 0], [0.1, 0.2]).defined


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5)), min_size=1, max_size=12))
def test_pr_first_point_is_top_threshold_precision(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], dtype=float)
    if not y.any():
        return
    c = pr_curve(y, s)
    top = s.max()
    assert c.precision[0] == pytest.approx(y[s >= top].mean())
    first_pos = np.flatnonzero(c.recall > 0)[0]
    thr = c.thresholds[first_pos]
    assert c.precision[first_pos] == pytest.approx(y[s >= thr].mean())


def test_pr_curves_multiclass_and_svg():
    probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    curves = pr_curves(["A", "N", "N"], probs, ["A", "N"])
    assert set(curves) == {"A", "N", "micro"}
    svg = pr_curves_svg(curves, "Reference")
    assert svg.startswith("<svg") and "A (AP=" in svg and "micro" in svg


def test_net_improvement_identity_and_antisymmetry():
    assert net_improvement(printed("I"), printed("I")) == (0.0, 0.0)
    a, b = net_improvement(printed("II"), printed("reference")), net_improvement(printed("reference"), printed("II"))
    assert a[0] == pytest.approx(-b[0]) and a[1] == pytest.approx(-b[1])
    with pytest.raises(ValueError):
        net_improvement((("A", "B"), np.eye(2)), (("B", "A"), np.eye(2)))


@pytest.mark.parametrize("case", ["I", "II", "III", "IV"])
def test_net_improvement_reproduces_target_table(case):
    total, minor = net_improvement(printed(case), printed("reference"))
    assert abs(total - FIXTURES["net_improvement"]["total"][case]) <= 0.15
    assert abs(minor - FIXTURES["net_improvement"]["minor"][case]) <= 0.15


def test_report_dict_is_json_ready():
    m = confusion(list("AN"), list("AA"), "AN")
    d = report_dict(m, pr_curves(list("AN"), np.array([[0.9, 0.1], [0.6, 0.4]]), "AN"))
    json.dumps(d)
    assert d["confusion_counts"] == [[1, 0], [1, 0]]
