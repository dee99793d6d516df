import json
import math

import numpy as np
import pytest

from centroida.data import DomainTag, LabeledDataset
from centroida.eval import (
    MetricsReport,
    confusion_matrix,
    evaluate,
    per_class_mean_accuracy,
    predict,
)
from centroida.model import BottleneckClassifier


# ------------------------------------------------------------- confusion

def test_confusion_perfect_predictor_is_diagonal():
    y = np.array([0, 1, 2, 1, 0, 2])
    cm = confusion_matrix(y, y, 3)
    assert np.array_equal(cm, np.diag([2, 2, 2]))


def test_confusion_constant_predictor_fills_one_column():
    y = np.array([0, 1, 2, 2])
    cm = confusion_matrix(y, np.zeros(4, dtype=int), 3)
    assert np.array_equal(cm, np.array([[1, 0, 0], [1, 0, 0], [2, 0, 0]]))


def test_confusion_counts_match_pairwise_oracle():
    rng = np.random.default_rng(50)
    y_true = rng.integers(0, 4, size=300)
    y_pred = rng.integers(0, 4, size=300)
    cm = confusion_matrix(y_true, y_pred, 4)
    for i in range(4):
        for j in range(4):
            assert cm[i, j] == np.sum((y_true == i) & (y_pred == j))
    assert cm.sum() == 300


def test_confusion_rejects_bad_inputs():
    with pytest.raises(ValueError, match="equal length"):
        confusion_matrix(np.array([0, 1]), np.array([0]), 2)
    with pytest.raises(ValueError, match="pred labels"):
        confusion_matrix(np.array([0, 1]), np.array([0, 2]), 2)
    with pytest.raises(ValueError, match="true labels"):
        confusion_matrix(np.array([-1, 1]), np.array([0, 1]), 2)


# ---------------------------------------------------------- mean accuracy

def test_per_class_identity():
    per_class, mean = per_class_mean_accuracy(np.diag([3, 5, 7]))
    assert per_class.tolist() == [1.0, 1.0, 1.0]
    assert mean == 1.0


def test_per_class_hand_case():
    per_class, mean = per_class_mean_accuracy(np.array([[9, 1], [5, 5]]))
    assert per_class.tolist() == [0.9, 0.5]
    assert mean == pytest.approx(0.7, abs=1e-15)


def test_per_class_empty_class_excluded():
    cm = np.array([[4, 0, 0], [0, 0, 0], [1, 0, 3]])
    per_class, mean = per_class_mean_accuracy(cm)
    assert per_class[0] == 1.0
    assert math.isnan(per_class[1])
    assert per_class[2] == 0.75
    assert mean == pytest.approx(0.875, abs=1e-15)


def test_per_class_all_empty_is_error():
    with pytest.raises(ValueError, match="no samples"):
        per_class_mean_accuracy(np.zeros((3, 3), dtype=int))


def test_per_class_counts_validated():
    cm = np.array([[9, 1], [5, 5]])
    per_class, mean = per_class_mean_accuracy(cm, class_counts=np.array([10, 10]))
    assert mean == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ValueError, match="class_counts"):
        per_class_mean_accuracy(cm, class_counts=np.array([10, 9]))


def test_per_class_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        per_class_mean_accuracy(np.ones((2, 3), dtype=int))


def test_mean_acc_invariant_under_class_relabeling():
    rng = np.random.default_rng(7)
    y_true = rng.integers(0, 5, size=400)
    y_pred = rng.integers(0, 5, size=400)
    _, mean = per_class_mean_accuracy(confusion_matrix(y_true, y_pred, 5))
    perm = rng.permutation(5)
    _, mean_p = per_class_mean_accuracy(
        confusion_matrix(perm[y_true], perm[y_pred], 5)
    )
    assert mean == pytest.approx(mean_p, abs=1e-12)


def test_balanced_data_mean_acc_equals_plain_accuracy():
    rng = np.random.default_rng(8)
    y_true = np.repeat(np.arange(4), 100)
    y_pred = rng.integers(0, 4, size=400)
    cm = confusion_matrix(y_true, y_pred, 4)
    _, mean = per_class_mean_accuracy(cm)
    assert mean == pytest.approx(np.mean(y_true == y_pred), abs=1e-12)


def test_majority_bias_hurts_mean_acc_more_than_plain_accuracy():
    # 90 samples of class 0, 10 of class 1; predictor always answers 0
    y_true = np.array([0] * 90 + [1] * 10)
    y_pred = np.zeros(100, dtype=int)
    cm = confusion_matrix(y_true, y_pred, 2)
    _, mean = per_class_mean_accuracy(cm)
    plain = np.mean(y_true == y_pred)
    assert plain == 0.9
    assert mean == 0.5
    assert mean < plain


# --------------------------------------------------------------- report

def _sample_report() -> MetricsReport:
    cm = np.array([[4, 0, 0], [0, 0, 0], [1, 0, 3]])
    per_class, mean = per_class_mean_accuracy(cm)
    return MetricsReport(
        confusion=cm,
        per_class_acc=per_class,
        mean_acc=mean,
        class_counts=cm.sum(axis=1),
        run_metadata={"seed": 0, "variant": "full"},
    )


def test_report_round_trips_through_dict_with_nan_as_null():
    r = _sample_report()
    d = json.loads(json.dumps(r.to_dict()))  # must be JSON-serializable
    assert d["per_class_acc"][1] is None
    back = MetricsReport.from_dict(d)
    assert np.array_equal(back.confusion, r.confusion)
    assert math.isnan(back.per_class_acc[1])
    assert back.mean_acc == r.mean_acc
    assert back.run_metadata == r.run_metadata


def test_report_writers(tmp_path):
    r = _sample_report()
    r.write_json(tmp_path / "m.json")
    got = json.loads((tmp_path / "m.json").read_text())
    assert got["mean_acc"] == r.mean_acc
    r.write_confusion_csv(tmp_path / "cm.csv")
    lines = (tmp_path / "cm.csv").read_text().splitlines()
    assert lines[0] == "true\\pred,0,1,2"
    assert lines[1] == "0,4,0,0"
    assert lines[3] == "2,1,0,3"


# ------------------------------------------------------------- model scoring

def _tiny_dataset(n=700, domain=DomainTag.TARGET):
    rng = np.random.default_rng(9)
    feats = rng.standard_normal((n, 3))
    labels = rng.integers(0, 2, size=n)
    return LabeledDataset(feats, labels, domain, n_classes=2)


def test_predict_covers_dataset_and_reads_no_labels():
    ds = _tiny_dataset()
    model = BottleneckClassifier(3, 4, 2, 2, seed=0)
    preds = predict(model, ds, batch_size=256)  # forces a ragged final chunk
    assert preds.shape == (len(ds),)
    assert set(np.unique(preds)) <= {0, 1}
    assert ds.label_reads == 0


def test_predict_chunking_matches_single_pass():
    ds = _tiny_dataset()
    model = BottleneckClassifier(3, 4, 2, 2, seed=1)
    assert np.array_equal(predict(model, ds, batch_size=64), predict(model, ds))


def test_evaluate_reads_target_labels_once_and_reports():
    ds = _tiny_dataset()
    model = BottleneckClassifier(3, 4, 2, 2, seed=0)
    report = evaluate(model, ds, metadata={"seed": 12})
    assert ds.label_reads == 1
    assert report.confusion.sum() == len(ds)
    assert report.run_metadata == {"seed": 12}
    assert 0.0 <= report.mean_acc <= 1.0
    assert np.array_equal(report.class_counts, report.confusion.sum(axis=1))
