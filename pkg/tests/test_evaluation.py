import json

import numpy as np
import pytest

from app.models.types import LabeledEmbeddingSet, \
    Manifest, \
    UnlearnMode
from app.services.evaluation_service import EvaluationReport, \
    classify, \
    classify_batch, \
    cosine_logits, \
    evaluate, \
    merge_reports_table, \
    mia_score, \
    overall_accuracy
from app.services.unlearning_service import ProjectionBank
from app.utils.error_handlers import BadDocument, \
    DataError, \
    DimensionError, \
    InvalidPercentage, \
    UnknownLabel


def test_mia_reproduces_published_rows():
    assert mia_score(100.00, 5.01, 99.89, 99.78) == pytest.approx(94.88, abs=0.005)
    assert mia_score(94.12, 14.51, 98.10, 98.88) == pytest.approx(80.39, abs=0.005)
    assert mia_score(93.34, 12.95, 99.34, 99.34) == pytest.approx(80.39, abs=0.005)


def test_mia_rejects_non_percentages():
    with pytest.raises(InvalidPercentage):
        mia_score(101.0, 5.0, 99.0, 99.0)
    with pytest.raises(InvalidPercentage):
        mia_score(100.0, -0.1, 99.0, 99.0)
    with pytest.raises(InvalidPercentage):
        mia_score(float('nan'), 0.0, 0.0, 0.0)


def test_cosine_logits_snap_and_zero_rows():
    texts = np.eye(3)
    logits = cosine_logits(np.array([[1.0, 1e-12, 0.0], [0.0, 0.0, 0.0]]), texts)
    assert logits[0, 0] == pytest.approx(1.0)
    assert logits[0, 1] == 0.0
    assert np.all(logits[1] == 0.0)
    with pytest.raises(DimensionError):
        cosine_logits(np.ones((1, 2)), texts)


def test_ties_go_to_lowest_index():
    bank = ProjectionBank.identity(np.eye(3), ['d'])
    texts = np.eye(3)
    assert classify(np.zeros(3), bank, 'd', texts) == 0
    assert classify(np.array([0.0, 1.0, 1.0]), bank, 'd', texts) == 1
    assert list(classify_batch(np.eye(3)[::-1], bank, 'd', texts)) == [2, 1, 0]
    with pytest.raises(UnknownLabel):
        classify(np.zeros(3), bank, 'x', texts)


def _toy_manifest():
    return Manifest(classes=['a', 'b', 'c'],
                    domains=['d0', 'd1'],
                    forget_classes=['a'],
                    unlearn_domains=['d1'],
                    mode=UnlearnMode.selective(['d1']),
                    embedding_dim=3,
                    feature_dim=3)


def _toy_data():
    features = np.vstack([np.eye(3), np.eye(3)])
    return LabeledEmbeddingSet(features,
                               np.array([0, 0, 0, 1, 1, 1]),
                               np.array([0, 1, 2, 0, 1, 2]))


def test_evaluate_on_hand_built_bank():
    manifest = _toy_manifest()
    w = np.eye(3)
    p = np.diag([0.0, 1.0, 1.0])
    bank = ProjectionBank(base=w,
                          mode=manifest.mode,
                          domains=manifest.domains,
                          entries={'d0': w, 'd1': w @ p})
    report = evaluate(_toy_data(), bank, manifest, np.eye(3))

    assert report.cell('BF', 'd1', 'forget') == 100.0
    assert report.cell('AF', 'd1', 'forget') == 100.0  # zero logits tie on index 0
    assert report.cell('AF', 'd1', 'retain') == 100.0
    assert report.cell('AF', 'd0', 'forget') == report.cell('BF', 'd0', 'forget')
    assert report.counts['d1'] == {'retain': 2, 'forget': 1}
    assert report.mia['d1'] == 0.0
    assert overall_accuracy(report, 'AF', 'd1') == 100.0


def test_forget_accuracy_drops_when_forget_class_is_not_first():
    manifest = _toy_manifest()
    manifest.forget_classes = ['b']
    w = np.eye(3)
    bank = ProjectionBank(base=w,
                          mode=manifest.mode,
                          domains=manifest.domains,
                          entries={'d0': w, 'd1': w @ np.diag([1.0, 0.0, 1.0])})
    report = evaluate(_toy_data(), bank, manifest, np.eye(3))
    assert report.cell('AF', 'd1', 'forget') == 0.0
    assert report.mia['d1'] == pytest.approx(100.0)


def test_evaluate_rejects_empty_and_mismatched_inputs():
    manifest = _toy_manifest()
    bank = ProjectionBank.identity(np.eye(3), manifest.domains)
    empty = LabeledEmbeddingSet(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    with pytest.raises(DataError):
        evaluate(empty, bank, manifest, np.eye(3))
    with pytest.raises(DimensionError):
        evaluate(_toy_data(), bank, manifest, np.eye(3)[:2])


def test_report_emitters_are_rounded_and_stable():
    manifest = _toy_manifest()
    bank = ProjectionBank.identity(np.eye(3), manifest.domains, manifest.mode)
    report = evaluate(_toy_data(), bank, manifest, np.eye(3), config={'cosine_zero_tol': 1e-10})
    document = json.loads(report.render_document())
    assert document['accuracy']['BF']['d0'] == {'retain': 100.0, 'forget': 100.0}
    assert document['label'] == 'selective:d1'
    assert report.render_document() == EvaluationReport.from_document(document).render_document()

    lines = report.render_csv().splitlines()
    assert lines[0] == 'mode,domain,set,phase,accuracy,mia'
    assert lines[1] == 'selective:d1,d0,retain,BF,100.00,0.00'
    assert len(lines) == 1 + 2 * 2 * 2


def test_empty_cells_are_null():
    manifest = _toy_manifest()
    manifest.forget_classes = ['a', 'b', 'c']
    bank = ProjectionBank.identity(np.eye(3), manifest.domains)
    report = evaluate(_toy_data(), bank, manifest, np.eye(3))
    assert report.cell('BF', 'd0', 'retain') is None
    assert report.mia['d0'] is None
    assert report.to_document()['mia']['d0'] is None


def test_from_document_rejects_malformed():
    with pytest.raises(DataError):
        EvaluationReport.from_document({'domains': []})
    with pytest.raises(BadDocument):
        EvaluationReport.from_document({'accuracy': {}, 'mia': {}, 'mode': {'kind': 'global'}, 'domains': ['photo']})
    with pytest.raises(BadDocument):
        EvaluationReport.from_document({'accuracy': {'BF': {'photo': {'retain': 1.0}}}, 'mia': {},
                                        'mode': {}, 'domains': ['photo']})


def test_merge_reports_table():
    manifest = _toy_manifest()
    bank = ProjectionBank.identity(np.eye(3), manifest.domains, manifest.mode)
    report = evaluate(_toy_data(), bank, manifest, np.eye(3))
    table = merge_reports_table([report, report]).splitlines()
    assert table[0] == 'selective_forget,domain,retain_bf,retain_af,forget_bf,forget_af,mia'
    assert table[1] == 'd1,d0,100.00,100.00,100.00,100.00,0.00'
    assert len(table) == 1 + 2 * 2


def test_evaluate_rejects_features_of_the_wrong_width():
    manifest = _toy_manifest()
    bank = ProjectionBank.identity(np.eye(3), manifest.domains)
    narrow = LabeledEmbeddingSet(np.ones((6, 2)), np.array([0, 0, 0, 1, 1, 1]), np.array([0, 1, 2, 0, 1, 2]))
    with pytest.raises(DimensionError):
        evaluate(narrow, bank, manifest, np.eye(3))
    with pytest.raises(DimensionError):
        classify_batch(np.ones((2, 4)), bank, 'd0', np.eye(3))


@pytest.mark.parametrize('domains, classes', [
    ([0, 0, 0, 1, 1, 9], [0, 1, 2, 0, 1, 2]),
    ([0, 0, 0, 1, 1, 1], [0, 1, 2, 0, 1, 3]),
    ([0, 0, 0, 1, 1, 1], [0, 1, -1, 0, 1, 2]),
])
def test_evaluate_rejects_labels_outside_the_manifest(domains, classes):
    manifest = _toy_manifest()
    bank = ProjectionBank.identity(np.eye(3), manifest.domains)
    data = LabeledEmbeddingSet(np.vstack([np.eye(3), np.eye(3)]), np.array(domains), np.array(classes))
    with pytest.raises(UnknownLabel):
        evaluate(data, bank, manifest, np.eye(3))
