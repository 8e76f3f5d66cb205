import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from app.loader.bank_loader import load_bank, \
    save_bank
from app.loader.dataset_loader import load_dataset, \
    save_dataset
from app.loader.manifest_loader import load_manifest, \
    manifest_from_document, \
    manifest_to_document, \
    render_manifest, \
    save_manifest
from app.loader.matrix_format import MAGIC, \
    encode_matrix, \
    load_matrix, \
    save_matrix
from app.models.types import LabeledEmbeddingSet, \
    UnlearnMode
from app.services.unlearning_service import ProjectionBank
from app.utils.error_handlers import BadDocument, \
    BadDtype, \
    BadMagic, \
    DimensionOverflow, \
    TruncatedPayload, \
    VersionMismatch


def test_matrix_round_trip_is_bit_exact(tmp_path, rng):
    matrix = rng.standard_normal((5, 3))
    save_matrix(tmp_path / 'm.bin', matrix, 'f64')
    loaded = load_matrix(tmp_path / 'm.bin')
    assert loaded.tobytes() == matrix.tobytes()

    single = matrix.astype(np.float32)
    save_matrix(tmp_path / 's.bin', single)
    assert np.array_equal(load_matrix(tmp_path / 's.bin'), single.astype(np.float64))


def test_single_precision_storage_loses_at_most_one_ulp(tmp_path, rng):
    matrix = rng.standard_normal((8, 6))
    save_matrix(tmp_path / 'm.bin', matrix, 'f32')
    loaded = load_matrix(tmp_path / 'm.bin')
    ulp = np.spacing(np.abs(matrix).astype(np.float32)).astype(np.float64)
    assert np.all(np.abs(loaded - matrix) <= ulp)


def test_header_layout(rng):
    data = encode_matrix(np.ones((2, 3)), 'f64')
    assert data[:8] == b'NPULRN01'
    assert struct.unpack('<III', data[8:20]) == (1, 2, 3)
    assert len(data) == 20 + 2 * 3 * 8


@pytest.mark.parametrize('mutate, error', [
    (lambda data: b'XXXXXX01' + data[8:], BadMagic),
    (lambda data: MAGIC[:6] + b'02' + data[8:], VersionMismatch),
    (lambda data: data[:8] + struct.pack('<III', 7, 2, 2) + data[20:], BadDtype),
    (lambda data: data[:8] + struct.pack('<III', 0, 2 ** 16 + 1, 2 ** 15) + data[20:], DimensionOverflow),
    (lambda data: data[:-3], TruncatedPayload),
    (lambda data: data[:10], TruncatedPayload),
    (lambda data: data + b'\x00', TruncatedPayload),
])
def test_malformed_matrix_files(tmp_path, mutate, error):
    path = tmp_path / 'bad.bin'
    path.write_bytes(mutate(encode_matrix(np.ones((2, 2)), 'f32')))
    with pytest.raises(error):
        load_matrix(path)


def test_dataset_round_trip(tmp_path, pacs_suite):
    save_dataset(tmp_path / 'dataset.bin', pacs_suite.dataset)
    loaded = load_dataset(tmp_path / 'dataset.bin')
    assert len(loaded) == 1400
    assert np.array_equal(loaded.features, pacs_suite.dataset.features.astype(np.float32).astype(np.float64))
    assert np.array_equal(loaded.domain_labels, pacs_suite.dataset.domain_labels)
    assert np.array_equal(loaded.class_labels, pacs_suite.dataset.class_labels)


def test_dataset_rejects_bad_magic_and_counts(tmp_path):
    data = LabeledEmbeddingSet(np.ones((2, 3)), np.array([0, 1]), np.array([1, 0]))
    save_dataset(tmp_path / 'd.bin', data)
    raw = (tmp_path / 'd.bin').read_bytes()

    (tmp_path / 'magic.bin').write_bytes(b'NPULXX01' + raw[8:])
    with pytest.raises(BadMagic):
        load_dataset(tmp_path / 'magic.bin')

    (tmp_path / 'count.bin').write_bytes(raw[:8] + struct.pack('<I', 3) + raw[12:])
    with pytest.raises(BadDocument):
        load_dataset(tmp_path / 'count.bin')

    (tmp_path / 'short.bin').write_bytes(raw[:-1])
    with pytest.raises(TruncatedPayload):
        load_dataset(tmp_path / 'short.bin')


def test_manifest_round_trip_is_bit_exact(tmp_path, pacs_suite):
    save_manifest(tmp_path / 'manifest.json', pacs_suite.manifest)
    loaded = load_manifest(tmp_path / 'manifest.json')
    assert manifest_to_document(loaded) == manifest_to_document(pacs_suite.manifest)
    assert render_manifest(loaded) == (tmp_path / 'manifest.json').read_text(encoding='utf-8')
    assert loaded.synthetic['prototypes']['dog'] == pacs_suite.manifest.synthetic['prototypes']['dog']


def test_manifest_key_order_is_fixed(pacs_suite):
    keys = list(manifest_to_document(pacs_suite.manifest))
    assert keys[:8] == ['version', 'classes', 'domains', 'forget_classes', 'unlearn_domains', 'mode',
                        'embedding_dim', 'feature_dim']


def test_manifest_validation(pacs_suite):
    document = manifest_to_document(pacs_suite.manifest)
    with pytest.raises(BadDocument):
        manifest_from_document(dict(document, forget_classes=['zebra']))
    with pytest.raises(BadDocument):
        manifest_from_document(dict(document, domains=['photo', 'photo']))
    with pytest.raises(BadDocument):
        manifest_from_document({k: v for k, v in document.items() if k != 'classes'})
    with pytest.raises(BadDocument):
        manifest_from_document(dict(document, version=99))


def test_malformed_manifest_json(tmp_path):
    (tmp_path / 'manifest.json').write_text('{not json', encoding='utf-8')
    with pytest.raises(BadDocument):
        load_manifest(tmp_path / 'manifest.json')
    (tmp_path / 'latin.json').write_bytes(b'\xff\xfe{"classes": []}')
    with pytest.raises(BadDocument):
        load_manifest(tmp_path / 'latin.json')


@pytest.mark.parametrize('name', ['..', '.', '', '../outside', 'a/b', 'a\\b'])
def test_manifest_rejects_path_unsafe_names(pacs_suite, name):
    document = dict(manifest_to_document(pacs_suite.manifest),
                    unlearn_domains=[],
                    mode={'kind': 'global'})
    with pytest.raises(BadDocument, match='path separators'):
        manifest_from_document(dict(document, domains=['art_painting', 'cartoon', name, 'sketch']))
    with pytest.raises(BadDocument, match='path separators'):
        manifest_from_document(dict(document, classes=[name] + document['classes'][1:],
                                    forget_classes=[]))


def test_bank_round_trip(tmp_path, pacs_suite, unlearn):
    outcome = unlearn(UnlearnMode.selective(['photo']))
    save_bank(tmp_path / 'bank', replace(outcome.bank, settings={'rank_rel_tol': 1e-10}))
    loaded = load_bank(tmp_path / 'bank')

    assert loaded.targeted_domains == ['photo']
    assert loaded.forget_classes == ['dog', 'elephant', 'giraffe']
    assert loaded.settings == {'rank_rel_tol': 1e-10}
    assert loaded.rank_removed == {'photo': 6}
    assert loaded.projection_for('sketch') is loaded.base
    assert np.array_equal(loaded.projection_for('photo'), outcome.bank.projection_for('photo'))
    assert np.array_equal(loaded.projectors['photo'], outcome.bank.projectors['photo'])
    assert [row['kind'] for row in loaded.provenance['photo']] == ['text'] * 3 + ['visual'] * 3
    assert sorted(path.name for path in (tmp_path / 'bank').iterdir()) == [
        'bank.json', 'projection.bin', 'projection_photo.bin', 'projector_photo.bin']


def test_missing_bank_document(tmp_path):
    with pytest.raises(BadDocument):
        load_bank(tmp_path)


def test_bank_document_must_be_utf8_json(tmp_path):
    (tmp_path / 'bank.json').write_bytes(b'\xff\xfe\x00{')
    with pytest.raises(BadDocument):
        load_bank(tmp_path)


def test_bank_domains_stay_inside_the_directory(tmp_path):
    w = np.eye(3)
    bank = ProjectionBank(base=w,
                          mode=UnlearnMode.selective(['../escape']),
                          domains=['safe', '../escape'],
                          entries={'safe': w, '../escape': w @ np.diag([1.0, 0.0, 1.0])})
    with pytest.raises(BadDocument):
        save_bank(tmp_path / 'bank', bank)
    assert not (tmp_path / 'escape.bin').exists()
    assert not (tmp_path / 'bank').exists()

    (tmp_path / 'forged').mkdir()
    save_matrix(tmp_path / 'forged' / 'projection.bin', w, 'f64')
    (tmp_path / 'forged' / 'bank.json').write_text(json.dumps({
        'version': 1,
        'mode': {'kind': 'selective', 'domains': ['../escape']},
        'domains': ['safe', '../escape'],
        'targeted_domains': ['../escape']}), encoding='utf-8')
    with pytest.raises(BadDocument):
        load_bank(tmp_path / 'forged')
