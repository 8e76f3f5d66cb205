import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.loader.dataset_loader import save_dataset
from app.services.encoder_service import EncoderVariant, \
    PrecomputedEncoder, \
    TextEmbedder, \
    TextMode, \
    ToyEncoder, \
    ToyEncoderConfig, \
    build_encoder
from app.utils.error_handlers import DimensionError, \
    UnknownLabel, \
    UsageError


def test_linear_weights_follow_documented_draw_order():
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.LINEAR, 16, 8, seed=3))
    rng = np.random.default_rng(3)
    a = rng.standard_normal((8, 16)) / 4.0
    b = rng.standard_normal(8) / 4.0
    x = np.arange(16, dtype=np.float64) / 10.0
    assert_allclose(encoder.encode(x), a @ x + b, rtol=1e-12)


def test_tanh_weights_follow_documented_draw_order():
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.TANH, 16, 8, seed=5))
    rng = np.random.default_rng(5)
    a1 = rng.standard_normal((16, 16)) / 4.0
    b1 = rng.standard_normal(16) / 4.0
    a2 = rng.standard_normal((8, 16)) / 4.0
    b2 = rng.standard_normal(8) / 4.0
    x = np.linspace(-1.0, 1.0, 16)
    assert_allclose(encoder.encode(x), a2 @ np.tanh(a1 @ x + b1) + b2, rtol=1e-12)


@pytest.mark.parametrize('variant', ['linear', 'tanh'])
def test_batch_encoding_matches_single(variant, rng):
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant(variant), 32, 16, seed=1))
    inputs = rng.standard_normal((5, 32))
    expected = np.vstack([encoder.encode(x) for x in inputs])
    assert_allclose(encoder.encode_batch(inputs), expected, atol=1e-12)


def test_encoders_reject_wrong_input_length():
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.LINEAR, 16, 8, seed=1))
    with pytest.raises(DimensionError):
        encoder.encode(np.ones(15))
    with pytest.raises(DimensionError):
        encoder.input_gradient(np.ones(16), np.ones(7))


def test_toy_encoder_needs_wide_input():
    with pytest.raises(UsageError):
        ToyEncoderConfig(EncoderVariant.LINEAR, 8, 16, seed=1)


def test_pseudo_inverse_reproduces_features(rng):
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.LINEAR, 24, 12, seed=2))
    features = rng.standard_normal((4, 12))
    assert_allclose(encoder.encode_batch(encoder.pseudo_inverse_input(features)), features, atol=1e-10)

    tanh = ToyEncoder(ToyEncoderConfig(EncoderVariant.TANH, 24, 12, seed=2))
    with pytest.raises(UsageError):
        tanh.pseudo_inverse_input(features)


def test_precomputed_encoder_replays_rows(rng):
    features = rng.standard_normal((6, 4))
    encoder = PrecomputedEncoder(features)
    assert encoder.input_dim == 6
    assert encoder.feature_dim == 4
    assert_allclose(encoder.encode(np.eye(6)[2]), features[2])
    assert_allclose(encoder.replay(4), features[4])
    g = rng.standard_normal(4)
    assert_allclose(encoder.input_gradient(np.eye(6)[0], g), features @ g)


def test_text_embedder_synthetic_mode(pacs_suite):
    manifest = pacs_suite.manifest
    text = TextEmbedder(manifest)
    assert text.mode is TextMode.SYNTHETIC

    dog = text.embed_text('dog')
    assert np.linalg.norm(dog) == pytest.approx(1.0)
    assert_allclose(dog, manifest.synthetic['prototypes']['dog'], atol=1e-12)

    photo_dog = text.embed_text('dog', 'photo')
    expected = np.asarray(manifest.synthetic['prototypes']['dog']) + \
        manifest.synthetic['domain_offset'] * np.asarray(manifest.synthetic['domain_directions']['photo'])
    assert_allclose(photo_dog, expected / np.linalg.norm(expected), atol=1e-12)


def test_text_embedder_manifest_lookup_agrees_with_prototypes(pacs_suite):
    lookup = TextEmbedder(pacs_suite.manifest, TextMode.MANIFEST)
    synthetic = TextEmbedder(pacs_suite.manifest, TextMode.SYNTHETIC)
    assert_allclose(lookup.class_text_matrix(), synthetic.class_text_matrix(), atol=1e-12)
    assert_allclose(lookup.embed_text('horse', 'sketch'), synthetic.embed_text('horse', 'sketch'), atol=1e-12)


def test_text_embedder_rejects_unknown_labels(pacs_suite):
    text = TextEmbedder(pacs_suite.manifest)
    with pytest.raises(UnknownLabel):
        text.embed_text('zebra')
    with pytest.raises(UnknownLabel):
        text.embed_text('dog', 'clipart')


def test_build_encoder_switches_variant(pacs_suite):
    encoder = build_encoder(pacs_suite.manifest, 'tanh')
    assert encoder.variant is EncoderVariant.TANH
    assert encoder.input_dim == pacs_suite.encoder.input_dim


def test_linear_encoder_is_affine(rng):
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.LINEAR, 16, 8, seed=3))
    assert_allclose(encoder.encode(np.zeros(16)), encoder.b, atol=1e-12)
    x, y = rng.standard_normal((2, 16))
    alpha = 0.3
    assert_allclose(encoder.encode(alpha * x + (1.0 - alpha) * y),
                    alpha * encoder.encode(x) + (1.0 - alpha) * encoder.encode(y),
                    atol=1e-12)


def test_tanh_gradient_at_origin(rng):
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.TANH, 16, 8, seed=5))
    g = rng.standard_normal(8)
    expected = encoder.a1.T @ ((1.0 - np.tanh(encoder.b1) ** 2) * (encoder.a2.T @ g))
    assert_allclose(encoder.input_gradient(np.zeros(16), g), expected, atol=1e-12)


def test_precomputed_encoder_loads_a_dataset_file(tmp_path, pacs_suite):
    save_dataset(tmp_path / 'dataset.bin', pacs_suite.dataset)
    encoder = PrecomputedEncoder.from_file(tmp_path / 'dataset.bin')
    assert encoder.variant is EncoderVariant.PRECOMPUTED
    assert encoder.input_dim == len(pacs_suite.dataset)
    assert encoder.feature_dim == pacs_suite.encoder.feature_dim
    assert_allclose(encoder.replay(3), pacs_suite.dataset.features[3], atol=1e-6)


def test_precomputed_variant_is_not_a_toy_encoder():
    with pytest.raises(UsageError):
        ToyEncoderConfig(EncoderVariant.PRECOMPUTED, 16, 8, seed=1)
    with pytest.raises(DimensionError):
        PrecomputedEncoder(np.zeros((0, 4)))
