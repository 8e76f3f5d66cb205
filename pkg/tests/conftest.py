import numpy as np
import pytest

from app.config import TestingConfig
from app.models.types import LabeledEmbeddingSet, \
    Manifest, \
    SynthesisConfig, \
    SyntheticGenConfig, \
    UnlearnMode
from app.services.encoder_service import TextEmbedder
from app.services.evaluation_service import evaluate
from app.services.synthetic_data_service import PACS_CLASSES, \
    PACS_DOMAINS, \
    build_suite
from app.services.unlearning_service import ProjectionBank, \
    SynthesizedCanonicals, \
    run_unlearning


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope='session')
def pacs_config():
    return SyntheticGenConfig(classes=list(PACS_CLASSES),
                              domains=list(PACS_DOMAINS),
                              samples_per_cell=50,
                              seed=42)


@pytest.fixture(scope='session')
def pacs_suite(pacs_config):
    """4 domains × 7 classes × 50 samples, E=32, forget = dog, elephant, giraffe."""
    return build_suite(pacs_config)


@pytest.fixture(scope='session')
def tight_synthesis():
    return SynthesisConfig(target_cosine=0.999999,
                           init_seed=7)


@pytest.fixture(scope='session')
def unlearn(pacs_suite, tight_synthesis):
    """Run an unlearning mode on the desk-scale suite with synthesized canonicals."""

    def _unlearn(mode, forget_classes=None, pooled_projector=False, pooled_global=False, encoder=None):
        text = TextEmbedder(pacs_suite.manifest)
        canonicals = SynthesizedCanonicals(encoder or pacs_suite.encoder,
                                           pacs_suite.projection,
                                           text,
                                           tight_synthesis,
                                           pooled_global)
        return run_unlearning(pacs_suite.manifest,
                              pacs_suite.projection,
                              mode,
                              text,
                              canonicals,
                              forget_classes,
                              pooled_projector=pooled_projector)

    return _unlearn


@pytest.fixture
def ledger_url(tmp_path):
    return f"sqlite:///{tmp_path / 'ledger.db'}"


@pytest.fixture
def app_factory(tmp_path, ledger_url):
    from app import create_app

    def _create(manifest_path=None, bank_dir=None):
        class Config(TestingConfig):
            MANIFEST_PATH = str(manifest_path or tmp_path / 'missing' / 'manifest.json')
            BANK_DIR = str(bank_dir or tmp_path / 'missing_bank')
            LEDGER_DATABASE_URL = ledger_url

        return create_app(Config)

    return _create


@pytest.fixture
def toy_report():
    """Selective d1 report over a 3-class, 2-domain hand-built bank that zeroes class b in d1."""

    def _report(label='', forget=('a',)):
        manifest = Manifest(classes=['a', 'b', 'c'],
                            domains=['d0', 'd1'],
                            forget_classes=list(forget),
                            unlearn_domains=['d1'],
                            mode=UnlearnMode.selective(['d1']),
                            embedding_dim=3,
                            feature_dim=3)
        data = LabeledEmbeddingSet(np.vstack([np.eye(3), np.eye(3)]),
                                   np.array([0, 0, 0, 1, 1, 1]),
                                   np.array([0, 1, 2, 0, 1, 2]))
        w = np.eye(3)
        bank = ProjectionBank(base=w,
                              mode=manifest.mode,
                              domains=manifest.domains,
                              entries={'d0': w, 'd1': w @ np.diag([1.0, 0.0, 1.0])})
        return evaluate(data, bank, manifest, np.eye(3), config={'forget': list(forget)}, label=label)

    return _report
