import logging
from dataclasses import dataclass, \
    field
from typing import Dict, \
    List, \
    Optional, \
    Tuple

import numpy as np

from app.core.linalg import as_matrix, \
    l2_normalize, \
    normalize_rows, \
    orthonormal_basis
from app.models.types import LabeledEmbeddingSet, \
    Manifest, \
    SyntheticGenConfig, \
    UnlearnMode
from app.services.encoder_service import EncoderVariant, \
    ToyEncoder, \
    ToyEncoderConfig
from app.utils.error_handlers import DimensionError, \
    InvalidMatrix, \
    PrototypeSamplingFailed, \
    UsageError

logger = logging.getLogger(__name__)

PACS_DOMAINS = ('art_painting', 'cartoon', 'photo', 'sketch')
PACS_CLASSES = ('dog', 'elephant', 'giraffe', 'guitar', 'horse', 'house', 'person')
DEFAULT_FORGET_COUNT = 3
PROJECTION_STREAM = 0x5057
ORTHONORMAL_TOL = 1e-8


def default_names(domain_count: int, class_count: int) -> Tuple[List[str], List[str]]:
    """PACS names when the counts match, otherwise domain_<i> / class_<i>."""
    if domain_count < 1 or class_count < 2:
        raise UsageError("need at least one domain and two classes")
    domains = list(PACS_DOMAINS) if domain_count == len(PACS_DOMAINS) else [f"domain_{i}" for i in range(domain_count)]
    classes = list(PACS_CLASSES) if class_count == len(PACS_CLASSES) else [f"class_{i}" for i in range(class_count)]
    return domains, classes


def make_projection(feature_dim: int, embedding_dim: int, seed: int) -> np.ndarray:
    """D×E matrix with orthonormal columns: QR of a seeded Gaussian, signs fixed by diag(R)."""
    if embedding_dim > feature_dim:
        raise UsageError(f"embedding dimension {embedding_dim} exceeds feature dimension {feature_dim}")
    rng = np.random.default_rng([seed, PROJECTION_STREAM])
    q, r = np.linalg.qr(rng.standard_normal((feature_dim, embedding_dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_prototypes(rng: np.random.Generator, count: int, dim: int, max_cosine: float,
                      max_draws: int) -> np.ndarray:
    """
    Unit prototypes with pairwise cosine ≤ max_cosine, by rejection.

    Raises:
        PrototypeSamplingFailed: if more than max_draws candidates are needed
    """
    accepted: List[np.ndarray] = []
    draws = 0
    while len(accepted) < count:
        if draws >= max_draws:
            raise PrototypeSamplingFailed(f"accepted {len(accepted)} of {count} prototypes after {draws} draws",
                                          payload={
                                              'draws': draws,
                                              'max_cosine': max_cosine})
        draws += 1
        candidate = l2_normalize(rng.standard_normal(dim))
        if all(float(candidate @ other) <= max_cosine for other in accepted):
            accepted.append(candidate)
    logger.debug(f"Sampled {count} prototypes in {draws} draws")
    return np.vstack(accepted)


def sample_domain_directions(rng: np.random.Generator, count: int, prototypes: np.ndarray) -> np.ndarray:
    """Unit directions orthogonal to the prototype span and to each other."""
    dim = prototypes.shape[1]
    if prototypes.shape[0] + count >= dim:
        raise UsageError(f"embedding dimension {dim} leaves no room for {count} domain directions "
                         f"next to {prototypes.shape[0]} prototypes")
    directions: List[np.ndarray] = []
    for _ in range(count):
        basis = orthonormal_basis(np.vstack([prototypes] + directions))
        draw = rng.standard_normal(dim)
        directions.append(l2_normalize(draw - basis @ (basis.T @ draw)))
    return np.vstack(directions)


@dataclass
class SeparabilityCertificate:
    """Per (class, domain) cell: cosine of the mean embedding with its own and the best rival prototype."""
    cells: List[Dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(cell['own'] > cell['rival'] for cell in self.cells)

    @property
    def min_margin(self) -> float:
        return min(cell['own'] - cell['rival'] for cell in self.cells)

    def summary(self) -> str:
        status = 'separable' if self.passed else 'NOT separable'
        return f"{len(self.cells)} cells {status}; minimum margin {self.min_margin:.4f}"


def separability_certificate(dataset: LabeledEmbeddingSet, manifest: Manifest, projection) -> SeparabilityCertificate:
    prototypes = normalize_rows(np.vstack([manifest.synthetic['prototypes'][name] for name in manifest.classes]))
    embeddings = normalize_rows(np.asarray(dataset.features,
                                           dtype=np.float64) @ as_matrix(projection,
                                                                         'projection matrix'))
    certificate = SeparabilityCertificate()
    for domain_index, domain in enumerate(manifest.domains):
        for class_index, name in enumerate(manifest.classes):
            mask = (dataset.domain_labels == domain_index) & (dataset.class_labels == class_index)
            if not np.any(mask):
                continue
            cosines = prototypes @ l2_normalize(embeddings[mask].mean(axis=0))
            rivals = np.delete(cosines,
                               class_index)
            certificate.cells.append({
                'class': name,
                'domain': domain,
                'own': float(cosines[class_index]),
                'rival': float(rivals.max())})
    return certificate


def _check_orthonormal(projection: np.ndarray) -> None:
    gram = projection.T @ projection
    if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ORTHONORMAL_TOL:
        raise InvalidMatrix("generator needs a projection matrix with orthonormal columns")


def generate_synthetic(cfg: SyntheticGenConfig, encoder: ToyEncoder, projection) -> Tuple[LabeledEmbeddingSet, Manifest]:
    """
    Draw a seeded multi-domain suite of pre-projection features.

    Per sample of class c in domain d the target embedding is
    y = normalize(t_c + δ·u_d + σ·ε) with ε ~ N(0, I/E). The feature
    f = y·Wᵀ + n, n in the complement of col(W), is then realized through
    the linear encoder: f = encode(A⁺(f − b)), so f·W reproduces y.

    Args:
        cfg: generator configuration
        encoder: linear toy encoder
        projection: D×E projection with orthonormal columns

    Returns:
        Tuple[LabeledEmbeddingSet, Manifest]: samples ordered domain-major,
        then class, then draw; the manifest carries prototypes and text tables

    Raises:
        PrototypeSamplingFailed: if prototypes cannot be drawn within max_draws
    """
    if EncoderVariant(encoder.variant) is not EncoderVariant.LINEAR:
        raise UsageError("synthetic placement needs the linear toy encoder")
    w = as_matrix(projection,
                  'projection matrix')
    if w.shape != (encoder.feature_dim, cfg.embedding_dim):
        raise DimensionError(f"projection matrix has shape {w.shape}, expected ({encoder.feature_dim}, {cfg.embedding_dim})")
    _check_orthonormal(w)

    classes, domains = list(cfg.classes), list(cfg.domains)
    forget = list(cfg.forget_classes) or classes[:min(DEFAULT_FORGET_COUNT, len(classes) - 1)]
    unlearn_domains = list(cfg.unlearn_domains)
    for name in forget:
        if name not in classes:
            raise UsageError(f"forget class '{name}' is not one of the generated classes")
    for name in unlearn_domains:
        if name not in domains:
            raise UsageError(f"unlearn domain '{name}' is not one of the generated domains")

    rng = np.random.default_rng(cfg.seed)
    e, d = cfg.embedding_dim, encoder.feature_dim
    prototypes = sample_prototypes(rng,
                                   len(classes),
                                   e,
                                   cfg.prototype_max_cosine,
                                   cfg.max_draws)
    directions = sample_domain_directions(rng,
                                          len(domains),
                                          prototypes)

    per_cell = cfg.samples_per_cell
    n = len(domains) * len(classes) * per_cell
    domain_labels = np.repeat(np.arange(len(domains)),
                              len(classes) * per_cell)
    class_labels = np.tile(np.repeat(np.arange(len(classes)),
                                     per_cell),
                           len(domains))

    noise = rng.standard_normal((n, e)) / np.sqrt(e)
    targets = normalize_rows(prototypes[class_labels] +
                             cfg.domain_offset * directions[domain_labels] +
                             cfg.sample_noise * noise)

    feature_noise = rng.standard_normal((n, d)) * (cfg.feature_noise / np.sqrt(d))
    feature_noise -= (feature_noise @ w) @ w.T
    placed = targets @ w.T + feature_noise
    features = encoder.encode_batch(encoder.pseudo_inverse_input(placed))

    text = {name: prototypes[i].tolist() for i, name in enumerate(classes)}
    domain_text = {
        name: {domain: l2_normalize(prototypes[i] + cfg.domain_offset * directions[j]).tolist()
               for j, domain in enumerate(domains)}
        for i, name in enumerate(classes)}
    mode = UnlearnMode.selective(unlearn_domains) if unlearn_domains else UnlearnMode.global_mode()
    manifest = Manifest(classes=classes,
                        domains=domains,
                        forget_classes=forget,
                        unlearn_domains=unlearn_domains,
                        mode=mode,
                        embedding_dim=e,
                        feature_dim=d,
                        seeds={
                            'generator': cfg.seed,
                            'encoder': cfg.encoder_seed,
                            'synthesis': cfg.synthesis_seed},
                        encoder=encoder.config.to_dict(),
                        text_embeddings=text,
                        domain_text_embeddings=domain_text,
                        synthetic={
                            'prototypes': text,
                            'domain_directions': {domain: directions[j].tolist() for j, domain in enumerate(domains)},
                            'domain_offset': cfg.domain_offset,
                            'generator': {
                                'samples_per_cell': per_cell,
                                'prototype_max_cosine': cfg.prototype_max_cosine,
                                'sample_noise': cfg.sample_noise,
                                'feature_noise': cfg.feature_noise,
                                'max_draws': cfg.max_draws}})

    logger.info(f"Generated {n} samples over {len(domains)} domains and {len(classes)} classes (seed {cfg.seed})")
    return LabeledEmbeddingSet(features,
                               domain_labels.astype(np.int64),
                               class_labels.astype(np.int64)), manifest


@dataclass
class SyntheticSuite:
    encoder: ToyEncoder
    projection: np.ndarray
    dataset: LabeledEmbeddingSet
    manifest: Manifest


def build_suite(cfg: SyntheticGenConfig, variant: Optional[str] = None) -> SyntheticSuite:
    """
    Encoder, projection, dataset and manifest from one generator config.

    Samples are always placed through the linear encoder; a tanh variant only
    changes the encoder recorded for synthesis.
    """
    encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant.LINEAR,
                                          cfg.input_dim,
                                          cfg.feature_dim,
                                          cfg.encoder_seed))
    projection = make_projection(cfg.feature_dim,
                                 cfg.embedding_dim,
                                 cfg.seed)
    dataset, manifest = generate_synthetic(cfg,
                                           encoder,
                                           projection)
    if variant is not None and EncoderVariant(variant) is not EncoderVariant.LINEAR:
        encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant(variant),
                                              cfg.input_dim,
                                              cfg.feature_dim,
                                              cfg.encoder_seed))
        manifest.encoder = encoder.config.to_dict()
    return SyntheticSuite(encoder,
                          projection,
                          dataset,
                          manifest)
