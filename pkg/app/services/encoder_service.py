import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, \
    Optional

import numpy as np

from app.core.linalg import as_vector, \
    l2_normalize
from app.loader.dataset_loader import load_dataset
from app.loader.matrix_format import PathLike
from app.models.types import LabeledEmbeddingSet, \
    Manifest
from app.utils.error_handlers import DimensionError, \
    UnknownLabel, \
    UsageError

logger = logging.getLogger(__name__)


class EncoderVariant(str, Enum):
    LINEAR = 'linear'
    TANH = 'tanh'
    PRECOMPUTED = 'precomputed'


@dataclass(frozen=True)
class ToyEncoderConfig:
    variant: EncoderVariant = EncoderVariant.LINEAR
    input_dim: int = 128
    feature_dim: int = 64
    seed: int = 1

    def __post_init__(self):
        if EncoderVariant(self.variant) is EncoderVariant.PRECOMPUTED:
            raise UsageError("precomputed features are replayed by PrecomputedEncoder, not drawn by a toy encoder")
        if self.input_dim < self.feature_dim:
            raise UsageError(f"toy encoder needs input_dim >= feature_dim, got {self.input_dim} < {self.feature_dim}")

    def to_dict(self) -> Dict:
        return {
            'variant': EncoderVariant(self.variant).value,
            'input_dim': self.input_dim,
            'feature_dim': self.feature_dim,
            'seed': self.seed}

    @classmethod
    def from_dict(cls, data: Dict) -> 'ToyEncoderConfig':
        return cls(EncoderVariant(data.get('variant',
                                           'linear')),
                   int(data['input_dim']),
                   int(data['feature_dim']),
                   int(data['seed']))


class Encoder:
    """Frozen differentiable map x ∈ R^p → f(x) ∈ R^D."""

    input_dim: int
    feature_dim: int

    def encode(self, x) -> np.ndarray:
        raise NotImplementedError

    def input_gradient(self, x, g) -> np.ndarray:
        """Return Jᵀg, J being the Jacobian of encode at x."""
        raise NotImplementedError

    def encode_batch(self, inputs) -> np.ndarray:
        return np.vstack([self.encode(x) for x in np.atleast_2d(inputs)])

    def _check_input(self, x) -> np.ndarray:
        vector = as_vector(x,
                           'input')
        if vector.size != self.input_dim:
            raise DimensionError(f"encoder expects inputs of length {self.input_dim}, got {vector.size}")
        return vector

    def _check_feature_gradient(self, g) -> np.ndarray:
        vector = as_vector(g,
                           'feature gradient')
        if vector.size != self.feature_dim:
            raise DimensionError(f"feature gradient must have length {self.feature_dim}, got {vector.size}")
        return vector


class ToyEncoder(Encoder):
    """
    Seeded stand-in for a frozen visual backbone.

    Weights are drawn once from numpy's default_rng(seed), in this order:
    linear -> A (D×p), b (D); tanh -> A1 (p×p), b1 (p), A2 (D×p), b2 (D);
    every draw is standard normal scaled by 1/sqrt(p).
    """

    def __init__(self, config: ToyEncoderConfig):
        self.config = config
        self.variant = EncoderVariant(config.variant)
        self.input_dim = config.input_dim
        self.feature_dim = config.feature_dim

        p, d = config.input_dim, config.feature_dim
        scale = 1.0 / np.sqrt(p)
        rng = np.random.default_rng(config.seed)
        if self.variant is EncoderVariant.LINEAR:
            self.a = rng.standard_normal((d, p)) * scale
            self.b = rng.standard_normal(d) * scale
        else:
            self.a1 = rng.standard_normal((p, p)) * scale
            self.b1 = rng.standard_normal(p) * scale
            self.a2 = rng.standard_normal((d, p)) * scale
            self.b2 = rng.standard_normal(d) * scale
        logger.debug(f"Built {self.variant.value} toy encoder p={p} D={d} seed={config.seed}")

    def encode(self, x) -> np.ndarray:
        x = self._check_input(x)
        if self.variant is EncoderVariant.LINEAR:
            return self.a @ x + self.b
        return self.a2 @ np.tanh(self.a1 @ x + self.b1) + self.b2

    def encode_batch(self, inputs) -> np.ndarray:
        x = np.atleast_2d(np.asarray(inputs,
                                     dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"encoder expects inputs of length {self.input_dim}, got {x.shape[1]}")
        if self.variant is EncoderVariant.LINEAR:
            return x @ self.a.T + self.b
        return np.tanh(x @ self.a1.T + self.b1) @ self.a2.T + self.b2

    def input_gradient(self, x, g) -> np.ndarray:
        x = self._check_input(x)
        g = self._check_feature_gradient(g)
        if self.variant is EncoderVariant.LINEAR:
            return self.a.T @ g
        hidden = np.tanh(self.a1 @ x + self.b1)
        return self.a1.T @ ((1.0 - hidden ** 2) * (self.a2.T @ g))

    def pseudo_inverse_input(self, features) -> np.ndarray:
        """Inputs x = A⁺(f − b) whose encodings reproduce the given features."""
        if self.variant is not EncoderVariant.LINEAR:
            raise UsageError("only the linear toy encoder can place samples by pseudo-inverse")
        f = np.atleast_2d(np.asarray(features,
                                     dtype=np.float64))
        return (f - self.b) @ np.linalg.pinv(self.a).T


class PrecomputedEncoder(Encoder):
    """
    Replays precomputed pre-projection features from an ingested dataset.

    The input is a mixing vector over the stored samples, so encode(e_i)
    replays sample i and the map stays differentiable for synthesis.
    """

    variant = EncoderVariant.PRECOMPUTED

    def __init__(self, features):
        self.features = np.asarray(features,
                                   dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DimensionError(f"precomputed features must be a non-empty matrix, got shape {self.features.shape}")
        self.input_dim = int(self.features.shape[0])
        self.feature_dim = int(self.features.shape[1])

    @classmethod
    def from_dataset(cls, dataset: LabeledEmbeddingSet) -> 'PrecomputedEncoder':
        return cls(dataset.features)

    @classmethod
    def from_file(cls, path: PathLike) -> 'PrecomputedEncoder':
        """Replay the features of a dataset file written by the generator or an ingest step."""
        encoder = cls.from_dataset(load_dataset(path))
        logger.debug(f"Loaded {encoder.input_dim} precomputed features of length {encoder.feature_dim} from {path}")
        return encoder

    def encode(self, x) -> np.ndarray:
        return self._check_input(x) @ self.features

    def input_gradient(self, x, g) -> np.ndarray:
        self._check_input(x)
        return self.features @ self._check_feature_gradient(g)

    def replay(self, index: int) -> np.ndarray:
        return self.features[index].copy()


class TextMode(str, Enum):
    MANIFEST = 'manifest-lookup'
    SYNTHETIC = 'synthetic-prototype'


class TextEmbedder:
    """
    Unit-norm text embeddings for class names, optionally domain-conditioned.

    Manifest-lookup mode returns the stored vectors of the manifest's text
    table. Synthetic-prototype mode returns the prototype t_c, or
    normalize(t_c + δ·u_d) when a domain is given.
    """

    def __init__(self, manifest: Manifest, mode: Optional[TextMode] = None):
        self.manifest = manifest
        if mode is None:
            mode = TextMode.SYNTHETIC if manifest.synthetic else TextMode.MANIFEST
        self.mode = TextMode(mode)
        self.embedding_dim = manifest.embedding_dim
        if self.mode is TextMode.SYNTHETIC and not manifest.synthetic:
            raise UsageError("synthetic-prototype text mode needs a manifest written by the synthetic generator")

    def embed_text(self, class_name: str, domain: Optional[str] = None) -> np.ndarray:
        if class_name not in self.manifest.classes:
            raise UnknownLabel(f"Unknown class '{class_name}'")
        if domain is not None and domain not in self.manifest.domains:
            raise UnknownLabel(f"Unknown domain '{domain}'")

        if self.mode is TextMode.SYNTHETIC:
            synthetic = self.manifest.synthetic
            prototype = np.asarray(synthetic['prototypes'][class_name],
                                   dtype=np.float64)
            if domain is None:
                return l2_normalize(prototype)
            direction = np.asarray(synthetic['domain_directions'][domain],
                                   dtype=np.float64)
            return l2_normalize(prototype + synthetic['domain_offset'] * direction)

        if domain is None:
            stored = self.manifest.text_embeddings.get(class_name)
        else:
            stored = self.manifest.domain_text_embeddings.get(class_name,
                                                              {}).get(domain)
        if stored is None:
            label = class_name if domain is None else f"{class_name}/{domain}"
            raise UnknownLabel(f"No text embedding stored for '{label}'")
        vector = as_vector(stored,
                           'text embedding')
        if vector.size != self.embedding_dim:
            raise DimensionError(f"text embedding for '{class_name}' has length {vector.size}, expected {self.embedding_dim}")
        return l2_normalize(vector)

    def class_text_matrix(self) -> np.ndarray:
        """Domain-agnostic text embeddings of every manifest class, in order."""
        return np.vstack([self.embed_text(name) for name in self.manifest.classes])


def build_encoder(manifest: Manifest, variant: Optional[str] = None) -> ToyEncoder:
    """Rebuild the toy encoder recorded in a manifest, optionally switching variant."""
    if not manifest.encoder:
        raise UsageError("manifest does not describe a toy encoder; use the sampled canonical source")
    config = ToyEncoderConfig.from_dict(manifest.encoder)
    if variant is not None:
        config = ToyEncoderConfig(EncoderVariant(variant),
                                  config.input_dim,
                                  config.feature_dim,
                                  config.seed)
    return ToyEncoder(config)
