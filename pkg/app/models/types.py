from dataclasses import dataclass, \
    field
from enum import Enum
from typing import Dict, \
    List, \
    Optional, \
    Tuple

import numpy as np

from app.utils.error_handlers import UnknownLabel, \
    UsageError


class UnlearnKind(str, Enum):
    GLOBAL = 'global'
    SELECTIVE = 'selective'
    COMPLETE = 'complete'
    TEXT_ONLY = 'text-only'


@dataclass(frozen=True)
class UnlearnMode:
    """
    Which unlearning paradigm to apply.

    Selective and complete modes name the domains they target; global and
    text-only modes act on every domain.
    """
    kind: UnlearnKind
    domains: Tuple[str, ...] = ()

    @classmethod
    def global_mode(cls) -> 'UnlearnMode':
        return cls(UnlearnKind.GLOBAL)

    @classmethod
    def selective(cls, domains) -> 'UnlearnMode':
        return cls(UnlearnKind.SELECTIVE,
                   tuple(domains))

    @classmethod
    def complete(cls, domains) -> 'UnlearnMode':
        return cls(UnlearnKind.COMPLETE,
                   tuple(domains))

    @classmethod
    def text_only(cls) -> 'UnlearnMode':
        return cls(UnlearnKind.TEXT_ONLY)

    @property
    def is_domain_specific(self) -> bool:
        return self.kind in (UnlearnKind.SELECTIVE, UnlearnKind.COMPLETE)

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind.value,
            'domains': list(self.domains)}

    @classmethod
    def from_dict(cls, data: Dict) -> 'UnlearnMode':
        return cls(UnlearnKind(data['kind']),
                   tuple(data.get('domains',
                                  [])))

    def label(self) -> str:
        if self.is_domain_specific:
            return f"{self.kind.value}:{'+'.join(self.domains)}"
        return self.kind.value


@dataclass
class Manifest:
    """Class/domain vocabulary, forget split, dimensions, seeds and text table."""
    classes: List[str]
    domains: List[str]
    forget_classes: List[str]
    unlearn_domains: List[str]
    mode: UnlearnMode
    embedding_dim: int
    feature_dim: int
    seeds: Dict[str, int] = field(default_factory=dict)
    encoder: Dict = field(default_factory=dict)
    text_embeddings: Dict[str, List[float]] = field(default_factory=dict)
    domain_text_embeddings: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    synthetic: Optional[Dict] = None

    @property
    def retain_classes(self) -> List[str]:
        forget = set(self.forget_classes)
        return [name for name in self.classes if name not in forget]

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise UnknownLabel(f"Unknown class '{name}'",
                               payload={
                                   'known_classes': list(self.classes)})

    def domain_index(self, name: str) -> int:
        try:
            return self.domains.index(name)
        except ValueError:
            raise UnknownLabel(f"Unknown domain '{name}'",
                               payload={
                                   'known_domains': list(self.domains)})


@dataclass
class LabeledEmbeddingSet:
    """Pre-projection features with per-sample domain and class indices."""
    features: np.ndarray
    domain_labels: np.ndarray
    class_labels: np.ndarray

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def select(self, mask: np.ndarray) -> 'LabeledEmbeddingSet':
        return LabeledEmbeddingSet(self.features[mask],
                                   self.domain_labels[mask],
                                   self.class_labels[mask])


@dataclass(frozen=True)
class SyntheticGenConfig:
    classes: List[str]
    domains: List[str]
    samples_per_cell: int = 50
    embedding_dim: int = 32
    feature_dim: int = 64
    input_dim: int = 128
    prototype_max_cosine: float = 0.3
    domain_offset: float = 0.4
    sample_noise: float = 0.05
    feature_noise: float = 0.1
    max_draws: int = 100000
    seed: int = 42
    encoder_seed: int = 1
    synthesis_seed: int = 7
    forget_classes: Tuple[str, ...] = ()
    unlearn_domains: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.samples_per_cell < 1:
            raise UsageError("samples per (class, domain) must be at least 1")
        if not 0 < self.prototype_max_cosine < 1:
            raise UsageError("prototype max cosine must lie in (0, 1)")
        if self.domain_offset < 0 or self.sample_noise < 0 or self.feature_noise < 0:
            raise UsageError("generator scales must be non-negative")
        if self.embedding_dim <= len(self.classes):
            raise UsageError("embedding dimension must exceed the class count")
        if self.input_dim < self.feature_dim:
            raise UsageError("input dimension must be at least the feature dimension")


@dataclass(frozen=True)
class SynthesisConfig:
    max_iters: int = 500
    initial_step: float = 0.1
    backtracking: float = 0.5
    growth_factor: float = 2.0
    min_step: float = 1e-6
    init_seed: int = 0
    target_cosine: float = 0.999

    def __post_init__(self):
        if self.max_iters < 1:
            raise UsageError("max_iters must be at least 1")
        if not 0 < self.backtracking < 1:
            raise UsageError("backtracking factor must lie in (0, 1)")
        if self.growth_factor < 1:
            raise UsageError("growth factor must be at least 1")
        if not 0 < self.min_step < self.initial_step:
            raise UsageError("min_step must be positive and below initial_step")

    @classmethod
    def from_config(cls, config, **overrides) -> 'SynthesisConfig':
        values = {
            'max_iters': config.SYNTH_MAX_ITERS,
            'initial_step': config.SYNTH_INITIAL_STEP,
            'backtracking': config.SYNTH_BACKTRACKING,
            'growth_factor': config.SYNTH_GROWTH,
            'min_step': config.SYNTH_MIN_STEP,
            'target_cosine': config.SYNTH_TARGET_COSINE}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass
class SynthesisResult:
    canonical_input: np.ndarray
    canonical_embedding: np.ndarray
    cosine_trajectory: List[float]
    iterations_used: int

    @property
    def final_cosine(self) -> float:
        return self.cosine_trajectory[-1]
