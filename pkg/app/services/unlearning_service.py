import logging
from dataclasses import dataclass, \
    field
from enum import Enum
from typing import Dict, \
    Iterable, \
    List, \
    Mapping, \
    Optional, \
    Sequence, \
    Tuple

import numpy as np

from app.core.linalg import DEFAULT_RANK_REL_TOL, \
    NullspaceProjector, \
    as_matrix, \
    l2_normalize, \
    nullspace_projector
from app.models.types import LabeledEmbeddingSet, \
    Manifest, \
    SynthesisConfig, \
    UnlearnKind, \
    UnlearnMode
from app.services.encoder_service import Encoder, \
    TextEmbedder
from app.services.synthesis_service import residual_embedding, \
    synthesize_for
from app.utils.error_handlers import DataError, \
    DimensionError, \
    ForgetSubspaceFull, \
    UnknownLabel, \
    UsageError, \
    ZeroVector

logger = logging.getLogger(__name__)


class RowKind(str, Enum):
    TEXT = 'text'
    VISUAL = 'visual'
    RESIDUAL = 'residual'


class CanonicalSource(str, Enum):
    SYNTHESIZED = 'synthesized'
    SAMPLED = 'sampled'


@dataclass(frozen=True)
class ForgetRow:
    kind: RowKind
    class_name: str
    domain: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            'kind': self.kind.value,
            'class': self.class_name,
            'domain': self.domain}


@dataclass
class ForgetMatrix:
    """Stacked forget rows and the domains whose projection they rewrite."""
    rows: np.ndarray
    provenance: List[ForgetRow]
    domains: Tuple[str, ...]

    @property
    def row_count(self) -> int:
        return int(self.rows.shape[0])

    def rows_of(self, kind: RowKind) -> np.ndarray:
        mask = [row.kind is kind for row in self.provenance]
        return self.rows[np.asarray(mask, dtype=bool)]


class SynthesizedCanonicals:
    """Data-free canonical embeddings h_c and h_c^d via gradient-ascent synthesis."""

    source = CanonicalSource.SYNTHESIZED

    def __init__(self, encoder: Encoder, projection, text: TextEmbedder, cfg: SynthesisConfig,
                 pooled_global: bool = False):
        self.encoder = encoder
        self.projection = as_matrix(projection,
                                    'projection matrix')
        self.text = text
        self.cfg = cfg
        self.pooled_global = pooled_global
        self.trajectories: Dict[Tuple[str, Optional[str]], List[float]] = {}
        self._cache: Dict[Tuple[str, Optional[str]], np.ndarray] = {}

    def canonical(self, class_name: str, domain: Optional[str] = None) -> np.ndarray:
        key = (class_name, domain)
        if key in self._cache:
            return self._cache[key]
        manifest = self.text.manifest
        if domain is None and self.pooled_global:
            embedding = l2_normalize(np.mean([l2_normalize(self.canonical(class_name,
                                                                          name))
                                              for name in manifest.domains],
                                             axis=0))
        else:
            target = self.text.embed_text(class_name,
                                          domain)
            domain_index = -1 if domain is None else manifest.domain_index(domain)
            result = synthesize_for(self.encoder,
                                    self.projection,
                                    target,
                                    self.cfg,
                                    manifest.class_index(class_name),
                                    domain_index)
            self.trajectories[key] = result.cosine_trajectory
            logger.info(f"Canonical embedding for {class_name}/{domain or '*'}: cosine {result.final_cosine:.6f} "
                        f"after {result.iterations_used} iterations")
            embedding = result.canonical_embedding
        self._cache[key] = embedding
        return embedding


class SampledCanonicals:
    """Canonical embeddings taken from ingested samples (no longer data-free)."""

    source = CanonicalSource.SAMPLED

    def __init__(self, dataset: LabeledEmbeddingSet, projection, manifest: Manifest):
        self.dataset = dataset
        self.projection = as_matrix(projection,
                                    'projection matrix')
        self.manifest = manifest

    def canonical(self, class_name: str, domain: Optional[str] = None) -> np.ndarray:
        mask = self.dataset.class_labels == self.manifest.class_index(class_name)
        if domain is not None:
            mask &= self.dataset.domain_labels == self.manifest.domain_index(domain)
        if not np.any(mask):
            raise DataError(f"No ingested samples for {class_name}/{domain or '*'}")
        embeddings = np.asarray(self.dataset.features[mask],
                                dtype=np.float64) @ self.projection
        norms = np.linalg.norm(embeddings,
                               axis=1,
                               keepdims=True)
        return l2_normalize(np.mean(embeddings / np.where(norms > 0,
                                                          norms,
                                                          1.0),
                                    axis=0))


def required_rows(mode: UnlearnMode, k: int, targeted: int = 1, pooled: bool = False) -> int:
    per_class = {
        UnlearnKind.GLOBAL: 2,
        UnlearnKind.SELECTIVE: 2,
        UnlearnKind.COMPLETE: 3,
        UnlearnKind.TEXT_ONLY: 1}[mode.kind]
    if pooled and mode.is_domain_specific:
        return k + (per_class - 1) * k * targeted
    return per_class * k


def _validate_mode(mode: UnlearnMode, manifest: Manifest) -> None:
    if mode.is_domain_specific:
        if not mode.domains:
            raise UsageError(f"{mode.kind.value} unlearning needs at least one domain")
        for name in mode.domains:
            manifest.domain_index(name)


def build_forget_matrix(mode: UnlearnMode, forget_classes: Sequence[str], text: TextEmbedder, canonicals,
                        pooled_projector: bool = False) -> List[ForgetMatrix]:
    """
    Build the augmented forget matrices for an unlearning mode.

    Global stacks [t_c…; h_c…]; selective stacks [t_c…; h_c^d…] per targeted
    domain; complete adds the residual rows r_c^d; text-only keeps [t_c…].

    Args:
        mode: unlearning paradigm and targeted domains
        forget_classes: class names to forget
        text: text embedder over the active manifest
        canonicals: provider of canonical embeddings (synthesized or sampled)
        pooled_projector: one matrix shared by all targeted domains

    Returns:
        List[ForgetMatrix]: one matrix per projector to build

    Raises:
        ForgetSubspaceFull: if a matrix would need at least E rows
        UnknownLabel: if a class or domain is not in the manifest
    """
    manifest = text.manifest
    if not forget_classes:
        raise UsageError("at least one forget class is required")
    _validate_mode(mode,
                   manifest)
    for name in forget_classes:
        manifest.class_index(name)

    k = len(forget_classes)
    rows_needed = required_rows(mode,
                                k,
                                len(mode.domains),
                                pooled_projector)
    if rows_needed >= text.embedding_dim:
        raise ForgetSubspaceFull(f"{mode.label()} unlearning of {k} classes needs {rows_needed} rows "
                                 f"but the embedding dimension is {text.embedding_dim}",
                                 payload={
                                     'rows': rows_needed,
                                     'embedding_dim': text.embedding_dim})

    text_rows = [(text.embed_text(name), ForgetRow(RowKind.TEXT,
                                                   name)) for name in forget_classes]

    if mode.kind is UnlearnKind.TEXT_ONLY:
        return [_stack(text_rows,
                       tuple(manifest.domains))]
    if mode.kind is UnlearnKind.GLOBAL:
        visual_rows = [(canonicals.canonical(name), ForgetRow(RowKind.VISUAL,
                                                              name)) for name in forget_classes]
        return [_stack(text_rows + visual_rows,
                       tuple(manifest.domains))]

    complete = mode.kind is UnlearnKind.COMPLETE

    def domain_rows(domain: str):
        visual = []
        residual = []
        for name in forget_classes:
            h_domain = canonicals.canonical(name,
                                            domain)
            visual.append((h_domain, ForgetRow(RowKind.VISUAL,
                                               name,
                                               domain)))
            if complete:
                # Residual between unit canonicals
                residual.append((residual_embedding(l2_normalize(canonicals.canonical(name)),
                                                    l2_normalize(h_domain)),
                                 ForgetRow(RowKind.RESIDUAL,
                                           name,
                                           domain)))
        return visual, residual

    if pooled_projector:
        visual_all, residual_all = [], []
        for domain in mode.domains:
            visual, residual = domain_rows(domain)
            visual_all += visual
            residual_all += residual
        return [_stack(text_rows + visual_all + residual_all,
                       tuple(mode.domains))]

    matrices = []
    for domain in mode.domains:
        visual, residual = domain_rows(domain)
        matrices.append(_stack(text_rows + visual + residual,
                               (domain,)))
    return matrices


def _stack(rows, domains: Tuple[str, ...]) -> ForgetMatrix:
    return ForgetMatrix(rows=np.vstack([vector for vector, _ in rows]),
                        provenance=[row for _, row in rows],
                        domains=domains)


def compute_projector(matrix: ForgetMatrix, rel_tol: float = DEFAULT_RANK_REL_TOL) -> NullspaceProjector:
    """Normalize the forget rows (span unchanged) and build the nullspace projector."""
    rows = as_matrix(matrix.rows,
                     'forget matrix')
    norms = np.linalg.norm(rows,
                           axis=1,
                           keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVector("forget matrix contains an all-zero row")
    return nullspace_projector(rows / norms,
                               rel_tol)


@dataclass(frozen=True)
class ProjectionBank:
    """
    Per-domain effective projection: W for untouched domains, W·P for targeted ones.

    Frozen once built; derive variants with dataclasses.replace.
    """
    base: np.ndarray
    mode: UnlearnMode
    domains: List[str]
    entries: Dict[str, np.ndarray]
    rank_removed: Dict[str, int] = field(default_factory=dict)
    projectors: Dict[str, np.ndarray] = field(default_factory=dict)
    provenance: Dict[str, List[Dict]] = field(default_factory=dict)
    forget_classes: List[str] = field(default_factory=list)
    settings: Dict = field(default_factory=dict)

    def projection_for(self, domain: str) -> np.ndarray:
        try:
            return self.entries[domain]
        except KeyError:
            raise UnknownLabel(f"Unknown domain '{domain}'",
                               payload={
                                   'known_domains': list(self.domains)})

    def is_targeted(self, domain: str) -> bool:
        return self.projection_for(domain) is not self.base

    @property
    def targeted_domains(self) -> List[str]:
        return [name for name in self.domains if self.is_targeted(name)]

    def embed(self, features, domain: str) -> np.ndarray:
        return np.asarray(features,
                          dtype=np.float64) @ self.projection_for(domain)

    def describe(self) -> Dict:
        return {
            'mode': self.mode.to_dict(),
            'domains': list(self.domains),
            'targeted_domains': self.targeted_domains,
            'forget_classes': list(self.forget_classes),
            'rank_removed': {name: self.rank_removed[name] for name in self.domains if name in self.rank_removed},
            'feature_dim': int(self.base.shape[0]),
            'embedding_dim': int(self.base.shape[1])}

    @classmethod
    def identity(cls, base, domains: Iterable[str], mode: Optional[UnlearnMode] = None) -> 'ProjectionBank':
        """A bank with no unlearning applied: every domain maps to W."""
        w = as_matrix(base,
                      'projection matrix')
        names = list(domains)
        return cls(base=w,
                   mode=mode or UnlearnMode.global_mode(),
                   domains=names,
                   entries={name: w for name in names})


def apply_unlearning(projection, mode: UnlearnMode, projectors: Mapping[str, NullspaceProjector],
                     domains: Sequence[str], provenance: Optional[Mapping[str, List[Dict]]] = None,
                     forget_classes: Sequence[str] = (), settings: Optional[Mapping] = None) -> ProjectionBank:
    """
    Install W′ = W·P for every domain that has a projector; all others keep W.

    Raises:
        DimensionError: if a projector is not E×E for W's embedding dimension
        UnknownLabel: if a projector names a domain outside the manifest
    """
    w = as_matrix(projection,
                  'projection matrix')
    names = list(domains)
    entries: Dict[str, np.ndarray] = {name: w for name in names}
    rank_removed: Dict[str, int] = {}
    projector_matrices: Dict[str, np.ndarray] = {}
    updated: Dict[int, np.ndarray] = {}

    for domain, projector in projectors.items():
        if domain not in entries:
            raise UnknownLabel(f"Unknown domain '{domain}'")
        if projector.p.shape != (w.shape[1], w.shape[1]):
            raise DimensionError(f"projector of shape {projector.p.shape} does not match embedding dimension {w.shape[1]}")
        # Domains sharing a projector share the updated matrix
        key = id(projector)
        if key not in updated:
            updated[key] = w @ projector.p
        entries[domain] = updated[key]
        rank_removed[domain] = projector.rank_removed
        projector_matrices[domain] = projector.p

    if mode.kind in (UnlearnKind.GLOBAL, UnlearnKind.TEXT_ONLY):
        missing = [name for name in names if name not in projectors]
        if missing:
            raise DataError(f"{mode.kind.value} unlearning must cover every domain; missing {missing}")

    logger.info(f"Applied {mode.label()} unlearning to domains {sorted(projectors)}")
    return ProjectionBank(base=w,
                          mode=mode,
                          domains=names,
                          entries=entries,
                          rank_removed=rank_removed,
                          projectors=projector_matrices,
                          provenance=dict(provenance or {}),
                          forget_classes=list(forget_classes),
                          settings=dict(settings or {}))


@dataclass
class UnlearningOutcome:
    bank: ProjectionBank
    matrices: List[ForgetMatrix]
    projectors: List[NullspaceProjector]


def run_unlearning(manifest: Manifest, projection, mode: UnlearnMode, text: TextEmbedder, canonicals,
                   forget_classes: Optional[Sequence[str]] = None, rel_tol: float = DEFAULT_RANK_REL_TOL,
                   pooled_projector: bool = False) -> UnlearningOutcome:
    """Build forget matrices, projectors and the projection bank in one pass."""
    classes = list(forget_classes if forget_classes is not None else manifest.forget_classes)
    matrices = build_forget_matrix(mode,
                                   classes,
                                   text,
                                   canonicals,
                                   pooled_projector)
    projectors = [compute_projector(matrix,
                                    rel_tol) for matrix in matrices]
    by_domain: Dict[str, NullspaceProjector] = {}
    provenance: Dict[str, List[Dict]] = {}
    for matrix, projector in zip(matrices,
                                 projectors):
        for domain in matrix.domains:
            by_domain[domain] = projector
            provenance[domain] = [row.to_dict() for row in matrix.provenance]
        logger.info(f"Forget matrix for {list(matrix.domains)}: {matrix.row_count} rows, rank removed {projector.rank_removed}")

    bank = apply_unlearning(projection,
                            mode,
                            by_domain,
                            manifest.domains,
                            provenance=provenance,
                            forget_classes=classes)
    return UnlearningOutcome(bank,
                             matrices,
                             projectors)
