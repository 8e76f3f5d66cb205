import logging
from dataclasses import dataclass, \
    field
from typing import Callable, \
    Dict, \
    List, \
    Sequence

import numpy as np

from app.core.linalg import l2_normalize
from app.services.encoder_service import Encoder, \
    EncoderVariant, \
    ToyEncoder, \
    ToyEncoderConfig
from app.services.synthesis_service import CanonicalSynthesizer
from app.services.synthetic_data_service import make_projection
from app.utils.error_handlers import GradientCheckFailed, \
    UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradcheckConfig:
    variants: Sequence[str] = ('linear', 'tanh')
    probes: int = 50
    seed: int = 0
    step: float = 1e-5
    tolerance: float = 1e-4
    input_dim: int = 128
    feature_dim: int = 64
    embedding_dim: int = 32

    def __post_init__(self):
        if self.probes < 1:
            raise UsageError("at least one probe is required")
        if self.step <= 0 or self.tolerance <= 0:
            raise UsageError("finite-difference step and tolerance must be positive")


@dataclass
class GradientAudit:
    tolerance: float
    errors: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(max(values) for values in self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def summary_lines(self) -> List[str]:
        return [f"{name}: {len(values)} probes, max relative error {max(values):.3e}"
                for name, values in self.errors.items()]


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic,
                   dtype=np.float64)
    n = np.asarray(numeric,
                   dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def central_difference(fn: Callable[[np.ndarray], float], x, step: float) -> np.ndarray:
    x = np.asarray(x,
                   dtype=np.float64)
    gradient = np.empty_like(x)
    for i in range(x.size):
        offset = np.zeros_like(x)
        offset[i] = step
        gradient[i] = (fn(x + offset) - fn(x - offset)) / (2.0 * step)
    return gradient


def audit_encoder(encoder: Encoder, rng: np.random.Generator, probes: int, step: float) -> List[float]:
    """Compare input_gradient(x, g) with the finite-difference gradient of g·encode(x)."""
    errors = []
    for _ in range(probes):
        x = rng.standard_normal(encoder.input_dim)
        g = rng.standard_normal(encoder.feature_dim)
        numeric = central_difference(lambda point: float(g @ encoder.encode(point)),
                                     x,
                                     step)
        errors.append(relative_error(encoder.input_gradient(x,
                                                            g),
                                     numeric))
    return errors


def audit_objective(synthesizer: CanonicalSynthesizer, rng: np.random.Generator, probes: int,
                    step: float) -> List[float]:
    """Compare the synthesis objective gradient with central differences of the cosine."""
    errors = []
    for _ in range(probes):
        x = rng.standard_normal(synthesizer.encoder.input_dim)
        numeric = central_difference(synthesizer.objective,
                                     x,
                                     step)
        errors.append(relative_error(synthesizer.objective_gradient(x),
                                     numeric))
    return errors


def run_gradient_audit(cfg: GradcheckConfig, strict: bool = True) -> GradientAudit:
    """
    Audit encoder and synthesis-objective gradients for every requested variant.

    Raises:
        GradientCheckFailed: if strict and any probe exceeds the tolerance
    """
    audit = GradientAudit(cfg.tolerance)
    projection = make_projection(cfg.feature_dim,
                                 cfg.embedding_dim,
                                 cfg.seed)
    for variant in cfg.variants:
        encoder = ToyEncoder(ToyEncoderConfig(EncoderVariant(variant),
                                              cfg.input_dim,
                                              cfg.feature_dim,
                                              cfg.seed + 1))
        rng = np.random.default_rng([cfg.seed, len(audit.errors)])
        audit.errors[f"{variant}/encoder"] = audit_encoder(encoder,
                                                           rng,
                                                           cfg.probes,
                                                           cfg.step)
        target = l2_normalize(rng.standard_normal(cfg.embedding_dim))
        audit.errors[f"{variant}/objective"] = audit_objective(CanonicalSynthesizer(encoder,
                                                                                    projection,
                                                                                    target),
                                                               rng,
                                                               cfg.probes,
                                                               cfg.step)

    for line in audit.summary_lines():
        logger.info(line)
    if strict and not audit.passed:
        raise GradientCheckFailed(f"max relative gradient error {audit.max_error:.3e} exceeds {cfg.tolerance:.1e}",
                                  payload={
                                      'errors': {name: max(values) for name, values in audit.errors.items()}})
    return audit
