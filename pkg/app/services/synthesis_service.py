import logging
from dataclasses import replace

import numpy as np

from app.core.linalg import as_matrix, \
    as_vector
from app.models.types import SynthesisConfig, \
    SynthesisResult
from app.services.encoder_service import Encoder
from app.utils.error_handlers import DegenerateResidual, \
    DimensionError, \
    InvalidTarget

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-8
RESIDUAL_MIN_NORM = 1e-12


def derive_seed(base_seed: int, class_index: int, domain_index: int = -1) -> int:
    """Per-target initialization seed; domain_index -1 is the domain-agnostic target."""
    sequence = np.random.SeedSequence([base_seed, class_index, domain_index + 1])
    return int(sequence.generate_state(1,
                                       dtype=np.uint64)[0])


class CanonicalSynthesizer:
    """
    Gradient ascent on an encoder input to maximize cos(f(x)·W, t).

    Each iteration evaluates the analytic gradient once and runs a
    backtracking line search; a step is accepted only if the cosine strictly
    increases. After an accepted step the trial step grows by growth_factor.
    """

    def __init__(self, encoder: Encoder, projection, target):
        self.encoder = encoder
        self.projection = as_matrix(projection,
                                    'projection matrix')
        if self.projection.shape[0] != encoder.feature_dim:
            raise DimensionError(f"projection matrix has {self.projection.shape[0]} rows, encoder produces {encoder.feature_dim} features")
        self.target = as_vector(target,
                                'target')
        if self.target.size != self.projection.shape[1]:
            raise DimensionError(f"target has length {self.target.size}, embedding dimension is {self.projection.shape[1]}")
        if abs(np.linalg.norm(self.target) - 1.0) > UNIT_NORM_TOL:
            raise InvalidTarget(f"synthesis target must be unit-norm, got norm {np.linalg.norm(self.target):.6g}")

    def embed(self, x) -> np.ndarray:
        return self.encoder.encode(x) @ self.projection

    def objective(self, x) -> float:
        h = self.embed(x)
        norm = np.linalg.norm(h)
        if norm == 0.0:
            return 0.0
        return float(h @ self.target / norm)

    def objective_gradient(self, x) -> np.ndarray:
        """∂cos/∂x through W and the encoder's input gradient."""
        h = self.embed(x)
        norm = np.linalg.norm(h)
        if norm == 0.0:
            return np.zeros(self.encoder.input_dim)
        grad_h = self.target / norm - (h @ self.target) * h / norm ** 3
        return self.encoder.input_gradient(x,
                                           self.projection @ grad_h)

    def run(self, cfg: SynthesisConfig, x0=None) -> SynthesisResult:
        if x0 is None:
            x = np.random.default_rng(cfg.init_seed).standard_normal(self.encoder.input_dim)
        else:
            x = as_vector(x0,
                          'initial input').copy()

        value = self.objective(x)
        trajectory = [value]
        step = cfg.initial_step
        iterations = 0

        while iterations < cfg.max_iters and value < cfg.target_cosine and step >= cfg.min_step:
            iterations += 1
            grad = self.objective_gradient(x)
            if not np.any(grad):
                break
            accepted = False
            while step >= cfg.min_step:
                candidate = x + step * grad
                candidate_value = self.objective(candidate)
                if candidate_value > value:
                    x, value = candidate, candidate_value
                    trajectory.append(value)
                    step *= cfg.growth_factor
                    accepted = True
                    break
                step *= cfg.backtracking
            if not accepted:
                break

        # Recompute from the returned input so h_c = encode(x_c)·W exactly
        embedding = self.embed(x)
        logger.debug(f"Synthesis finished after {iterations} iterations, cosine {value:.6f}")
        return SynthesisResult(canonical_input=x,
                               canonical_embedding=embedding,
                               cosine_trajectory=trajectory,
                               iterations_used=iterations)


def synthesize_canonical(encoder: Encoder, projection, target, cfg: SynthesisConfig) -> SynthesisResult:
    """
    Synthesize a canonical input whose embedding aligns with a text target.

    Args:
        encoder: frozen differentiable encoder f(·;θ)
        projection: final projection matrix W (D×E)
        target: unit-norm text embedding
        cfg: synthesis hyperparameters and initialization seed

    Returns:
        SynthesisResult: canonical input, its embedding and the cosine trajectory

    Raises:
        InvalidTarget: if the target is not unit-norm
    """
    return CanonicalSynthesizer(encoder,
                                projection,
                                target).run(cfg)


def synthesize_for(encoder: Encoder, projection, target, cfg: SynthesisConfig, class_index: int,
                   domain_index: int = -1) -> SynthesisResult:
    seeded = replace(cfg,
                     init_seed=derive_seed(cfg.init_seed,
                                           class_index,
                                           domain_index))
    return synthesize_canonical(encoder,
                                projection,
                                target,
                                seeded)


def residual_embedding(h_global, h_domain) -> np.ndarray:
    """Domain-specific component of a class: normalize(h_domain − h_global)."""
    global_vector = as_vector(h_global,
                              'global embedding')
    domain_vector = as_vector(h_domain,
                              'domain embedding')
    if global_vector.shape != domain_vector.shape:
        raise DimensionError(f"residual of embeddings with lengths {global_vector.size} and {domain_vector.size}")
    difference = domain_vector - global_vector
    norm = np.linalg.norm(difference)
    if norm < RESIDUAL_MIN_NORM:
        raise DegenerateResidual("domain canonical embedding coincides with the global one; no residual signal")
    return difference / norm
