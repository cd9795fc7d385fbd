"""
Damping matrix fields G(u) and sample-based certification of uniform positivity.
Positivity is read through the symmetric part of G, so nonsymmetric fields are allowed.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Any, Optional, Sequence, Tuple
import logging

import numpy as np

from src.exceptions import DomainError, ConfigurationError, PositivityCertificationError
from src.potential import PotentialSpec, inflated_box, quasi_random_cloud

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TOL_CERT = 1e-8
DAMPING_KINDS = ('identity', 'scalar_function', 'constant_matrix', 'relaxation')


@dataclass(frozen=True, eq=False)
class DampingSpec:
    """
    Damping field. matrix(U) maps (..., m) to (..., m, m).

    kind is one of identity, scalar_function, constant_matrix, relaxation.
    """
    kind: str
    dimension: int
    matrix: Callable[[np.ndarray], np.ndarray]
    tau_relaxation: Optional[float] = None
    description: str = ''
    parameters: Dict[str, Any] = field(default_factory=dict)

    def G(self, U: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix(np.asarray(U, dtype=float)), dtype=float)

    def smallest_eigenvalue(self, U: np.ndarray) -> np.ndarray:
        """Smallest eigenvalue of the symmetric part of G at each point"""
        G = self.G(U)
        sym = 0.5 * (G + np.swapaxes(G, -1, -2))
        if self.dimension == 1:
            return sym[..., 0, 0]
        return np.linalg.eigvalsh(sym)[..., 0]


@dataclass
class PositivityCertificate:
    """Sampled lower bound alpha of sym(G) over a box"""
    alpha: float
    box_lo: np.ndarray
    box_hi: np.ndarray
    sample_count: int
    worst_point: np.ndarray

    @property
    def accepted(self) -> bool:
        return self.alpha > 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'alpha': self.alpha,
            'box_lo': self.box_lo.tolist(),
            'box_hi': self.box_hi.tolist(),
            'sample_count': self.sample_count,
            'worst_point': self.worst_point.tolist(),
            'accepted': self.accepted,
        }


def identity_damping(dimension: int) -> DampingSpec:
    eye = np.eye(dimension)

    def matrix(U):
        return np.broadcast_to(eye, U.shape[:-1] + (dimension, dimension)).copy()

    return DampingSpec(kind='identity', dimension=dimension, matrix=matrix, description='G = I')


def scalar_function_damping(g: Callable[[np.ndarray], np.ndarray], dimension: int,
                            description: str = 'G = g(u) I') -> DampingSpec:
    """G(u) = g(u) I where g maps (..., m) to (...)"""
    eye = np.eye(dimension)

    def matrix(U):
        return np.asarray(g(U), dtype=float)[..., None, None] * eye

    return DampingSpec(kind='scalar_function', dimension=dimension, matrix=matrix, description=description)


def constant_matrix_damping(M: Sequence[Sequence[float]]) -> DampingSpec:
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"Damping matrix must be square, got shape {M.shape}")
    dimension = M.shape[0]

    def matrix(U):
        return np.broadcast_to(M, U.shape[:-1] + (dimension, dimension)).copy()

    return DampingSpec(kind='constant_matrix', dimension=dimension, matrix=matrix,
                       description='G = M', parameters={'matrix': M.tolist()})


def relaxation_preset(potential: PotentialSpec, tau: float) -> DampingSpec:
    """
    Cattaneo-Maxwell relaxation damping G(u) = I - tau f'(u) = I + tau Hess F(u).

    Args:
        potential: the potential whose reaction field is relaxed
        tau: relaxation time, > 0

    Returns:
        DampingSpec of kind relaxation (positivity is certified separately)
    """
    if not tau > 0.0:
        raise ConfigurationError(f"Relaxation time must be positive, got {tau}")
    m = potential.dimension
    eye = np.eye(m)

    def matrix(U):
        return eye + tau * potential.hess(U)

    logger.info(f"Relaxation damping built for {potential.name} with tau={tau}")
    return DampingSpec(kind='relaxation', dimension=m, matrix=matrix, tau_relaxation=float(tau),
                       description=f'G = I + {tau} Hess F', parameters={'tau_relaxation': float(tau)})


def eval_damping(spec: DampingSpec, u) -> np.ndarray:
    """G at a single point"""
    point = np.atleast_1d(np.asarray(u, dtype=float))
    if point.shape != (spec.dimension,):
        raise DomainError(f"Expected a point in R^{spec.dimension}, got shape {point.shape}")
    if not np.all(np.isfinite(point)):
        raise DomainError(f"Non-finite input {point}")
    return spec.G(point)


def default_certify_box(potential: PotentialSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Bounding box of the zeros inflated by 50%"""
    return inflated_box(potential.zeros, inflation=0.5)


def certify_positivity(spec: DampingSpec,
                       region: Tuple[Sequence[float], Sequence[float]],
                       n_samples: int = 4096,
                       extra_points: Optional[np.ndarray] = None) -> PositivityCertificate:
    """
    Sample the smallest eigenvalue of sym(G) over a box.

    A negative sample falsifies positivity for sure; a positive minimum is only a
    heuristic certificate between the samples.

    Args:
        spec: damping field
        region: (lo, hi) box corners
        n_samples: Halton points in the box (the box centre and corners are always added)
        extra_points: optional additional points, e.g. the wells

    Returns:
        PositivityCertificate with alpha > 0

    Raises:
        PositivityCertificationError: alpha <= 0, carrying the certificate and worst point
    """
    lo = np.atleast_1d(np.asarray(region[0], dtype=float))
    hi = np.atleast_1d(np.asarray(region[1], dtype=float))
    if lo.shape != (spec.dimension,) or hi.shape != (spec.dimension,) or np.any(hi <= lo):
        raise ConfigurationError(f"Invalid certification box {lo.tolist()} .. {hi.tolist()}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ConfigurationError("Certification box must be finite")

    corners = np.array(np.meshgrid(*zip(lo, hi), indexing='ij')).reshape(spec.dimension, -1).T
    points = [quasi_random_cloud(lo, hi, n_samples), corners, (0.5 * (lo + hi))[None, :]]
    if extra_points is not None:
        points.append(np.asarray(extra_points, dtype=float).reshape(-1, spec.dimension))
    cloud = np.vstack(points)

    eigs = spec.smallest_eigenvalue(cloud)
    worst = int(np.argmin(eigs))
    certificate = PositivityCertificate(
        alpha=float(eigs[worst]),
        box_lo=lo,
        box_hi=hi,
        sample_count=int(len(cloud)),
        worst_point=cloud[worst],
    )
    if not certificate.accepted:
        logger.error(f"Damping {spec.kind} not positive: alpha={certificate.alpha:.4g} "
                     f"at {certificate.worst_point.tolist()}")
        raise PositivityCertificationError(
            f"Damping {spec.kind} fails positivity: smallest eigenvalue {certificate.alpha:.4g} "
            f"at {certificate.worst_point.tolist()}", certificate)
    logger.info(f"Damping {spec.kind} certified: alpha={certificate.alpha:.6g} on {len(cloud)} samples")
    return certificate


def build_damping(kind: str, potential: PotentialSpec, tau_relaxation: Optional[float] = None,
                  matrix: Optional[Sequence[Sequence[float]]] = None,
                  coefficient: Optional[float] = None) -> DampingSpec:
    """Factory used by the config layer"""
    m = potential.dimension
    if kind == 'identity':
        return identity_damping(m)
    if kind == 'relaxation':
        if tau_relaxation is None:
            raise ConfigurationError("damping.tau_relaxation is required for relaxation damping")
        return relaxation_preset(potential, tau_relaxation)
    if kind == 'constant_matrix':
        if matrix is None:
            raise ConfigurationError("damping.matrix is required for constant_matrix damping")
        return constant_matrix_damping(matrix)
    if kind == 'scalar_function':
        # config-level scalar damping: g(u) = c (1 + |u|^2), a smooth strictly positive choice
        c = 1.0 if coefficient is None else float(coefficient)
        return scalar_function_damping(lambda U: c * (1.0 + np.sum(U * U, axis=-1)), m,
                                       description=f'G = {c} (1 + |u|^2) I')
    raise ConfigurationError(f"Unknown damping kind: {kind} (expected one of {DAMPING_KINDS})")
