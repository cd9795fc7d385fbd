"""
Multi-well potentials F: R^m -> R and the reaction field f = -grad F.
Provides the built-in quartic, product-of-wells and custom scalar polynomial potentials,
finite-difference fallbacks, spectral bounds at the wells and a validation report.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Any, List, Optional, Sequence
import logging

import numpy as np
from numpy.polynomial import Polynomial
from scipy.stats import qmc

from src.exceptions import DomainError, InvalidPotentialError, HypothesisViolationError, ConfigurationError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TOL_ZERO = 1e-10
FD_STEP_FACTOR = np.finfo(float).eps ** (1.0 / 3.0)
# below this jump size the averaged discrete gradient falls back to grad F at the midpoint
DISCRETE_GRADIENT_FLOOR = 1e-6

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """
    Vectorized potential. Evaluators take arrays of shape (..., m).

    value(U) -> (...), gradient(U) -> (..., m), hessian(U) -> (..., m, m),
    discrete_gradient(U0, U1) -> (..., m) with (F(U1) - F(U0)) = dg . (U1 - U0).
    Missing evaluators fall back to centered finite differences.
    """
    name: str
    dimension: int
    value: ArrayFn
    zeros: np.ndarray
    gradient: Optional[ArrayFn] = None
    hessian: Optional[ArrayFn] = None
    discrete_gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    tol_zero: float = TOL_ZERO
    parameters: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        zeros = np.array(self.zeros, dtype=float).reshape(-1, self.dimension)
        if zeros.shape[0] < 2:
            raise ConfigurationError(f"Potential {self.name} needs at least two zeros, got {zeros.shape[0]}")
        zeros.setflags(write=False)
        object.__setattr__(self, 'zeros', zeros)

    @property
    def well_count(self) -> int:
        return self.zeros.shape[0]

    @property
    def analytic(self) -> Dict[str, bool]:
        return {
            'value': True,
            'gradient': self.gradient is not None,
            'hessian': self.hessian is not None,
            'discrete_gradient': self.discrete_gradient is not None,
        }

    def F(self, U: np.ndarray) -> np.ndarray:
        return np.asarray(self.value(np.asarray(U, dtype=float)), dtype=float)

    def grad(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(U), dtype=float)
        return _fd_gradient(self.value, U)

    def hess(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(U), dtype=float)
        if self.gradient is not None:
            return _fd_jacobian(self.gradient, U)
        return _fd_hessian(self.value, U)

    def dgrad(self, U0: np.ndarray, U1: np.ndarray) -> np.ndarray:
        """Discrete gradient between two states (exact energy differences)"""
        U0 = np.asarray(U0, dtype=float)
        U1 = np.asarray(U1, dtype=float)
        if self.discrete_gradient is not None:
            return np.asarray(self.discrete_gradient(U0, U1), dtype=float)
        return _midpoint_discrete_gradient(self, U0, U1)


@dataclass(frozen=True)
class SpectralBounds:
    """Extreme Hessian eigenvalues over the wells"""
    lam: float
    Lam: float
    per_well_min: tuple
    per_well_max: tuple


@dataclass
class PotentialValidationReport:
    """Outcome of validate(); flags are advisory, the caller decides fatality"""
    name: str
    passed: bool
    issues: List[str]
    sample_count: int
    min_sampled_value: float
    worst_point: np.ndarray
    max_zero_value: float
    max_zero_gradient: float
    bounds: Optional[SpectralBounds]
    coercivity_constant: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'passed': self.passed,
            'issues': list(self.issues),
            'sample_count': self.sample_count,
            'min_sampled_value': self.min_sampled_value,
            'worst_point': self.worst_point.tolist(),
            'max_zero_value': self.max_zero_value,
            'max_zero_gradient': self.max_zero_gradient,
            'lambda': None if self.bounds is None else self.bounds.lam,
            'Lambda': None if self.bounds is None else self.bounds.Lam,
            'coercivity_constant': self.coercivity_constant,
        }


# ---------------------------------------------------------------------------
# finite-difference fallbacks

def _fd_steps(U: np.ndarray) -> np.ndarray:
    return FD_STEP_FACTOR * (1.0 + np.linalg.norm(U, axis=-1, keepdims=True))


def _fd_gradient(value: ArrayFn, U: np.ndarray) -> np.ndarray:
    h = _fd_steps(U)
    m = U.shape[-1]
    out = np.empty_like(U)
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        out[..., k] = (value(U + h * e) - value(U - h * e)) / (2.0 * h[..., 0])
    return out


def _fd_jacobian(gradient: ArrayFn, U: np.ndarray) -> np.ndarray:
    h = _fd_steps(U)
    m = U.shape[-1]
    out = np.empty(U.shape + (m,))
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        out[..., :, k] = (gradient(U + h * e) - gradient(U - h * e)) / (2.0 * h)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _fd_hessian(value: ArrayFn, U: np.ndarray) -> np.ndarray:
    h = _fd_steps(U)[..., 0]
    m = U.shape[-1]
    out = np.empty(U.shape + (m,))
    f0 = value(U)
    eye = np.eye(m)
    for k in range(m):
        ek = eye[k] * h[..., None]
        out[..., k, k] = (value(U + ek) - 2.0 * f0 + value(U - ek)) / h ** 2
        for l in range(k + 1, m):
            el = eye[l] * h[..., None]
            mixed = (value(U + ek + el) - value(U + ek - el) - value(U - ek + el) + value(U - ek - el)) / (4.0 * h ** 2)
            out[..., k, l] = mixed
            out[..., l, k] = mixed
    return out


def _midpoint_discrete_gradient(spec: PotentialSpec, U0: np.ndarray, U1: np.ndarray) -> np.ndarray:
    """Gonzalez midpoint discrete gradient"""
    mid = 0.5 * (U0 + U1)
    dU = U1 - U0
    g = spec.grad(mid)
    sq = np.sum(dU * dU, axis=-1)
    defect = spec.F(U1) - spec.F(U0) - np.sum(g * dU, axis=-1)
    use = sq > (DISCRETE_GRADIENT_FLOOR * (1.0 + np.linalg.norm(mid, axis=-1))) ** 2
    coef = np.where(use, defect / np.where(use, sq, 1.0), 0.0)
    return g + coef[..., None] * dU


# ---------------------------------------------------------------------------
# built-in potentials

def quartic_potential() -> PotentialSpec:
    """Scalar double well F(u) = (u^2 - 1)^2 / 4 with zeros -1, +1"""

    def value(U):
        u = U[..., 0]
        return 0.25 * (u * u - 1.0) ** 2

    def gradient(U):
        u = U[..., 0]
        return (u ** 3 - u)[..., None]

    def hessian(U):
        u = U[..., 0]
        return (3.0 * u * u - 1.0)[..., None, None]

    def discrete_gradient(U0, U1):
        a = U0[..., 0]
        b = U1[..., 0]
        return (0.25 * (a + b) * (a * a + b * b - 2.0))[..., None]

    return PotentialSpec(
        name='quartic',
        dimension=1,
        value=value,
        zeros=np.array([[-1.0], [1.0]]),
        gradient=gradient,
        hessian=hessian,
        discrete_gradient=discrete_gradient,
    )


def product_wells_potential(zeros: Sequence[Sequence[float]]) -> PotentialSpec:
    """F(u) = prod_j |u - z_j|^2; Hessian at z_i is 2 prod_{k != i} |z_i - z_k|^2 times the identity"""
    Z = np.array(zeros, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ConfigurationError("product_wells needs a list of at least two points")
    K, m = Z.shape
    for i in range(K):
        for j in range(i + 1, K):
            if np.allclose(Z[i], Z[j]):
                raise ConfigurationError(f"product_wells zeros {i} and {j} coincide")

    def _factors(U):
        D = U[..., None, :] - Z
        return D, np.sum(D * D, axis=-1)

    def _prod_except(d, skip):
        keep = [k for k in range(K) if k not in skip]
        if not keep:
            return np.ones(d.shape[:-1])
        return np.prod(d[..., keep], axis=-1)

    def value(U):
        _, d = _factors(U)
        return np.prod(d, axis=-1)

    def gradient(U):
        D, d = _factors(U)
        out = np.zeros(U.shape)
        for j in range(K):
            out += 2.0 * D[..., j, :] * _prod_except(d, {j})[..., None]
        return out

    def hessian(U):
        D, d = _factors(U)
        eye = np.eye(m)
        out = np.zeros(U.shape + (m,))
        for j in range(K):
            out += 2.0 * eye * _prod_except(d, {j})[..., None, None]
            for l in range(K):
                if l == j:
                    continue
                outer = 4.0 * D[..., j, :, None] * D[..., l, None, :]
                out += outer * _prod_except(d, {j, l})[..., None, None]
        return out

    def discrete_gradient(U0, U1):
        # product rule: d(AB) = avg(A) dB + avg(B) dA, exact for each quadratic factor
        D0 = U0[..., None, :] - Z
        D1 = U1[..., None, :] - Z
        d0 = np.sum(D0 * D0, axis=-1)
        d1 = np.sum(D1 * D1, axis=-1)
        A0 = d0[..., 0]
        A1 = d1[..., 0]
        dA = U0 + U1 - 2.0 * Z[0]
        for j in range(1, K):
            B0 = d0[..., j]
            B1 = d1[..., j]
            dB = U0 + U1 - 2.0 * Z[j]
            dA = 0.5 * (A0 + A1)[..., None] * dB + 0.5 * (B0 + B1)[..., None] * dA
            A0 = A0 * B0
            A1 = A1 * B1
        return dA

    return PotentialSpec(
        name='product_wells',
        dimension=m,
        value=value,
        zeros=Z,
        gradient=gradient,
        hessian=hessian,
        discrete_gradient=discrete_gradient,
        parameters={'zeros': Z.tolist()},
    )


def custom_polynomial_potential(coefficients: Sequence[float], zeros: Sequence[float]) -> PotentialSpec:
    """
    Scalar polynomial F(u) = sum_k c_k u^k with user-listed zeros.

    Args:
        coefficients: ascending coefficients c_0..c_d
        zeros: the claimed wells (checked by validate, not here)
    """
    poly = Polynomial(np.asarray(coefficients, dtype=float))
    d1 = poly.deriv(1)
    d2 = poly.deriv(2)
    coef = poly.coef

    def value(U):
        return poly(U[..., 0])

    def gradient(U):
        return d1(U[..., 0])[..., None]

    def hessian(U):
        return d2(U[..., 0])[..., None, None]

    def discrete_gradient(U0, U1):
        a = U0[..., 0]
        b = U1[..., 0]
        out = np.zeros(np.broadcast(a, b).shape)
        for k in range(1, len(coef)):
            acc = np.zeros_like(out)
            for i in range(k):
                acc = acc + b ** i * a ** (k - 1 - i)
            out = out + coef[k] * acc
        return out[..., None]

    return PotentialSpec(
        name='custom_polynomial',
        dimension=1,
        value=value,
        zeros=np.asarray(zeros, dtype=float).reshape(-1, 1),
        gradient=gradient,
        hessian=hessian,
        discrete_gradient=discrete_gradient,
        parameters={'coefficients': [float(c) for c in coef]},
    )


POTENTIAL_KINDS = ('quartic', 'product_wells', 'custom_polynomial')


def build_potential(kind: str, zeros: Optional[Sequence] = None,
                    coefficients: Optional[Sequence[float]] = None) -> PotentialSpec:
    """Factory used by the config layer"""
    if kind == 'quartic':
        return quartic_potential()
    if kind == 'product_wells':
        if zeros is None:
            raise ConfigurationError("potential.zeros is required for product_wells")
        return product_wells_potential(zeros)
    if kind == 'custom_polynomial':
        if zeros is None or coefficients is None:
            raise ConfigurationError("custom_polynomial needs potential.zeros and potential.coefficients")
        flat = np.asarray(zeros, dtype=float).reshape(-1)
        return custom_polynomial_potential(coefficients, flat)
    raise ConfigurationError(f"Unknown potential kind: {kind} (expected one of {POTENTIAL_KINDS})")


# ---------------------------------------------------------------------------
# operations

def _as_point(spec: PotentialSpec, u) -> np.ndarray:
    point = np.atleast_1d(np.asarray(u, dtype=float))
    if point.shape != (spec.dimension,):
        raise DomainError(f"Expected a point in R^{spec.dimension}, got shape {point.shape}")
    if not np.all(np.isfinite(point)):
        raise DomainError(f"Non-finite input {point}")
    return point


def eval_potential(spec: PotentialSpec, u) -> float:
    """
    Evaluate F at one point.

    Raises:
        DomainError: non-finite input
        InvalidPotentialError: F(u) < -tol_zero
    """
    point = _as_point(spec, u)
    val = float(spec.F(point))
    if val < -spec.tol_zero:
        raise InvalidPotentialError(f"{spec.name}: F({point.tolist()}) = {val:.3e} is negative")
    if val < 0.0:
        logger.debug(f"{spec.name}: F({point.tolist()}) = {val:.3e} within tol_zero, reported as 0")
        return 0.0
    return val


def eval_reaction(spec: PotentialSpec, u) -> np.ndarray:
    """Reaction field f(u) = -grad F(u)"""
    point = _as_point(spec, u)
    return -spec.grad(point)


def spectral_bounds(spec: PotentialSpec) -> SpectralBounds:
    """
    Smallest and largest Hessian eigenvalues over the listed zeros.

    Raises:
        HypothesisViolationError: Hessian not positive definite at some zero
    """
    H = spec.hess(spec.zeros)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    eig = np.linalg.eigvalsh(H)
    lows = eig[:, 0]
    highs = eig[:, -1]
    bad = np.where(lows <= 0.0)[0]
    if bad.size:
        j = int(bad[0])
        raise HypothesisViolationError(
            f"{spec.name}: Hessian at zero {j} {spec.zeros[j].tolist()} has eigenvalue {lows[j]:.3e} <= 0")
    return SpectralBounds(
        lam=float(lows.min()),
        Lam=float(highs.max()),
        per_well_min=tuple(float(x) for x in lows),
        per_well_max=tuple(float(x) for x in highs),
    )


def inflated_box(zeros: np.ndarray, inflation: float = 0.5):
    """Bounding box of the zeros, widened by the given fraction of its span"""
    lo = zeros.min(axis=0)
    hi = zeros.max(axis=0)
    span = hi - lo
    scale = max(float(span.max()), 1.0)
    span = np.where(span > 0, span, scale)
    pad = 0.5 * inflation * span
    return lo - pad, hi + pad


def quasi_random_cloud(lo: np.ndarray, hi: np.ndarray, n: int) -> np.ndarray:
    """Deterministic Halton points in the box [lo, hi]"""
    sampler = qmc.Halton(d=len(lo), scramble=False)
    return qmc.scale(sampler.random(n), lo, hi)


def validate(spec: PotentialSpec, sample_count: int = 10_000) -> PotentialValidationReport:
    """
    Check nonnegativity, the zero set and positive-definite Hessians on a quasi-random cloud.

    Args:
        spec: potential to check
        sample_count: number of Halton points in the inflated zero box

    Returns:
        PotentialValidationReport with flags and the certified lambda, Lambda
    """
    logger.info(f"Validating potential {spec.name} with {sample_count} samples")
    issues = []

    lo, hi = inflated_box(spec.zeros, inflation=1.0)
    cloud = np.vstack([quasi_random_cloud(lo, hi, sample_count), spec.zeros])
    values = spec.F(cloud)
    worst = int(np.argmin(values))
    min_value = float(values[worst])
    if not np.all(np.isfinite(values)):
        issues.append("non-finite potential values in the sample box")
    if min_value < -spec.tol_zero:
        issues.append(f"F negative at {cloud[worst].tolist()}: {min_value:.3e}")

    zero_values = np.abs(spec.F(spec.zeros))
    zero_grads = np.linalg.norm(spec.grad(spec.zeros), axis=-1)
    grad_tol = spec.tol_zero if spec.gradient is not None else 1e-6
    if zero_values.max() > spec.tol_zero:
        j = int(np.argmax(zero_values))
        issues.append(f"listed zero {spec.zeros[j].tolist()} has F = {zero_values[j]:.3e}")
    if zero_grads.max() > grad_tol:
        j = int(np.argmax(zero_grads))
        issues.append(f"listed zero {spec.zeros[j].tolist()} has |grad F| = {zero_grads[j]:.3e}")

    bounds = None
    try:
        bounds = spectral_bounds(spec)
    except HypothesisViolationError as e:
        issues.append(str(e))

    # coercivity check F(x) >= C |x|^2 outside a ball containing the wells
    radius = 2.0 * float(np.linalg.norm(spec.zeros, axis=-1).max()) + 1.0
    far = quasi_random_cloud(np.full(spec.dimension, -2.0 * radius), np.full(spec.dimension, 2.0 * radius),
                             max(sample_count // 4, 64))
    norms = np.linalg.norm(far, axis=-1)
    far = far[norms > radius]
    coercivity = float(np.min(spec.F(far) / np.sum(far * far, axis=-1))) if len(far) else float('nan')
    if not coercivity > 0.0:
        issues.append(f"coercivity check failed beyond |x| > {radius:.3g} (C = {coercivity:.3e})")

    report = PotentialValidationReport(
        name=spec.name,
        passed=not issues,
        issues=issues,
        sample_count=int(len(cloud)),
        min_sampled_value=min_value,
        worst_point=cloud[worst],
        max_zero_value=float(zero_values.max()),
        max_zero_gradient=float(zero_grads.max()),
        bounds=bounds,
        coercivity_constant=coercivity,
    )
    if report.passed:
        logger.info(f"Potential {spec.name} passed: lambda={bounds.lam:.4g}, Lambda={bounds.Lam:.4g}")
    else:
        logger.warning(f"Potential {spec.name} failed validation: {issues}")
    return report


if __name__ == "__main__":
    quartic = quartic_potential()
    print(validate(quartic).to_dict())
    wells = product_wells_potential([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
    print(validate(wells, 2000).to_dict())
