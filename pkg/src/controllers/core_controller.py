from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union
import itertools
import numpy as np
from injector import singleton, inject
from errors import ConfigError, DimensionError, NumericalError

TWO_PI = 2.0 * np.pi
FD_STEP = 1e-6
RANK_TOLERANCE = 1e-10
RESONANCE_THRESHOLD = 1e-6
MAX_RESONANCE_VECTORS = 10**7


@dataclass(frozen=True, eq=False)
class ComplexState:
    """Point (or batch of points, leading axes) v in C^n"""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.complex128)
        if v.ndim == 0:
            v = v.reshape(1)
        if v.shape[-1] < 1:
            raise DimensionError("ComplexState needs n >= 1")
        if not np.all(np.isfinite(v)):
            raise NumericalError("ComplexState has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.v.shape[-1]


@dataclass(frozen=True, eq=False)
class ActionAngle:
    """Actions I >= 0 and angles phi in [0, 2pi); phi is 0 wherever I is 0"""

    I: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        actions = np.array(self.I, dtype=np.float64)
        angles = np.array(self.phi, dtype=np.float64)
        if actions.ndim == 0:
            actions = actions.reshape(1)
        angles = np.broadcast_to(angles, actions.shape).copy()
        if np.any(actions < 0) or not np.all(np.isfinite(actions)):
            raise ConfigError("actions must be finite and non-negative")
        angles = np.mod(angles, TWO_PI)
        # mod can round up to exactly 2pi for tiny negative angles
        angles[angles >= TWO_PI] = 0.0
        angles[actions == 0] = 0.0
        actions.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "I", actions)
        object.__setattr__(self, "phi", angles)


@dataclass(frozen=True, eq=False)
class IntegrableHamiltonian:
    """H(I) and its frequency map; either may be missing, not both"""

    n: int
    H: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gradH: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError("IntegrableHamiltonian needs n >= 1")
        if self.H is None and self.gradH is None:
            raise ConfigError("IntegrableHamiltonian needs H or gradH")

    def energy(self, I: np.ndarray) -> np.ndarray:
        if self.H is None:
            raise ConfigError("this Hamiltonian was given by its frequencies only")
        return np.asarray(self.H(np.asarray(I, dtype=np.float64)), dtype=np.float64)

    def frequencies(self, I: np.ndarray) -> np.ndarray:
        I = np.asarray(I, dtype=np.float64)
        if self.gradH is not None:
            return np.broadcast_to(
                np.asarray(self.gradH(I), dtype=np.float64), I.shape
            )
        grad = np.empty(I.shape, dtype=np.float64)
        for k in range(I.shape[-1]):
            step = np.zeros(I.shape[-1])
            step[k] = FD_STEP
            grad[..., k] = (self.energy(I + step) - self.energy(I - step)) / (2 * FD_STEP)
        return grad


def hamiltonian_vector_field(
    h: Callable[[np.ndarray], np.ndarray],
    v: np.ndarray,
    h_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """2i dh/dv_bar, with dv_bar = (d/dx + i d/dy) / 2; central differences when no gradient is given"""
    v = np.asarray(v, dtype=np.complex128)
    if h_grad is not None:
        grad = np.asarray(h_grad(v), dtype=np.complex128)
    else:
        grad = np.empty(v.shape, dtype=np.complex128)
        for k in range(v.shape[-1]):
            e = np.zeros(v.shape[-1], dtype=np.complex128)
            e[k] = FD_STEP
            dx = (np.asarray(h(v + e)) - np.asarray(h(v - e))) / (2 * FD_STEP)
            dy = (np.asarray(h(v + 1j * e)) - np.asarray(h(v - 1j * e))) / (2 * FD_STEP)
            grad[..., k] = 0.5 * (dx + 1j * dy)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("Hamiltonian gradient is not finite")
    return 2j * grad


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """P: C^n -> C^n, optionally split as P = P1 + (Hamiltonian field of h)"""

    P: Callable[[np.ndarray], np.ndarray]
    P1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if (self.P1 is None) != (self.h is None):
            raise ConfigError("a split perturbation needs both P1 and h")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.complex128)
        return np.broadcast_to(np.asarray(self.P(v), dtype=np.complex128), v.shape)

    @property
    def has_split(self) -> bool:
        return self.P1 is not None

    def hamiltonian_part(self, v: np.ndarray) -> np.ndarray:
        if self.h is None:
            return np.zeros(np.shape(v), dtype=np.complex128)
        return hamiltonian_vector_field(self.h, v, self.h_grad)

    @classmethod
    def from_split(cls, P1, h, h_grad=None) -> "PerturbationField":
        def P(v):
            return np.asarray(P1(v), dtype=np.complex128) + hamiltonian_vector_field(h, v, h_grad)

        return cls(P=P, P1=P1, h=h, h_grad=h_grad)


@dataclass(frozen=True, eq=False)
class DispersionField:
    """B: C^n -> complex n x n1 matrices; constant fields broadcast over batches"""

    B: Callable[[np.ndarray], np.ndarray]
    n1: int
    is_constant: bool = False
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n1 < 1:
            raise DimensionError("dispersion needs at least one noise column")

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.complex128)
        out = np.asarray(self.B(v), dtype=np.complex128)
        if out.shape[-1] != self.n1:
            raise DimensionError(f"dispersion returned {out.shape[-1]} columns, expected {self.n1}")
        if out.ndim == 2 and v.ndim > 1:
            out = np.broadcast_to(out, v.shape[:-1] + out.shape)
        return out

    @classmethod
    def constant(cls, matrix) -> "DispersionField":
        m = np.array(matrix, dtype=np.complex128)
        if m.ndim != 2:
            raise DimensionError("constant dispersion must be a matrix")
        m.setflags(write=False)
        return cls(B=lambda v: m, n1=m.shape[1], is_constant=True, matrix=m)

    @classmethod
    def diagonal(cls, b) -> "DispersionField":
        return cls.constant(np.diag(np.asarray(b, dtype=np.complex128)))


@dataclass(frozen=True, eq=False)
class DomainBox:
    """Q = {v: |v_j| <= C_j}"""

    C: np.ndarray

    def __post_init__(self):
        c = np.array(self.C, dtype=np.float64).reshape(-1)
        if c.size < 1 or np.any(c <= 0):
            raise ConfigError("box radii must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "C", c)

    def contains(self, v: np.ndarray) -> np.ndarray:
        return np.all(np.abs(v) <= self.C, axis=-1)

    def outside(self, v: np.ndarray) -> np.ndarray:
        return np.any(np.abs(v) > self.C, axis=-1)


@dataclass
class RankReport:
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    flagged: np.ndarray
    passed: bool


@dataclass
class CoercivityReport:
    max_excess: float
    worst_index: int
    passed: bool


@dataclass
class ResonanceReport:
    min_ratio: np.ndarray
    best_s: np.ndarray
    near_resonant: np.ndarray
    S: int
    passed: bool


@dataclass
class KolmogorovReport:
    determinants: np.ndarray
    degenerate: np.ndarray
    passed: bool


StateLike = Union[ComplexState, np.ndarray, Sequence[complex]]


def as_state_array(v) -> np.ndarray:
    if isinstance(v, ComplexState):
        return v.v
    return np.asarray(v, dtype=np.complex128)


def stack_states(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=np.complex128)
    rows = [as_state_array(s) for s in samples]
    if not rows:
        raise ConfigError("sample list is empty")
    return np.stack(rows)


def parse_complex(entry) -> complex:
    """A number, a "1+0.5j" string or a [re, im] pair"""
    if isinstance(entry, (list, tuple)):
        if len(entry) != 2:
            raise ConfigError(f"complex pair must have two entries, got {entry!r}")
        return complex(float(entry[0]), float(entry[1]))
    if isinstance(entry, str):
        try:
            return complex(entry.replace(" ", ""))
        except ValueError as e:
            raise ConfigError(f"cannot parse complex number {entry!r}") from e
    try:
        return complex(entry)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"cannot parse complex number {entry!r}") from e


def complex_vector(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.astype(np.complex128).reshape(-1)
    return np.array([parse_complex(e) for e in values], dtype=np.complex128)


def complex_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        return rows.astype(np.complex128)
    matrix = [complex_vector(row) for row in rows]
    if len({len(r) for r in matrix}) != 1:
        raise DimensionError("matrix rows have different lengths")
    return np.stack(matrix)


def actions_of(v: np.ndarray) -> np.ndarray:
    return 0.5 * (v.real**2 + v.imag**2)


def rotate_array(v: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return v * np.exp(1j * np.asarray(omega, dtype=np.float64))


@singleton
class CoreController:
    """State transforms, rotation flows and assumption checkers"""

    @inject
    def __init__(self):
        pass

    def to_action_angle(self, v: StateLike) -> ActionAngle:
        v = as_state_array(v)
        return ActionAngle(I=actions_of(v), phi=np.angle(v))

    def from_action_angle(self, aa: ActionAngle) -> ComplexState:
        return ComplexState(np.sqrt(2.0 * aa.I) * np.exp(1j * aa.phi))

    def rotate(self, v: StateLike, omega) -> ComplexState:
        return ComplexState(rotate_array(as_state_array(v), omega))

    def unperturbed_flow(
        self, v: StateLike, H: IntegrableHamiltonian, eps: float, dtau: float
    ) -> ComplexState:
        """Exact flow of the stiff term over a slow-time step; actions are invariant along it"""
        if not eps > 0:
            raise ConfigError("eps must be positive")
        if dtau < 0:
            raise ConfigError("dtau must be non-negative")
        v = as_state_array(v)
        if np.isinf(eps) or dtau == 0:
            return ComplexState(v)
        omega = H.frequencies(actions_of(v)) * (dtau / eps)
        return ComplexState(rotate_array(v, omega))

    def hamiltonian_field(self, h, v: StateLike, h_grad=None) -> ComplexState:
        return ComplexState(hamiltonian_vector_field(h, as_state_array(v), h_grad))

    def check_rank(self, B: DispersionField, v_samples) -> RankReport:
        V = stack_states(v_samples)
        n = V.shape[-1]
        singular = np.linalg.svd(B(V), compute_uv=False)
        sigma_max = singular[..., 0]
        if B.n1 < n:
            sigma_min = np.zeros_like(sigma_max)
        else:
            sigma_min = singular[..., n - 1]
        flagged = np.flatnonzero(sigma_min <= RANK_TOLERANCE * sigma_max)
        return RankReport(
            sigma_min=sigma_min,
            sigma_max=sigma_max,
            flagged=flagged,
            passed=flagged.size == 0,
        )

    def check_coercivity(
        self, P: PerturbationField, v_samples, alpha1: float, alpha2: float
    ) -> CoercivityReport:
        """max over samples of Re<P(v), v_bar> + alpha1 |v| - alpha2; passes when <= 0"""
        if alpha1 < 0:
            raise ConfigError("alpha1 must be non-negative")
        V = stack_states(v_samples)
        excess = (
            np.sum(np.real(P(V) * np.conj(V)), axis=-1)
            + alpha1 * np.linalg.norm(V, axis=-1)
            - alpha2
        )
        worst = int(np.argmax(excess))
        return CoercivityReport(
            max_excess=float(excess[worst]),
            worst_index=worst,
            passed=bool(excess[worst] <= 0.0),
        )

    def resonance_scan(
        self,
        H: IntegrableHamiltonian,
        I_samples,
        S: int,
        threshold: float = RESONANCE_THRESHOLD,
    ) -> ResonanceReport:
        """Smallest |grad H(I) . s| / |s| over nonzero integer s with |s|_inf <= S"""
        if S < 1:
            raise ConfigError("S must be at least 1")
        I = np.atleast_2d(np.asarray(I_samples, dtype=np.float64))
        n = I.shape[-1]
        if (2 * S + 1) ** n > MAX_RESONANCE_VECTORS:
            raise ConfigError(f"resonance box (2S+1)^n exceeds {MAX_RESONANCE_VECTORS}")
        grid = np.array(list(itertools.product(range(-S, S + 1), repeat=n)), dtype=np.int64)
        # s and -s give the same ratio; keep the half with positive leading nonzero entry
        leading = grid[np.arange(len(grid)), np.argmax(grid != 0, axis=1)]
        vectors = grid[leading > 0]
        norms = np.linalg.norm(vectors, axis=1)
        freqs = H.frequencies(I)
        min_ratio = np.empty(len(I))
        best = np.empty((len(I), n), dtype=np.int64)
        chunk = max(1, MAX_RESONANCE_VECTORS // len(vectors))
        for start in range(0, len(I), chunk):
            ratios = np.abs(freqs[start:start + chunk] @ vectors.T) / norms
            idx = np.argmin(ratios, axis=1)
            min_ratio[start:start + chunk] = ratios[np.arange(len(idx)), idx]
            best[start:start + chunk] = vectors[idx]
        near = np.flatnonzero(min_ratio < threshold)
        return ResonanceReport(
            min_ratio=min_ratio, best_s=best, near_resonant=near, S=S, passed=near.size == 0
        )

    def kolmogorov_check(
        self, H: IntegrableHamiltonian, I_samples, tolerance: float = 1e-8
    ) -> KolmogorovReport:
        """det d^2H(I) from central differences of the frequency map"""
        I = np.atleast_2d(np.asarray(I_samples, dtype=np.float64))
        n = I.shape[-1]
        hessian = np.empty(I.shape + (n,))
        for j in range(n):
            step = np.zeros(n)
            step[j] = FD_STEP
            hessian[..., j] = (H.frequencies(I + step) - H.frequencies(I - step)) / (2 * FD_STEP)
        dets = np.linalg.det(hessian)
        degenerate = np.flatnonzero(np.abs(dets) < tolerance)
        return KolmogorovReport(determinants=dets, degenerate=degenerate, passed=degenerate.size == 0)

    def check_frequency_gradient(self, H: IntegrableHamiltonian, I_samples) -> float:
        """Max relative error of grad H against central differences of H"""
        I = np.atleast_2d(np.asarray(I_samples, dtype=np.float64))
        n = I.shape[-1]
        analytic = H.frequencies(I)
        numeric = np.empty_like(analytic)
        for k in range(n):
            step = np.zeros(n)
            step[k] = FD_STEP
            numeric[..., k] = (H.energy(I + step) - H.energy(I - step)) / (2 * FD_STEP)
        scale = np.maximum(np.abs(analytic), 1e-12)
        return float(np.max(np.abs(analytic - numeric) / scale))

    def check_hamiltonian_split(self, P: PerturbationField, v_samples) -> float:
        """Max |P - P1 - 2i dh/dv_bar| over samples"""
        if not P.has_split:
            raise ConfigError("perturbation carries no (P1, h) split")
        V = stack_states(v_samples)
        residual = P(V) - np.asarray(P.P1(V), dtype=np.complex128) - P.hamiltonian_part(V)
        return float(np.max(np.abs(residual)))
