from dataclasses import dataclass
from typing import Callable, Literal, Tuple
import numpy as np
from injector import singleton, inject
from controllers.core_controller import (
    TWO_PI,
    DispersionField,
    PerturbationField,
    as_state_array,
)
from controllers.log_controller import LogController
from errors import ConfigError, DimensionError, NumericalError

QuadratureKind = Literal["tensor", "lattice", "monte-carlo"]

MAX_TENSOR_NODES = 10**7
HERMITIAN_TOLERANCE = 1e-10
EIGEN_CLAMP = -1e-10
EIGEN_REJECT = -1e-8

# Generating vector of an embedded base-2 rank-1 lattice sequence (good up to 2^20 points)
LATTICE_GENERATOR = np.array(
    [1, 182667, 469891, 498753, 110745, 446247, 250185, 118627, 245333, 283199],
    dtype=np.int64,
)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes on the torus T^n with weights summing to one"""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.nodes.shape[-1]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def phases(self) -> np.ndarray:
        return np.exp(1j * self.nodes)


@dataclass(frozen=True, eq=False)
class AveragedDiffusion:
    """K (Hermitian PSD) and its principal square root, batched over leading axes"""

    K: np.ndarray
    root: np.ndarray


def _hermitian_part(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + np.conj(np.swapaxes(K, -1, -2)))


@singleton
class AveragingController:
    """Torus averages of fields and diffusion matrices"""

    @inject
    def __init__(self, log_controller: LogController):
        self._log_controller = log_controller
        self._clamp_reported = False

    def make_quadrature(
        self, n: int, M: int, kind: QuadratureKind = "tensor", seed: int = 0
    ) -> QuadratureRule:
        """
        Build a rule for the normalized torus average (2pi)^-n int f(w) dw

        Args:
            n: torus dimension
            M: points per dimension (tensor) or total points (lattice, monte-carlo)
            kind: tensor | lattice | monte-carlo
            seed: generator seed for the monte-carlo kind

        Returns:
            QuadratureRule with equal weights
        """
        if n < 1:
            raise DimensionError("torus dimension must be at least 1")
        if M < 2:
            raise ConfigError("quadrature needs M >= 2")
        if kind == "tensor":
            if float(M) ** n > MAX_TENSOR_NODES:
                raise ConfigError(f"tensor rule with {M}^{n} nodes exceeds {MAX_TENSOR_NODES}")
            axis = TWO_PI * np.arange(M) / M
            grids = np.meshgrid(*([axis] * n), indexing="ij")
            nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
        elif kind == "lattice":
            if n > len(LATTICE_GENERATOR):
                raise ConfigError(f"lattice rule supports n <= {len(LATTICE_GENERATOR)}")
            z = LATTICE_GENERATOR[:n] % M
            nodes = TWO_PI * (np.outer(np.arange(M), z) % M) / M
        elif kind == "monte-carlo":
            nodes = np.random.default_rng(seed).uniform(0.0, TWO_PI, size=(M, n))
        else:
            raise ConfigError(f"unknown quadrature kind: {kind}")
        weights = np.full(nodes.shape[0], 1.0 / nodes.shape[0])
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return QuadratureRule(nodes=nodes, weights=weights, kind=kind)

    def default_quadrature(self, n: int) -> QuadratureRule:
        if n <= 3:
            return self.make_quadrature(n, 32, "tensor")
        return self.make_quadrature(n, 2**14, "lattice")

    def integrate(self, rule: QuadratureRule, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Weighted sum of f over the nodes; f maps (M, n) angles to (M, ...) values"""
        values = np.asarray(f(rule.nodes))
        return np.tensordot(rule.weights, values, axes=(0, 0))

    def average_field(self, P: PerturbationField, a, rule: QuadratureRule) -> np.ndarray:
        """<<P>>(a) = sum_j w_j Phi_{w_j} P(Phi_{-w_j} a)"""
        a = as_state_array(a)
        if a.shape[-1] != rule.n:
            raise DimensionError(f"state has n={a.shape[-1]}, rule has n={rule.n}")
        phases = rule.phases
        rotated = a[..., None, :] * np.conj(phases)
        values = P(rotated)
        averaged = np.sum(rule.weights[:, None] * phases * values, axis=-2)
        if not np.all(np.isfinite(averaged)):
            raise NumericalError("perturbation field is not finite on the averaging nodes")
        return averaged

    def average_diffusion_state(
        self, B: DispersionField, a, rule: QuadratureRule
    ) -> AveragedDiffusion:
        """K_eff(a) = sum_j w_j Phi B B^H Phi^H at Phi_{-w_j} a, with its Hermitian root"""
        a = as_state_array(a)
        if a.shape[-1] != rule.n:
            raise DimensionError(f"state has n={a.shape[-1]}, rule has n={rule.n}")
        phases = rule.phases
        rotated = a[..., None, :] * np.conj(phases)
        Bv = B(rotated)
        C = Bv @ np.conj(np.swapaxes(Bv, -1, -2))
        twist = phases[:, :, None] * np.conj(phases[:, None, :])
        K = np.sum(rule.weights[:, None, None] * twist * C, axis=-3)
        K = _hermitian_part(K)
        return AveragedDiffusion(K=K, root=self.psd_sqrt(K))

    def action_drift(self, P: PerturbationField, B: DispersionField, v) -> np.ndarray:
        """F_k(v) = Re(v_bar_k P_k(v)) + sum_l |B_kl(v)|^2"""
        v = as_state_array(v)
        Bv = B(v)
        return np.real(np.conj(v) * P(v)) + np.sum(np.abs(Bv) ** 2, axis=-1)

    def action_dispersion(self, B: DispersionField, v) -> np.ndarray:
        """
        Real n x 2n1 dispersion of the actions

        Column j carries Re(v_bar_k B_kj) against Re beta^c_j, column n1 + j carries
        -Im(v_bar_k B_kj) against Im beta^c_j, so G G^T is the Ito covariation of I.
        """
        v = as_state_array(v)
        z = np.conj(v)[..., :, None] * B(v)
        return np.concatenate([z.real, -z.imag], axis=-1)

    def average_action_drift(self, P: PerturbationField, I, rule: QuadratureRule) -> np.ndarray:
        """Angle average of Re(v_bar_k P_k(v)) at fixed actions (no Ito term)"""
        I = np.asarray(I, dtype=np.float64)
        if np.any(I < 0):
            raise ConfigError("actions must be non-negative")
        v = np.sqrt(2.0 * I)[..., None, :] * rule.phases
        F = np.real(np.conj(v) * P(v))
        return np.sum(rule.weights[:, None] * F, axis=-2)

    def average_action_coefficients(
        self,
        P: PerturbationField,
        B: DispersionField,
        I,
        rule: QuadratureRule,
    ) -> Tuple[np.ndarray, AveragedDiffusion]:
        """Angle averages of F and of G G^T at fixed actions; root is <<G>> = sqrt(K)"""
        I = np.asarray(I, dtype=np.float64)
        if np.any(I < 0):
            raise ConfigError("actions must be non-negative")
        if I.shape[-1] != rule.n:
            raise DimensionError(f"actions have n={I.shape[-1]}, rule has n={rule.n}")
        v = np.sqrt(2.0 * I)[..., None, :] * rule.phases
        F = self.action_drift(P, B, v)
        Fbar = np.sum(rule.weights[:, None] * F, axis=-2)
        G = self.action_dispersion(B, v)
        GGt = G @ np.swapaxes(G, -1, -2)
        K = np.sum(rule.weights[:, None, None] * GGt, axis=-3)
        K = 0.5 * (K + np.swapaxes(K, -1, -2))
        if not (np.all(np.isfinite(Fbar)) and np.all(np.isfinite(K))):
            raise NumericalError("averaged action coefficients are not finite")
        return Fbar, AveragedDiffusion(K=K, root=self.psd_sqrt(K))

    def psd_sqrt(self, K) -> np.ndarray:
        """Principal square root of a Hermitian PSD matrix (batched) via eigh"""
        K = np.asarray(K)
        if np.max(np.abs(K - np.conj(np.swapaxes(K, -1, -2))), initial=0.0) > HERMITIAN_TOLERANCE:
            raise NumericalError("matrix is not Hermitian")
        if not np.all(np.isfinite(K)):
            raise NumericalError("matrix has non-finite entries")
        eigvals, eigvecs = np.linalg.eigh(K)
        if np.any(eigvals < EIGEN_REJECT):
            raise NumericalError(f"matrix has eigenvalue {eigvals.min():.3e} below {EIGEN_REJECT}")
        if not self._clamp_reported and np.any(eigvals < EIGEN_CLAMP):
            self._clamp_reported = True
            self._log_controller.log_warning(
                f"clamped eigenvalue {eigvals.min():.3e} of an averaged diffusion matrix to 0"
            )
        eigvals = np.where(eigvals < 0.0, 0.0, eigvals)
        root = (eigvecs * np.sqrt(eigvals)[..., None, :]) @ np.conj(np.swapaxes(eigvecs, -1, -2))
        if not np.iscomplexobj(K):
            root = root.real
        return root
