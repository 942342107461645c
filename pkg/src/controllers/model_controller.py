from dataclasses import dataclass
from typing import Callable, Dict, List, Optional
import numpy as np
from easydict import EasyDict
from injector import singleton, inject
from controllers.core_controller import (
    DispersionField,
    IntegrableHamiltonian,
    PerturbationField,
    complex_matrix,
)
from controllers.log_controller import LogController
from controllers.oscillator_controller import OscillatorController, OscillatorPotential
from errors import ConfigError, DimensionError

DEFAULT_LAMBDA = [1.0, float(np.sqrt(2.0))]


@dataclass(frozen=True, eq=False)
class OuParameters:
    """Friction nu_k > 0 and noise amplitudes b_k != 0"""

    nu: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=np.float64).reshape(-1)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if nu.shape != b.shape or nu.size < 1:
            raise DimensionError("nu and b must be non-empty vectors of the same length")
        if np.any(nu <= 0):
            raise ConfigError("friction nu_k must be positive")
        if np.any(b == 0):
            raise ConfigError("noise amplitudes b_k must be nonzero")
        nu.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.nu.size


@dataclass(frozen=True, eq=False)
class OuActionLaw:
    """Exact law of da_k = -nu_k a_k dtau + b_k dbeta_k^c"""

    ou: OuParameters

    @property
    def means(self) -> np.ndarray:
        """Stationary action means b_k^2 / (2 nu_k)"""
        return self.ou.b**2 / (2.0 * self.ou.nu)

    def sample(self, size: int, seed: int) -> np.ndarray:
        """(size, n) stationary actions, each coordinate exponential"""
        return np.random.default_rng(seed).exponential(self.means, size=(size, self.ou.n))

    def quantile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return -np.log1p(-u)[..., None] * self.means

    def cdf(self, I) -> np.ndarray:
        return -np.expm1(-np.maximum(np.asarray(I, dtype=np.float64), 0.0) / self.means)

    def second_moment(self, a0, tau) -> np.ndarray:
        """E|a_k(tau)|^2 = e^{-2 nu tau} |a_k(0)|^2 + (b^2/nu)(1 - e^{-2 nu tau})"""
        tau = np.asarray(tau, dtype=np.float64)[..., None]
        decay = np.exp(-2.0 * self.ou.nu * tau)
        return decay * np.abs(np.asarray(a0)) ** 2 + (self.ou.b**2 / self.ou.nu) * (1.0 - decay)

    def transition(self, a: np.ndarray, tau: float, rng: np.random.Generator) -> np.ndarray:
        """Exact sample of a(tau) given a(0) = a (batched over leading axes)"""
        a = np.asarray(a, dtype=np.complex128)
        decay = np.exp(-self.ou.nu * tau)
        scale = self.ou.b * np.sqrt(-np.expm1(-2.0 * self.ou.nu * tau) / (2.0 * self.ou.nu))
        z = rng.standard_normal(a.shape + (2,))
        return decay * a + scale * (z[..., 0] + 1j * z[..., 1])


@dataclass(frozen=True, eq=False)
class ModelIngredients:
    key: str
    H: IntegrableHamiltonian
    P: PerturbationField
    B: DispersionField
    params: EasyDict
    ou: Optional[OuParameters] = None
    potential: Optional[OscillatorPotential] = None

    @property
    def n(self) -> int:
        return self.H.n


def _vector(value, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise DimensionError(f"{name} must have {n} entries, got {arr.size}")
    return arr


def _friction(nu: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    return lambda v: -nu * v


def coupling_hamiltonian(kappa: float, mu: float):
    """
    h = kappa sum_k Re(v_k conj(v_{k+1})) + mu sum_k |v_k|^2 |v_{k+1}|^2 and dh/dv_bar

    Both terms are invariant under the common phase rotation, so the field is
    orthogonal to v and the friction alone controls Re<P(v), v_bar>.
    """

    def h(v):
        v = np.asarray(v, dtype=np.complex128)
        left, right = v[..., :-1], v[..., 1:]
        hopping = np.sum(np.real(left * np.conj(right)), axis=-1)
        quartic = np.sum(np.abs(left) ** 2 * np.abs(right) ** 2, axis=-1)
        return kappa * hopping + mu * quartic

    def h_grad(v):
        v = np.asarray(v, dtype=np.complex128)
        neighbours = np.zeros_like(v)
        neighbour_power = np.zeros(v.shape)
        neighbours[..., :-1] += v[..., 1:]
        neighbours[..., 1:] += v[..., :-1]
        neighbour_power[..., :-1] += np.abs(v[..., 1:]) ** 2
        neighbour_power[..., 1:] += np.abs(v[..., :-1]) ** 2
        return 0.5 * kappa * neighbours + mu * v * neighbour_power

    return h, h_grad


@singleton
class ModelController:
    """Built-in model factories and the named-model registry"""

    @inject
    def __init__(self, oscillator: OscillatorController, log_controller: LogController):
        self._oscillator = oscillator
        self._log_controller = log_controller
        self._registry: Dict[str, Callable[[EasyDict], ModelIngredients]] = {
            "linear": self._linear_from_params,
            "damped_driven": self._damped_driven_from_params,
            "chain_quartic": self._chain_from_params,
        }

    def register(self, key: str, factory: Callable[[EasyDict], ModelIngredients], replace: bool = False):
        """Add a user model; factory receives the parameter dict of the configuration"""
        if key in self._registry and not replace:
            raise ConfigError(f"model key already registered: {key}")
        self._registry[key] = factory

    def available(self) -> List[str]:
        return sorted(self._registry)

    def build(self, key: str, params: Optional[dict] = None) -> ModelIngredients:
        if key not in self._registry:
            raise ConfigError(f"unknown model key: {key} (available: {', '.join(self.available())})")
        model = self._registry[key](EasyDict(params or {}))
        if not isinstance(model, ModelIngredients):
            raise ConfigError(f"factory for {key} did not return ModelIngredients")
        return model

    def _dispersion(self, params: EasyDict, n: int, b: np.ndarray) -> DispersionField:
        matrix = params.get("dispersion_matrix")
        if matrix is None:
            return DispersionField.diagonal(b)
        B = DispersionField.constant(complex_matrix(matrix))
        if B.matrix.shape[0] != n:
            raise DimensionError(f"dispersion_matrix must have {n} rows")
        return B

    def linear_model(
        self, lam, nu=None, b=None, dispersion: Optional[DispersionField] = None, params=None
    ) -> ModelIngredients:
        """H(I) = lambda . I; optional friction -nu v and noise diag(b) (both zero when omitted)"""
        lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        n = lam.size
        nu = np.zeros(n) if nu is None else _vector(nu, n, "nu")
        b = np.zeros(n) if b is None else _vector(b, n, "b")
        H = IntegrableHamiltonian(
            n=n,
            H=lambda I: np.asarray(I) @ lam,
            gradH=lambda I: np.broadcast_to(lam, np.shape(I)),
        )
        return ModelIngredients(
            key="linear",
            H=H,
            P=PerturbationField(P=_friction(nu)),
            B=dispersion if dispersion is not None else DispersionField.diagonal(b),
            params=EasyDict(params or {"lambda": lam.tolist(), "nu": nu.tolist(), "b": b.tolist()}),
        )

    def damped_driven_model(
        self,
        H: IntegrableHamiltonian,
        h: Optional[Callable[[np.ndarray], np.ndarray]],
        ou: OuParameters,
        h_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        dispersion: Optional[DispersionField] = None,
        params=None,
    ) -> ModelIngredients:
        """P = -diag(nu) v + 2i dh/dv_bar, B = diag(b)"""
        if H.n != ou.n:
            raise DimensionError(f"Hamiltonian has n={H.n}, friction has n={ou.n}")
        if h is None:
            h, h_grad = (lambda v: np.zeros(np.shape(v)[:-1])), (lambda v: np.zeros(np.shape(v), dtype=np.complex128))
        return ModelIngredients(
            key="damped_driven",
            H=H,
            P=PerturbationField.from_split(_friction(ou.nu), h, h_grad),
            B=dispersion if dispersion is not None else DispersionField.diagonal(ou.b),
            params=EasyDict(params or {"nu": ou.nu.tolist(), "b": ou.b.tolist()}),
            ou=ou,
        )

    def ou_exact_action_law(self, ou: OuParameters) -> OuActionLaw:
        return OuActionLaw(ou)

    def chain_model(
        self,
        V: OscillatorPotential,
        n: int,
        nu=1.0,
        b=1.0,
        E_max: float = 50.0,
        dispersion: Optional[DispersionField] = None,
        params=None,
    ) -> ModelIngredients:
        """
        n uncoupled oscillators q_k'' = -Q(q_k) in Birkhoff coordinates

        Args:
            V: on-site potential, validated odd and convex
            n: number of sites
            nu: friction acting on v in Birkhoff coordinates
            b: noise amplitudes (diagonal dispersion)
            E_max: largest tabulated energy per site
        """
        if n < 1:
            raise DimensionError("chain needs n >= 1")
        V.validate()
        table = self._oscillator.energy_table(V, E_max)
        nu = _vector(nu, n, "nu")
        b = _vector(b, n, "b")
        H = IntegrableHamiltonian(
            n=n,
            H=lambda I: np.sum(self._oscillator.table_energy(table, I), axis=-1),
            gradH=lambda I: self._oscillator.table_frequency(table, I),
        )
        return ModelIngredients(
            key="chain_quartic",
            H=H,
            P=PerturbationField(P=_friction(nu)),
            B=dispersion if dispersion is not None else DispersionField.diagonal(b),
            params=EasyDict(params or {"alpha": V.alpha, "beta": V.beta, "n": n}),
            potential=V,
        )

    def _linear_from_params(self, params: EasyDict) -> ModelIngredients:
        lam = np.asarray(params.get("lambda", DEFAULT_LAMBDA), dtype=np.float64)
        n = lam.size
        nu = _vector(params.get("nu", 1.0), n, "nu")
        b = _vector(params.get("b", 1.0), n, "b")
        return self.linear_model(lam, nu, b, self._dispersion(params, n, b), params)

    def _damped_driven_from_params(self, params: EasyDict) -> ModelIngredients:
        lam = np.asarray(params.get("lambda", DEFAULT_LAMBDA), dtype=np.float64)
        n = lam.size
        gamma = float(params.get("gamma", 1.0))
        ou = OuParameters(
            nu=_vector(params.get("nu", [1.0, 2.0][:n] if n <= 2 else 1.0), n, "nu"),
            b=_vector(params.get("b", [1.0, 0.5][:n] if n <= 2 else 1.0), n, "b"),
        )
        H = IntegrableHamiltonian(
            n=n,
            H=lambda I: np.asarray(I) @ lam + 0.5 * gamma * np.sum(np.asarray(I) ** 2, axis=-1),
            gradH=lambda I: lam + gamma * np.asarray(I),
        )
        h, h_grad = coupling_hamiltonian(float(params.get("kappa", 0.1)), float(params.get("mu", 0.05)))
        return self.damped_driven_model(H, h, ou, h_grad, self._dispersion(params, n, ou.b), params)

    def _chain_from_params(self, params: EasyDict) -> ModelIngredients:
        n = int(params.get("n", 2))
        V = OscillatorPotential.quartic(float(params.get("alpha", 1.0)), float(params.get("beta", 0.5)))
        b = _vector(params.get("b", 1.0), n, "b")
        return self.chain_model(
            V,
            n,
            nu=params.get("nu", 1.0),
            b=b,
            E_max=float(params.get("E_max", 50.0)),
            dispersion=self._dispersion(params, n, b),
            params=params,
        )
