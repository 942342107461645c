from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple
import threading
import numpy as np
from injector import singleton, inject
from controllers.averaging_controller import AveragingController, QuadratureRule
from controllers.core_controller import (
    CoreController,
    DispersionField,
    IntegrableHamiltonian,
    PerturbationField,
)
from controllers.log_controller import LogController
from controllers.sde_controller import SdeController, SdeSystem, StiffPart
from errors import ConfigError, DimensionError

ACTION_QUANTUM = 1e-6
MEMO_LIMIT = 500_000
SPLIT_TOLERANCE = 1e-8
SPLIT_SAMPLES = 8


@dataclass(frozen=True, eq=False)
class ActionCoefficients:
    """Drift F(v) and real dispersion G(v) of the actions; not closed in I"""

    drift: Callable[[np.ndarray], np.ndarray]
    dispersion: Callable[[np.ndarray], np.ndarray]
    noise_dim: int


@dataclass(frozen=True, eq=False)
class DeterministicAveragedEquation:
    """dI/dtau = <<Re(v_bar P(v))>>(I)"""

    rhs: Callable[[np.ndarray], np.ndarray]
    n: int


@dataclass(frozen=True, eq=False)
class EquationBundle:
    full: SdeSystem
    action_sde: ActionCoefficients
    averaged_action: SdeSystem
    effective: SdeSystem
    effective_modified: Optional[SdeSystem] = None
    deterministic_avg: Optional[DeterministicAveragedEquation] = None

    def __post_init__(self):
        systems = [self.full, self.averaged_action, self.effective]
        if self.effective_modified is not None:
            systems.append(self.effective_modified)
        if len({s.n for s in systems}) != 1:
            raise DimensionError("all systems of a bundle must share n")
        if self.effective.stiff_part is not None or (
            self.effective_modified is not None and self.effective_modified.stiff_part is not None
        ):
            raise ConfigError("effective systems carry no stiff part")


class AveragedActionField:
    """<<F>>(I) and <<G>>(I), memoized per point of a 1e-6 grid in I"""

    def __init__(
        self,
        averaging: AveragingController,
        P: PerturbationField,
        B: DispersionField,
        rule: QuadratureRule,
        memoize: bool = True,
        quantum: float = ACTION_QUANTUM,
        max_entries: int = MEMO_LIMIT,
    ):
        self._averaging = averaging
        self._P = P
        self._B = B
        self._rule = rule
        self._memoize = memoize
        self._quantum = quantum
        self._max_entries = max_entries
        self._memo: Dict[bytes, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self._last: Optional[Tuple[bytes, Tuple[np.ndarray, np.ndarray]]] = None
        self.n = rule.n
        if B.is_constant:
            # constant B: K = diag(2 I_k sum_j |B_kj|^2), Ito inflow sum_j |B_kj|^2
            self._row_power = np.sum(np.abs(B.matrix) ** 2, axis=-1)
        else:
            self._row_power = None

    @property
    def memo_size(self) -> int:
        return len(self._memo)

    def _compute(self, I: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self._row_power is not None:
            F = self._averaging.average_action_drift(self._P, I, self._rule) + self._row_power
            root = np.sqrt(2.0 * I * self._row_power)[..., None] * np.eye(self.n)
            return F, root
        F, diffusion = self._averaging.average_action_coefficients(self._P, self._B, I, self._rule)
        return F, diffusion.root

    def evaluate(self, I) -> Tuple[np.ndarray, np.ndarray]:
        I = np.asarray(I, dtype=np.float64)
        snapped = np.round(np.maximum(I, 0.0) / self._quantum) * self._quantum
        flat = np.ascontiguousarray(snapped.reshape(-1, self.n))
        whole = flat.tobytes()
        last = self._last
        if last is not None and last[0] == whole:
            return last[1]
        if not self._memoize:
            F, root = self._compute(flat)
        else:
            F, root = self._lookup(flat)
        result = (F.reshape(I.shape), root.reshape(I.shape + (self.n,)))
        self._last = (whole, result)
        return result

    def _lookup(self, flat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        keys = [row.tobytes() for row in flat]
        missing = [i for i, key in enumerate(keys) if key not in self._memo]
        fresh = {}
        if missing:
            F_new, root_new = self._compute(flat[missing])
            for j, i in enumerate(missing):
                fresh[keys[i]] = (F_new[j], root_new[j])
            with self._lock:
                for key, value in fresh.items():
                    if len(self._memo) >= self._max_entries:
                        break
                    self._memo.setdefault(key, value)
        F = np.empty(flat.shape)
        root = np.empty(flat.shape + (self.n,))
        for i, key in enumerate(keys):
            F[i], root[i] = fresh[key] if key in fresh else self._memo[key]
        return F, root

    def drift(self, I) -> np.ndarray:
        return self.evaluate(I)[0]

    def dispersion(self, I) -> np.ndarray:
        return self.evaluate(I)[1]


@singleton
class EquationController:
    """Builders for the full, averaged and effective systems"""

    @inject
    def __init__(
        self,
        core: CoreController,
        averaging: AveragingController,
        sde: SdeController,
        log_controller: LogController,
    ):
        self._core = core
        self._averaging = averaging
        self._sde = sde
        self._log_controller = log_controller

    def _check_dimensions(self, n: int, P: PerturbationField, B: DispersionField):
        origin = np.zeros(n, dtype=np.complex128)
        drift = P(origin)
        dispersion = B(origin)
        if drift.shape != (n,):
            raise DimensionError(f"perturbation returned shape {drift.shape}, expected ({n},)")
        if dispersion.shape != (n, B.n1):
            raise DimensionError(f"dispersion returned shape {dispersion.shape}, expected ({n}, {B.n1})")
        if B.n1 < n:
            raise DimensionError(f"dispersion has n1={B.n1} < n={n}; the noise cannot be non-degenerate")

    def build_full(
        self, H: IntegrableHamiltonian, P: PerturbationField, B: DispersionField, eps: float
    ) -> SdeSystem:
        """dv = i/eps diag(grad H(I)) v dtau + P(v) dtau + B(v) dbeta^c"""
        if not eps > 0:
            raise ConfigError("eps must be positive")
        self._check_dimensions(H.n, P, B)
        return SdeSystem(
            state_space="complex",
            n=H.n,
            drift=P,
            dispersion=B,
            noise_dim=B.n1,
            noise_kind="complex",
            stiff_part=StiffPart(H, float(eps)),
            tag=f"full(eps={eps:g})",
        )

    def build_action_coefficients(self, P: PerturbationField, B: DispersionField) -> ActionCoefficients:
        return ActionCoefficients(
            drift=lambda v: self._averaging.action_drift(P, B, v),
            dispersion=lambda v: self._averaging.action_dispersion(B, v),
            noise_dim=2 * B.n1,
        )

    def build_averaged_action(
        self,
        P: PerturbationField,
        B: DispersionField,
        rule: QuadratureRule,
        memoize: bool = True,
    ) -> SdeSystem:
        """dI = <<F>>(I) dtau + <<G>>(I) dbeta on the closed positive orthant"""
        self._check_dimensions(rule.n, P, B)
        if not B.is_constant:
            self._log_controller.log_warning(
                "dispersion is not constant: the averaged action equation may have several "
                "weak solutions, so convergence of the actions to it is not guaranteed"
            )
        field = AveragedActionField(self._averaging, P, B, rule, memoize=memoize)
        return SdeSystem(
            state_space="action",
            n=rule.n,
            drift=field.drift,
            dispersion=field.dispersion,
            noise_dim=rule.n,
            noise_kind="real",
            tag="averaged_action",
        )

    def _effective_dispersion(self, B: DispersionField, rule: QuadratureRule) -> Callable:
        if B.is_constant:
            root = self._averaging.average_diffusion_state(
                B, np.zeros(rule.n, dtype=np.complex128), rule
            ).root
            root.setflags(write=False)
            return lambda a: root
        return lambda a: self._averaging.average_diffusion_state(B, a, rule).root

    def build_effective(self, P: PerturbationField, B: DispersionField, rule: QuadratureRule) -> SdeSystem:
        """da = <<P>>(a) dtau + <<B>>(a) dbeta^c, no stiff part"""
        self._check_dimensions(rule.n, P, B)
        return SdeSystem(
            state_space="complex",
            n=rule.n,
            drift=lambda a: self._averaging.average_field(P, a, rule),
            dispersion=self._effective_dispersion(B, rule),
            noise_dim=rule.n,
            noise_kind="complex",
            tag="effective",
        )

    def build_effective_modified(
        self,
        P1: Callable[[np.ndarray], np.ndarray],
        h: Optional[Callable[[np.ndarray], np.ndarray]],
        B: DispersionField,
        rule: QuadratureRule,
        full: Optional[PerturbationField] = None,
        h_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> SdeSystem:
        """
        Effective system with only <<P1>> in the drift

        Args:
            P1: non-Hamiltonian part of the perturbation
            h: Hamiltonian of the removed part (None for h = 0)
            B: dispersion, averaged as in build_effective
            rule: torus quadrature
            full: the complete perturbation; when given, P - P1 - 2i dh/dv_bar must vanish on sample points
            h_grad: optional dh/dv_bar
        """
        if full is not None:
            if h is None:
                h, h_grad = (lambda v: np.zeros(np.shape(v)[:-1])), None
            split = PerturbationField(P=full.P, P1=P1, h=h, h_grad=h_grad)
            z = np.random.default_rng(0).standard_normal((SPLIT_SAMPLES, rule.n, 2))
            points = z[..., 0] + 1j * z[..., 1]
            residual = self._core.check_hamiltonian_split(split, points)
            if residual > SPLIT_TOLERANCE:
                raise ConfigError(f"P - P1 - 2i dh/dv_bar = {residual:.3e} exceeds {SPLIT_TOLERANCE}")
        P1_field = PerturbationField(P=P1)
        self._check_dimensions(rule.n, P1_field, B)
        return SdeSystem(
            state_space="complex",
            n=rule.n,
            drift=lambda a: self._averaging.average_field(P1_field, a, rule),
            dispersion=self._effective_dispersion(B, rule),
            noise_dim=rule.n,
            noise_kind="complex",
            tag="effective_modified",
        )

    def build_deterministic_averaged(self, P: PerturbationField, rule: QuadratureRule) -> DeterministicAveragedEquation:
        return DeterministicAveragedEquation(
            rhs=lambda I: self._averaging.average_action_drift(P, np.maximum(I, 0.0), rule),
            n=rule.n,
        )

    def solve_deterministic(
        self, ode: DeterministicAveragedEquation, I0, T: float, dtau: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        """RK4 solution of the deterministic averaged action equation"""
        I0 = np.asarray(I0, dtype=np.float64)
        if I0.shape[-1] != ode.n or np.any(I0 < 0):
            raise ConfigError("initial actions must be non-negative with matching n")
        return self._sde.integrate_ode(ode.rhs, I0, T, dtau)

    def build_bundle(
        self,
        H: IntegrableHamiltonian,
        P: PerturbationField,
        B: DispersionField,
        eps: float,
        rule: QuadratureRule,
        memoize: bool = True,
    ) -> EquationBundle:
        modified = None
        if P.has_split:
            modified = self.build_effective_modified(P.P1, P.h, B, rule, full=P, h_grad=P.h_grad)
        return EquationBundle(
            full=self.build_full(H, P, B, eps),
            action_sde=self.build_action_coefficients(P, B),
            averaged_action=self.build_averaged_action(P, B, rule, memoize=memoize),
            effective=self.build_effective(P, B, rule),
            effective_modified=modified,
            deterministic_avg=self.build_deterministic_averaged(P, rule),
        )
