from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple
import threading
import numpy as np
from injector import singleton, inject
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.special import roots_legendre
from controllers.core_controller import TWO_PI, ComplexState, as_state_array
from controllers.log_controller import LogController
from errors import ConfigError, NumericalError

GAUSS_NODES = 64
QUADRATURE_TOLERANCE = 1e-10
MAX_BRACKET_DOUBLINGS = 200
TABLE_POINTS = 400
TABLE_E_MIN = 1e-8
FD_STEP = 1e-6
GAP_NODES = 8
ROOT_XTOL = np.finfo(float).tiny
ROOT_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class OscillatorPotential:
    """
    V(q) with V(0) = 0 and its restoring force Q = V'

    q'' = -Q(q); near zero Q(q) = alpha q + beta q^3 + ...
    """

    V: Callable[[np.ndarray], np.ndarray]
    Q: Callable[[np.ndarray], np.ndarray]
    alpha: float
    beta: float
    dQ: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")

    @classmethod
    def quartic(cls, alpha: float, beta: float) -> "OscillatorPotential":
        """V = alpha q^2 / 2 + beta q^4 / 4"""
        return cls(
            V=lambda q: 0.5 * alpha * q**2 + 0.25 * beta * q**4,
            Q=lambda q: alpha * q + beta * q**3,
            alpha=float(alpha),
            beta=float(beta),
            dQ=lambda q: alpha + 3.0 * beta * q**2,
            name=f"quartic(alpha={alpha:g}, beta={beta:g})",
        )

    @classmethod
    def harmonic(cls, alpha: float) -> "OscillatorPotential":
        return cls.quartic(alpha, 0.0)

    def stiffness(self, q: np.ndarray) -> np.ndarray:
        if self.dQ is not None:
            return np.asarray(self.dQ(q), dtype=np.float64)
        return (np.asarray(self.Q(q + FD_STEP)) - np.asarray(self.Q(q - FD_STEP))) / (2 * FD_STEP)

    def validate(self, samples: int = 1000, bound: float = 10.0, seed: int = 0):
        """Odd force and convex potential on random samples in [-bound, bound]"""
        q = np.random.default_rng(seed).uniform(-bound, bound, samples)
        force = np.asarray(self.Q(q), dtype=np.float64)
        mirrored = np.asarray(self.Q(-q), dtype=np.float64)
        if np.max(np.abs(force + mirrored) / (1.0 + np.abs(force))) > 1e-12:
            raise ConfigError(f"{self.name or 'potential'}: Q is not odd")
        if np.any(self.stiffness(q) <= 0):
            raise ConfigError(f"{self.name or 'potential'}: V is not convex")
        if abs(float(self.V(0.0))) > 1e-14:
            raise ConfigError(f"{self.name or 'potential'}: V(0) must be 0")


@dataclass(frozen=True, eq=False)
class OscillatorTable:
    """E(I) as a cubic Hermite spline with exact slopes dE/dI = omega"""

    potential: OscillatorPotential
    actions: np.ndarray
    energies: np.ndarray
    frequencies: np.ndarray
    spline: CubicHermiteSpline
    slope: CubicHermiteSpline

    @property
    def max_action(self) -> float:
        return float(self.actions[-1])


def _gauss_legendre(a: float, b: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@singleton
class OscillatorController:
    """Action-angle maps of one-degree-of-freedom oscillators and uncoupled chains"""

    @inject
    def __init__(self, log_controller: LogController):
        self._log_controller = log_controller
        self._tables: Dict[Tuple[int, float, int], OscillatorTable] = {}
        self._lock = threading.Lock()

    def turning_point(self, V: OscillatorPotential, E: float) -> float:
        """q_max > 0 with V(q_max) = E"""
        if not E > 0:
            raise ConfigError("energy must be positive")
        # the harmonic turning point starts the bracket at the right scale for any E
        hi = np.sqrt(2.0 * E / V.alpha)
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if float(V.V(hi)) > E:
                break
            hi *= 2.0
        else:
            raise NumericalError(f"could not bracket the turning point for E={E:g}")
        lo = 0.5 * hi
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if float(V.V(lo)) < E:
                break
            lo *= 0.5
        else:
            raise NumericalError(f"could not bracket the turning point for E={E:g}")
        return brentq(lambda q: float(V.V(q)) - E, lo, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL)

    def _potential_gap(self, V: OscillatorPotential, q_max: float, psi: np.ndarray) -> np.ndarray:
        """V(q_max) - V(q_max sin psi) as (q_max - |q|) times the mean force on [|q|, q_max]"""
        # V is even, so the gap only depends on |q|
        psi = np.abs(psi)
        q = q_max * np.sin(psi)
        # q_max (1 - sin psi) without cancellation near psi = pi / 2
        width = 2.0 * q_max * np.sin(0.25 * np.pi - 0.5 * psi) ** 2
        t, w = _gauss_legendre(0.0, 1.0, GAP_NODES)
        force = np.asarray(V.Q(q[:, None] + width[:, None] * t[None, :]), dtype=np.float64)
        return width * (force @ w)

    def _orbit_integrals(self, V: OscillatorPotential, q_max: float, n: int):
        psi, w = _gauss_legendre(0.0, 0.5 * np.pi, n)
        speed = np.sqrt(2.0 * self._potential_gap(V, q_max, psi))
        jacobian = q_max * np.cos(psi)
        action = (2.0 / np.pi) * np.sum(w * speed * jacobian)
        quarter_period = np.sum(w * jacobian / speed)
        return action, 4.0 * quarter_period

    def oscillator_action(self, V: OscillatorPotential, E: float) -> Tuple[float, float]:
        """
        Action and frequency of the orbit with energy E

        Args:
            V: the potential
            E: orbit energy, positive

        Returns:
            (I, omega) with I = (1/pi) int sqrt(2(E - V)) dq and omega = 2 pi / period
        """
        q_max = self.turning_point(V, E)
        action, period = self._orbit_integrals(V, q_max, GAUSS_NODES)
        check, check_period = self._orbit_integrals(V, q_max, 2 * GAUSS_NODES)
        if not (np.isfinite(check) and np.isfinite(check_period) and check > 0 and check_period > 0):
            raise NumericalError(f"orbit quadrature is not finite at E={E:g}")
        if abs(check - action) > QUADRATURE_TOLERANCE * check or abs(
            check_period - period
        ) > QUADRATURE_TOLERANCE * check_period:
            raise NumericalError(f"orbit quadrature did not converge at E={E:g}")
        return float(check), float(TWO_PI / check_period)

    def energy_of_action(self, V: OscillatorPotential, I: float) -> float:
        """Inverse of the action map; E(0) = 0"""
        if I < 0:
            raise ConfigError("action must be non-negative")
        if I == 0:
            return 0.0

        def residual(E):
            return (self.oscillator_action(V, E)[0] if E > 0 else 0.0) - I

        # harmonic bound E = sqrt(alpha) I is a lower bound for hardening springs
        hi = max(np.sqrt(V.alpha) * I, 1e-300)
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if residual(hi) > 0:
                break
            hi *= 2.0
        else:
            raise NumericalError(f"could not bracket the energy for I={I:g}")
        return brentq(residual, 0.0, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL)

    def _orbit_time(self, V: OscillatorPotential, q_max: float, q: float, n: int) -> float:
        """Time from (q_max, 0) down to q along the p <= 0 half of the orbit"""
        psi0 = float(np.arcsin(np.clip(q / q_max, -1.0, 1.0)))
        if psi0 >= 0.5 * np.pi:
            return 0.0
        psi, w = _gauss_legendre(psi0, 0.5 * np.pi, n)
        speed = np.sqrt(2.0 * self._potential_gap(V, q_max, psi))
        return float(np.sum(w * q_max * np.cos(psi) / speed))

    def oscillator_to_birkhoff(self, V: OscillatorPotential, q: float, p: float) -> Tuple[float, float]:
        """
        (q, p) to (I, phi); phi = 0 at (q_max, 0) and grows along the flow

        For the harmonic potential this is sqrt(omega) q - i p / sqrt(omega) = sqrt(2I) e^{i phi}.
        """
        q, p = float(q), float(p)
        if not (np.isfinite(q) and np.isfinite(p)):
            raise NumericalError(f"non-finite oscillator state q={q}, p={p}")
        E = 0.5 * p * p + float(V.V(q))
        if E <= 0:
            return 0.0, 0.0
        I, omega = self.oscillator_action(V, E)
        if p == 0.0:
            # turning points
            return I, 0.0 if q > 0 else float(np.pi)
        q_max = self.turning_point(V, E)
        coarse = self._orbit_time(V, q_max, q, GAUSS_NODES)
        elapsed = self._orbit_time(V, q_max, q, 2 * GAUSS_NODES)
        period = TWO_PI / omega
        if not np.isfinite(elapsed) or abs(coarse - elapsed) > 1e-8 * period:
            raise NumericalError(f"orbit-time quadrature did not converge at q={q:g}, p={p:g}")
        if p > 0:
            elapsed = period - elapsed
        return I, float(np.mod(omega * elapsed, TWO_PI))

    def birkhoff_to_oscillator(self, V: OscillatorPotential, I: float, phi: float) -> Tuple[float, float]:
        """Integrate q'' = -Q(q) from (q_max, 0) for time phi / omega"""
        if not (np.isfinite(I) and np.isfinite(phi)):
            raise ConfigError(f"action and angle must be finite, got I={I}, phi={phi}")
        if I < 0:
            raise ConfigError("action must be non-negative")
        if I == 0:
            return 0.0, 0.0
        E = self.energy_of_action(V, I)
        _, omega = self.oscillator_action(V, E)
        q_max = self.turning_point(V, E)
        t = float(np.mod(phi, TWO_PI)) / omega
        if t == 0:
            return q_max, 0.0
        sol = solve_ivp(
            lambda _, y: [y[1], -float(V.Q(y[0]))],
            (0.0, t),
            [q_max, 0.0],
            method="DOP853",
            rtol=1e-12,
            atol=1e-12,
        )
        if not sol.success:
            raise NumericalError(f"oscillator integration failed: {sol.message}")
        return float(sol.y[0, -1]), float(sol.y[1, -1])

    def energy_table(
        self, V: OscillatorPotential, E_max: float = 50.0, points: int = TABLE_POINTS
    ) -> OscillatorTable:
        """Tabulate E(I) on a geometric energy grid; memoized per potential"""
        key = (id(V), float(E_max), int(points))
        table = self._tables.get(key)
        if table is not None and table.potential is V:
            return table
        energies = np.concatenate([[0.0], np.geomspace(TABLE_E_MIN, E_max, points)])
        actions = np.zeros_like(energies)
        freqs = np.full_like(energies, np.sqrt(V.alpha))
        for j in range(1, len(energies)):
            actions[j], freqs[j] = self.oscillator_action(V, energies[j])
        if np.any(np.diff(actions) <= 0):
            raise NumericalError("action map is not increasing on the energy grid")
        spline = CubicHermiteSpline(actions, energies, freqs, extrapolate=False)
        table = OscillatorTable(
            potential=V,
            actions=actions,
            energies=energies,
            frequencies=freqs,
            spline=spline,
            slope=spline.derivative(),
        )
        with self._lock:
            self._tables[key] = table
        self._log_controller.log_message(
            f"tabulated {V.name or 'oscillator'} up to E={E_max:g} (I <= {table.max_action:.4g})"
        )
        return table

    def table_energy(self, table: OscillatorTable, I: np.ndarray) -> np.ndarray:
        I = np.asarray(I, dtype=np.float64)
        self._check_range(table, I)
        return table.spline(np.maximum(I, 0.0))

    def table_frequency(self, table: OscillatorTable, I: np.ndarray) -> np.ndarray:
        I = np.asarray(I, dtype=np.float64)
        self._check_range(table, I)
        return table.slope(np.maximum(I, 0.0))

    def _check_range(self, table: OscillatorTable, I: np.ndarray):
        if np.any(I > table.max_action):
            raise NumericalError(
                f"action {np.max(I):.4g} beyond the tabulated range {table.max_action:.4g}; raise E_max"
            )

    def chain_to_birkhoff(self, V: OscillatorPotential, q, p) -> ComplexState:
        """Per-site Birkhoff coordinates v_k = sqrt(2 I_k) e^{i phi_k}"""
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        if q.shape != p.shape or q.ndim != 1:
            raise ConfigError("q and p must be vectors of the same length")
        v = np.empty(q.shape, dtype=np.complex128)
        for k in range(q.size):
            I, phi = self.oscillator_to_birkhoff(V, q[k], p[k])
            v[k] = np.sqrt(2.0 * I) * np.exp(1j * phi)
        return ComplexState(v)

    def birkhoff_to_chain(self, V: OscillatorPotential, v) -> Tuple[np.ndarray, np.ndarray]:
        v = np.atleast_1d(as_state_array(v))
        q = np.empty(v.shape)
        p = np.empty(v.shape)
        for k in range(v.size):
            q[k], p[k] = self.birkhoff_to_oscillator(V, 0.5 * abs(v[k]) ** 2, float(np.angle(v[k])))
        return q, p
