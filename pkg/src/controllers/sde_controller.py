from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence, Tuple
import numpy as np
from injector import singleton, inject
from controllers.core_controller import (
    ComplexState,
    DomainBox,
    IntegrableHamiltonian,
    actions_of,
    rotate_array,
)
from controllers.log_controller import LogController
from errors import ConfigError, DimensionError, NumericalError

SchemeKind = Literal["auto", "euler", "splitting", "truncated"]
StateSpace = Literal["complex", "action"]
NoiseKind = Literal["complex", "real"]

NOISE_CHUNK = 512
MAX_STUDY_INCREMENTS = 5 * 10**7
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class StiffPart:
    hamiltonian: IntegrableHamiltonian
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be positive")


@dataclass(frozen=True, eq=False)
class SdeSystem:
    """dx = drift(x) dtau + dispersion(x) dbeta, plus an optional stiff rotation i/eps grad H(I) v"""

    state_space: StateSpace
    n: int
    drift: Callable[[np.ndarray], np.ndarray]
    dispersion: Callable[[np.ndarray], np.ndarray]
    noise_dim: int
    noise_kind: NoiseKind
    stiff_part: Optional[StiffPart] = None
    tag: str = ""

    def __post_init__(self):
        if self.state_space not in ("complex", "action"):
            raise ConfigError(f"unknown state space: {self.state_space}")
        if self.noise_kind not in ("complex", "real"):
            raise ConfigError(f"unknown noise kind: {self.noise_kind}")
        if self.n < 1 or self.noise_dim < 1:
            raise DimensionError("system needs n >= 1 and at least one noise column")
        if self.stiff_part is not None and self.state_space != "complex":
            raise ConfigError("a stiff rotation part only exists on the complex state space")

    @property
    def dtype(self):
        return np.complex128 if self.state_space == "complex" else np.float64

    def stiff_drift(self, v: np.ndarray) -> np.ndarray:
        if self.stiff_part is None or np.isinf(self.stiff_part.eps):
            return np.zeros_like(v)
        omega = self.stiff_part.hamiltonian.frequencies(actions_of(v))
        return 1j * omega * v / self.stiff_part.eps

    def total_drift(self, x: np.ndarray) -> np.ndarray:
        drift = np.asarray(self.drift(x))
        if self.stiff_part is None:
            return drift
        return drift + self.stiff_drift(x)

    def noise(self, x: np.ndarray, dbeta: np.ndarray) -> np.ndarray:
        D = np.asarray(self.dispersion(x))
        if D.shape[-1] != self.noise_dim or D.shape[-2] != self.n:
            raise DimensionError(
                f"dispersion has shape {D.shape[-2:]}, expected ({self.n}, {self.noise_dim})"
            )
        return (D @ dbeta[..., None])[..., 0]


@dataclass(frozen=True)
class PathConfig:
    dtau: float
    T: float
    seed: int = 0
    scheme: SchemeKind = "auto"
    stride: int = 1

    def __post_init__(self):
        if not self.dtau > 0 or not self.T > 0:
            raise ConfigError("dtau and T must be positive")
        if self.dtau > self.T:
            raise ConfigError("dtau must not exceed T")
        if self.scheme not in ("auto", "euler", "splitting", "truncated"):
            raise ConfigError(f"unknown scheme: {self.scheme}")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")

    @property
    def steps(self) -> int:
        return int(np.ceil(self.T / self.dtau - GRID_TOLERANCE))


@dataclass
class PathResult:
    times: np.ndarray
    states: np.ndarray
    diverged: bool
    diverged_step: Optional[int] = None


@dataclass
class BatchResult:
    """States at the recorded steps for every path; dead paths hold NaN after divergence"""

    steps: np.ndarray
    states: np.ndarray
    diverged: np.ndarray
    diverged_step: np.ndarray
    exit_step: np.ndarray


@dataclass
class WeakConvergenceReport:
    dtaus: np.ndarray
    errors: np.ndarray
    reference_dtau: float
    reference_value: float
    slope: float
    estimates: List[float] = field(default_factory=list)


def path_generator(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for path `index` of an ensemble with `master_seed`"""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),)))


def _draw(gens: Sequence[np.random.Generator], count: int, m: int, kind: NoiseKind, dtau: float) -> np.ndarray:
    scale = np.sqrt(dtau)
    if kind == "real":
        blocks = [g.standard_normal((count, m)) for g in gens]
        return np.stack(blocks, axis=1) * scale
    blocks = [g.standard_normal((count, m, 2)) for g in gens]
    z = np.stack(blocks, axis=1) * scale
    return z[..., 0] + 1j * z[..., 1]


@singleton
class SdeController:
    """Wiener sampling and the Euler, splitting and truncated steppers"""

    @inject
    def __init__(self, log_controller: LogController):
        self._log_controller = log_controller

    def sample_wiener_increments(
        self, m: int, steps: int, dtau: float, seed: int, kind: NoiseKind = "real"
    ) -> np.ndarray:
        """(steps, m) increments; complex kind has independent N(0, dtau) real and imaginary parts"""
        if steps < 1 or m < 1:
            raise ConfigError("need at least one step and one noise column")
        if kind not in ("real", "complex"):
            raise ConfigError(f"unknown noise kind: {kind}")
        return _draw([np.random.default_rng(seed)], steps, m, kind, dtau)[:, 0, :]

    # single steps, with the non-finite check the public API promises

    def euler_maruyama_step(self, x, sys: SdeSystem, dbeta, dtau: float) -> np.ndarray:
        return self._checked(self._euler(self._state(sys, x), sys, np.asarray(dbeta), dtau))

    def splitting_step(self, v, sys: SdeSystem, dbeta, dtau: float) -> np.ndarray:
        if sys.stiff_part is None:
            raise ConfigError("splitting needs a system with a stiff part")
        return self._checked(self._splitting(self._state(sys, v), sys, np.asarray(dbeta), dtau))

    def action_step_truncated(self, I, sys: SdeSystem, dbeta, dtau: float) -> np.ndarray:
        if sys.state_space != "action":
            raise ConfigError("truncated stepping is for action-space systems")
        I = self._state(sys, I)
        if np.any(I < 0):
            raise ConfigError("actions must be non-negative")
        return self._truncated(I, sys, np.asarray(dbeta), dtau)

    def _checked(self, x: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(x)):
            raise NumericalError("step produced a non-finite state")
        return x

    def _state(self, sys: SdeSystem, x) -> np.ndarray:
        if isinstance(x, ComplexState):
            x = x.v
        x = np.asarray(x)
        if sys.state_space == "action":
            if np.iscomplexobj(x):
                raise DimensionError("action-space system needs a real state")
            x = x.astype(np.float64)
        else:
            x = x.astype(np.complex128)
        if x.shape[-1] != sys.n:
            raise DimensionError(f"state has n={x.shape[-1]}, system has n={sys.n}")
        return x

    @staticmethod
    def _euler(x, sys: SdeSystem, dbeta, dtau):
        return x + sys.total_drift(x) * dtau + sys.noise(x, dbeta)

    @staticmethod
    def _splitting(v, sys: SdeSystem, dbeta, dtau):
        stiff = sys.stiff_part
        if not np.isinf(stiff.eps):
            v = rotate_array(v, stiff.hamiltonian.frequencies(actions_of(v)) * (dtau / stiff.eps))
        return v + np.asarray(sys.drift(v)) * dtau + sys.noise(v, dbeta)

    @staticmethod
    def _truncated(I, sys: SdeSystem, dbeta, dtau):
        positive = np.maximum(I, 0.0)
        stepped = positive + np.asarray(sys.drift(positive)) * dtau + sys.noise(positive, dbeta)
        return np.maximum(stepped, 0.0)

    def resolve_scheme(self, sys: SdeSystem, scheme: SchemeKind) -> Callable:
        if scheme == "auto":
            if sys.state_space == "action":
                scheme = "truncated"
            elif sys.stiff_part is not None:
                scheme = "splitting"
            else:
                scheme = "euler"
        if scheme == "euler":
            return self._euler
        if scheme == "splitting":
            if sys.stiff_part is None:
                raise ConfigError("splitting needs a system with a stiff part")
            return self._splitting
        if scheme == "truncated":
            if sys.state_space != "action":
                raise ConfigError("truncated stepping is for action-space systems")
            return self._truncated
        raise ConfigError(f"unknown scheme: {scheme}")

    def steps_for_times(self, times: Sequence[float], cfg: PathConfig) -> np.ndarray:
        steps = []
        for t in times:
            k = int(round(t / cfg.dtau))
            if abs(k * cfg.dtau - t) > GRID_TOLERANCE * max(1.0, abs(t)) or k < 0 or k > cfg.steps:
                raise ConfigError(f"time {t} is not on the grid of step {cfg.dtau} within [0, T]")
            steps.append(k)
        return np.asarray(steps, dtype=np.int64)

    def integrate_path(self, sys: SdeSystem, x0, cfg: PathConfig, snapshot_times=None) -> PathResult:
        """One path with the configured stepper; a diverged path is returned up to its last finite state"""
        if snapshot_times is None:
            record = np.unique(np.append(np.arange(0, cfg.steps + 1, cfg.stride), cfg.steps))
        else:
            record = self.steps_for_times(snapshot_times, cfg)
        x0 = self._state(sys, x0).reshape(1, sys.n)
        batch = self.integrate_batch(
            sys, x0, [np.random.default_rng(cfg.seed)], cfg, record
        )
        states = batch.states[:, 0, :]
        times = batch.steps * cfg.dtau
        if batch.diverged[0]:
            keep = batch.steps < batch.diverged_step[0]
            return PathResult(times[keep], states[keep], True, int(batch.diverged_step[0]))
        return PathResult(times, states, False)

    def integrate_batch(
        self,
        sys: SdeSystem,
        x0: np.ndarray,
        gens: Sequence[np.random.Generator],
        cfg: PathConfig,
        record_steps,
        box: Optional[DomainBox] = None,
        progress_task: Optional[str] = None,
    ) -> BatchResult:
        """
        Advance len(gens) paths together; path i draws its increments from gens[i] only

        Args:
            sys: system to integrate
            x0: (N, n) or (n,) initial states
            gens: one generator per path
            cfg: step size, horizon and scheme
            record_steps: step indices at which states are stored, in any order
            box: optional exit box; the first step outside it is stored per path

        Returns:
            BatchResult with states of shape (len(record_steps), N, n)
        """
        N = len(gens)
        x0 = self._state(sys, x0)
        x = np.array(np.broadcast_to(x0, (N, sys.n)))

        def noise(start, count):
            return _draw(gens, count, sys.noise_dim, sys.noise_kind, cfg.dtau)

        return self._run(sys, x, noise, cfg.dtau, cfg.steps, self.resolve_scheme(sys, cfg.scheme),
                         np.asarray(record_steps, dtype=np.int64), box, progress_task)

    def _run(self, sys, x, noise, dtau, steps, stepper, record_steps, box, progress_task) -> BatchResult:
        N = x.shape[0]
        alive = np.ones(N, dtype=bool)
        diverged_step = np.full(N, -1, dtype=np.int64)
        exit_step = np.full(N, -1, dtype=np.int64)
        records = np.full((len(record_steps), N, sys.n), np.nan, dtype=sys.dtype)
        order = np.argsort(record_steps, kind="stable")
        ordered = record_steps[order]
        pointer = 0
        last_needed = int(ordered[-1]) if len(ordered) else 0
        horizon = steps if box is not None else min(steps, last_needed)

        def store(step):
            nonlocal pointer
            while pointer < len(ordered) and ordered[pointer] == step:
                records[order[pointer]] = x
                pointer += 1

        store(0)
        if box is not None:
            exit_step[box.outside(x)] = 0
        step = 0
        while step < horizon:
            count = min(NOISE_CHUNK, horizon - step)
            increments = noise(step, count)
            for c in range(count):
                safe = np.where(alive[:, None], x, 0)
                with np.errstate(all="ignore"):
                    stepped = stepper(safe, sys, increments[c], dtau)
                finite = np.all(np.isfinite(stepped), axis=-1)
                diverged_step[alive & ~finite] = step + 1
                alive &= finite
                x = np.where(alive[:, None], stepped, np.nan)
                step += 1
                if box is not None:
                    hit = alive & (exit_step < 0) & box.outside(x)
                    exit_step[hit] = step
                store(step)
            if progress_task:
                self._log_controller.update_progress(progress_task, step, horizon)
            if box is not None and step >= last_needed and not np.any(alive & (exit_step < 0)):
                break
        return BatchResult(
            steps=np.asarray(record_steps),
            states=records,
            diverged=~alive,
            diverged_step=diverged_step,
            exit_step=exit_step,
        )

    def weak_convergence_study(
        self,
        sys: SdeSystem,
        x0,
        T: float,
        dtaus: Sequence[float],
        observable: Callable[[np.ndarray], np.ndarray],
        n_paths: int,
        seed: int,
        refine: int = 8,
        scheme: SchemeKind = "auto",
    ) -> WeakConvergenceReport:
        """
        Self-convergence of E[observable(x(T))] against a reference run at min(dtaus)/refine

        Every level sums the same fine increments, so the level differences carry little
        Monte Carlo noise. The slope is the least-squares fit of log error against log dtau
        over the levels with a nonzero error, nan when fewer than two remain.
        """
        dtaus = np.sort(np.asarray(dtaus, dtype=np.float64))[::-1]
        finest = dtaus[-1] / refine
        fine_steps = int(round(T / finest))
        if abs(fine_steps * finest - T) > GRID_TOLERANCE * T:
            raise ConfigError("T must be a multiple of the reference step")
        ratios = np.rint(dtaus / finest).astype(np.int64)
        if np.any(np.abs(ratios * finest - dtaus) > GRID_TOLERANCE) or np.any(fine_steps % ratios):
            raise ConfigError("every dtau must be a multiple of the reference step dividing T")
        if fine_steps * n_paths * sys.noise_dim > MAX_STUDY_INCREMENTS:
            raise ConfigError("weak convergence study is too large for stored increments")
        stepper = self.resolve_scheme(sys, scheme)
        x0 = self._state(sys, x0)
        start = np.array(np.broadcast_to(x0, (n_paths, sys.n)))
        gens = [path_generator(seed, i) for i in range(n_paths)]
        fine = _draw(gens, fine_steps, sys.noise_dim, sys.noise_kind, finest)

        def expectation(increments, dtau):
            result = self._run(sys, start.copy(), lambda s, c: increments[s:s + c], dtau,
                               increments.shape[0], stepper, np.array([increments.shape[0]]), None, None)
            final = result.states[-1][~result.diverged]
            return float(np.mean(observable(final)))

        reference = expectation(fine, finest)
        estimates = []
        for ratio in ratios:
            coarse = fine.reshape(fine_steps // ratio, ratio, n_paths, sys.noise_dim).sum(axis=1)
            estimates.append(expectation(coarse, ratio * finest))
        errors = np.abs(np.asarray(estimates) - reference)
        # exact levels carry no information on the order
        fitted = errors > 0
        if np.count_nonzero(fitted) >= 2:
            slope = float(np.polyfit(np.log(dtaus[fitted]), np.log(errors[fitted]), 1)[0])
        else:
            slope = float("nan")
        return WeakConvergenceReport(
            dtaus=dtaus,
            errors=errors,
            reference_dtau=float(finest),
            reference_value=reference,
            slope=slope,
            estimates=estimates,
        )

    def rk4_step(self, rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def integrate_ode(
        self, rhs: Callable[[np.ndarray], np.ndarray], y0, T: float, dtau: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Classical RK4 over ceil(T/dtau) steps; returns (times, states)"""
        if not dtau > 0 or T < 0:
            raise ConfigError("need dtau > 0 and T >= 0")
        steps = int(np.ceil(T / dtau - GRID_TOLERANCE))
        y = np.asarray(y0)
        states = [y]
        for _ in range(steps):
            y = self.rk4_step(rhs, y, dtau)
            states.append(y)
        return np.arange(steps + 1) * dtau, np.stack(states)
