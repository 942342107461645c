from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence
import os
import numpy as np
from injector import singleton, inject
from scipy.stats import ks_2samp
from controllers.core_controller import DomainBox, actions_of
from controllers.log_controller import LogController
from controllers.sde_controller import (
    BatchResult,
    PathConfig,
    SdeController,
    SdeSystem,
    path_generator,
)
from errors import ConfigError, DimensionError

BLOCK_SIZE = 256
DIVERGENCE_WARNING = 0.10
QUANTILE_GRID = 512
MOMENT_ORDERS = (1, 2, 4)
GROWTH_SLOPE = 0.1
MIN_EXITS = 50
FIT_WINDOW = (0.01, 0.5)
LAMBDA_POINTS = 40
STATIONARY_SNAPSHOTS = 10
NON_STATIONARY_FACTOR = 3.0
TIME_TOLERANCE = 1e-9


@dataclass
class Ensemble:
    """Snapshots (times, N, n) of N paths; rows of diverged paths hold NaN"""

    times: np.ndarray
    snapshots: np.ndarray
    diverged: np.ndarray
    master_seed: int
    tag: str
    state_space: str
    dtau: float

    def __post_init__(self):
        if self.snapshots.shape[1] < 2:
            raise ConfigError("an ensemble needs at least two paths")

    @property
    def N(self) -> int:
        return self.snapshots.shape[1]

    @property
    def n(self) -> int:
        return self.snapshots.shape[2]

    @property
    def diverged_count(self) -> int:
        return int(np.count_nonzero(self.diverged))

    def snapshot_index(self, tau: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - tau) <= TIME_TOLERANCE * max(1.0, abs(tau)))
        if hits.size == 0:
            raise ConfigError(f"tau={tau} is not a snapshot time of this ensemble")
        return int(hits[0])

    def actions(self, index: int) -> np.ndarray:
        """(valid paths, n) actions at snapshot `index`"""
        states = self.snapshots[index][~self.diverged]
        if self.state_space == "complex":
            return actions_of(states)
        return np.asarray(states, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Per-coordinate sorted samples (size, n)"""

    samples: np.ndarray
    tau: Optional[float] = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 1:
            raise ConfigError("empirical distribution needs at least one sample")
        s = np.sort(s, axis=0)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Empirical quantile function (left-continuous inverse CDF), shape (len(u), n)"""
        idx = np.clip(np.ceil(np.asarray(u) * self.size).astype(np.int64) - 1, 0, self.size - 1)
        return self.samples[idx]

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.stack(
            [np.searchsorted(self.samples[:, k], x, side="right") / self.size for k in range(self.n)],
            axis=-1,
        )


@dataclass
class WassersteinResult:
    per_coordinate: np.ndarray
    maximum: float


@dataclass
class MomentReport:
    times: np.ndarray
    orders: tuple
    moments: np.ndarray
    stderr: np.ndarray
    slopes: np.ndarray
    growth: np.ndarray
    quantity: str

    @property
    def growing(self) -> bool:
        return bool(np.any(self.growth))


@dataclass
class ExitReport:
    lambdas: np.ndarray
    cdf: np.ndarray
    exit_times: np.ndarray
    exits: int
    N: int
    exponent: Optional[float] = None
    constant: Optional[float] = None
    fit_points: int = 0
    max_ratio: Optional[float] = None


@singleton
class EnsembleController:
    """Monte Carlo ensembles and the statistics computed on them"""

    @inject
    def __init__(self, sde: SdeController, log_controller: LogController):
        self._sde = sde
        self._log_controller = log_controller

    def _simulate(
        self,
        sys: SdeSystem,
        x0,
        N: int,
        cfg: PathConfig,
        record_steps: np.ndarray,
        box: Optional[DomainBox],
        workers: Optional[int],
        block_size: int,
        task: str,
    ) -> BatchResult:
        if N < 2:
            raise ConfigError("an ensemble needs N >= 2")
        x0 = np.asarray(x0)
        if x0.ndim == 2 and x0.shape[0] != N:
            raise DimensionError(f"{x0.shape[0]} initial states for {N} paths")
        blocks = [(start, min(start + block_size, N)) for start in range(0, N, block_size)]
        workers = workers or min(8, os.cpu_count() or 1)

        def run_block(start, stop):
            gens = [path_generator(cfg.seed, i) for i in range(start, stop)]
            start_states = x0[start:stop] if x0.ndim == 2 else x0
            return self._sde.integrate_batch(sys, start_states, gens, cfg, record_steps, box)

        results: List[Optional[BatchResult]] = [None] * len(blocks)
        done = 0
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_block, *b): i for i, b in enumerate(blocks)}
            for future in as_completed(futures):
                i = futures[future]
                results[i] = future.result()
                done += blocks[i][1] - blocks[i][0]
                self._log_controller.update_progress(task, done, N)
        return BatchResult(
            steps=np.asarray(record_steps),
            states=np.concatenate([r.states for r in results], axis=1),
            diverged=np.concatenate([r.diverged for r in results]),
            diverged_step=np.concatenate([r.diverged_step for r in results]),
            exit_step=np.concatenate([r.exit_step for r in results]),
        )

    def _report_divergence(self, diverged: np.ndarray, tag: str):
        count = int(np.count_nonzero(diverged))
        if count > DIVERGENCE_WARNING * diverged.size:
            self._log_controller.log_warning(
                f"{tag}: {count} of {diverged.size} paths diverged (> {DIVERGENCE_WARNING:.0%})"
            )
        elif count:
            self._log_controller.log_message(f"{tag}: dropped {count} diverged paths")

    def run_ensemble(
        self,
        sys: SdeSystem,
        x0,
        N: int,
        cfg: PathConfig,
        snapshot_times: Sequence[float],
        workers: Optional[int] = None,
        block_size: int = BLOCK_SIZE,
    ) -> Ensemble:
        """
        N independent paths with per-path generators derived from cfg.seed

        Args:
            sys: system to integrate
            x0: (n,) common start or (N, n) per-path starts
            N: number of paths
            cfg: step, horizon, master seed and scheme
            snapshot_times: times on the step grid within [0, T]
            workers: thread count; results do not depend on it
            block_size: paths advanced together in one vectorized batch

        Returns:
            Ensemble with snapshots at the sorted distinct snapshot times
        """
        times = np.unique(np.asarray(snapshot_times, dtype=np.float64))
        if times.size == 0:
            raise ConfigError("need at least one snapshot time")
        steps = self._sde.steps_for_times(times, cfg)
        batch = self._simulate(sys, x0, N, cfg, steps, None, workers, block_size, sys.tag or "ensemble")
        self._report_divergence(batch.diverged, sys.tag or "ensemble")
        return Ensemble(
            times=steps * cfg.dtau,
            snapshots=batch.states,
            diverged=batch.diverged,
            master_seed=cfg.seed,
            tag=sys.tag,
            state_space=sys.state_space,
            dtau=cfg.dtau,
        )

    def action_distribution(self, ens: Ensemble, tau: float) -> EmpiricalDistribution:
        index = ens.snapshot_index(tau)
        return EmpiricalDistribution(ens.actions(index), tau=float(ens.times[index]))

    def wasserstein1(self, d1: EmpiricalDistribution, d2: EmpiricalDistribution) -> WassersteinResult:
        """Per-coordinate W1; exact sorted coupling for equal sizes, 512-quantile coupling otherwise"""
        if d1.n != d2.n:
            raise DimensionError(f"distributions have n={d1.n} and n={d2.n}")
        if d1.size == d2.size:
            distance = np.mean(np.abs(d1.samples - d2.samples), axis=0)
        else:
            u = (np.arange(QUANTILE_GRID) + 0.5) / QUANTILE_GRID
            distance = np.mean(np.abs(d1.quantile(u) - d2.quantile(u)), axis=0)
        return WassersteinResult(per_coordinate=distance, maximum=float(np.max(distance)))

    def wasserstein1_to_law(
        self, d: EmpiricalDistribution, quantile: Callable[[np.ndarray], np.ndarray]
    ) -> WassersteinResult:
        """W1 against a law given by its quantile function, evaluated at the sample midpoints"""
        u = (np.arange(d.size) + 0.5) / d.size
        reference = np.asarray(quantile(u), dtype=np.float64)
        if reference.shape != d.samples.shape:
            raise DimensionError(f"quantile returned {reference.shape}, expected {d.samples.shape}")
        distance = np.mean(np.abs(d.samples - reference), axis=0)
        return WassersteinResult(per_coordinate=distance, maximum=float(np.max(distance)))

    def noise_floor(self, ens: Ensemble, tau: float) -> WassersteinResult:
        """W1 between the first and second half of the paths"""
        actions = ens.actions(ens.snapshot_index(tau))
        half = actions.shape[0] // 2
        if half < 1:
            raise ConfigError("noise floor needs at least two valid paths")
        return self.wasserstein1(
            EmpiricalDistribution(actions[:half]), EmpiricalDistribution(actions[half:2 * half])
        )

    def ks_distance(self, d1: EmpiricalDistribution, d2: EmpiricalDistribution) -> np.ndarray:
        if d1.n != d2.n:
            raise DimensionError(f"distributions have n={d1.n} and n={d2.n}")
        return np.array([ks_2samp(d1.samples[:, k], d2.samples[:, k]).statistic for k in range(d1.n)])

    def moment_report(self, ens: Ensemble, orders: Sequence[int] = MOMENT_ORDERS) -> MomentReport:
        """E|v|^m per snapshot (E|I|^m on action ensembles) with a log-linear growth fit"""
        orders = tuple(int(m) for m in orders)
        valid = ens.snapshots[:, ~ens.diverged]
        norms = np.linalg.norm(valid, axis=-1)
        moments = np.stack([np.mean(norms**m, axis=1) for m in orders], axis=-1)
        stderr = np.stack([np.std(norms**m, axis=1) / np.sqrt(max(norms.shape[1], 1)) for m in orders], axis=-1)
        slopes = np.full(len(orders), np.nan)
        if len(ens.times) >= 2:
            for j in range(len(orders)):
                if np.all(moments[:, j] > 0) and np.all(np.isfinite(moments[:, j])):
                    slopes[j] = np.polyfit(ens.times, np.log(moments[:, j]), 1)[0]
        growth = np.nan_to_num(slopes, nan=0.0) > GROWTH_SLOPE
        return MomentReport(
            times=ens.times,
            orders=orders,
            moments=moments,
            stderr=stderr,
            slopes=slopes,
            growth=growth,
            quantity="state" if ens.state_space == "complex" else "action",
        )

    def exit_time_stats(
        self,
        sys: SdeSystem,
        x0,
        box: DomainBox,
        N: int,
        cfg: PathConfig,
        lambda_points: int = LAMBDA_POINTS,
        workers: Optional[int] = None,
        block_size: int = BLOCK_SIZE,
    ) -> ExitReport:
        """
        First exit times from the box on the step grid and a power-law fit of their CDF

        The fit uses log P(theta <= lambda) against log lambda over the grid points with
        0.01 <= P <= 0.5; with fewer than two such points no fit is reported.
        """
        if sys.state_space != "complex":
            raise ConfigError("exit times are defined for complex-state systems")
        x0 = np.asarray(x0, dtype=np.complex128)
        if box.C.shape[0] != sys.n:
            raise DimensionError(f"box has {box.C.shape[0]} radii, system has n={sys.n}")
        if np.any(box.outside(x0)):
            raise ConfigError("x0 must lie in the box")
        batch = self._simulate(
            sys, x0, N, cfg, np.array([0]), box, workers, block_size, f"exit times ({sys.tag})"
        )
        counted = ~batch.diverged | (batch.exit_step >= 0)
        exit_times = np.where(batch.exit_step >= 0, batch.exit_step * cfg.dtau, np.nan)[counted]
        exits = int(np.count_nonzero(np.isfinite(exit_times)))
        lambdas = np.geomspace(cfg.dtau, cfg.steps * cfg.dtau, lambda_points)
        finite = np.sort(exit_times[np.isfinite(exit_times)])
        cdf = np.searchsorted(finite, lambdas * (1 + TIME_TOLERANCE), side="right") / max(exit_times.size, 1)
        report = ExitReport(lambdas=lambdas, cdf=cdf, exit_times=exit_times, exits=exits, N=int(exit_times.size))
        if exits < MIN_EXITS:
            self._log_controller.log_warning(f"only {exits} exits observed; the exit-time fit is unreliable")
        window = (cdf >= FIT_WINDOW[0]) & (cdf <= FIT_WINDOW[1])
        if np.count_nonzero(window) >= 2 and np.unique(cdf[window]).size >= 2:
            slope, intercept = np.polyfit(np.log(lambdas[window]), np.log(cdf[window]), 1)
            report.exponent = float(slope)
            report.constant = float(np.exp(intercept))
            report.fit_points = int(np.count_nonzero(window))
            report.max_ratio = float(np.max(cdf[window] / np.sqrt(lambdas[window])))
        return report

    def stationary_estimate(
        self,
        sys: SdeSystem,
        x0,
        burn_in: float,
        T: float,
        N: int,
        cfg: PathConfig,
        snapshots: int = STATIONARY_SNAPSHOTS,
        workers: Optional[int] = None,
    ) -> EmpiricalDistribution:
        """Pool action snapshots over [burn_in, T]; warns on drift between the two halves of the window"""
        if not 0 <= burn_in < T:
            raise ConfigError("need 0 <= burn_in < T")
        cfg = replace(cfg, T=T)
        first = int(np.ceil(burn_in / cfg.dtau - TIME_TOLERANCE))
        steps = np.unique(np.linspace(first, cfg.steps, max(snapshots, 2)).round().astype(np.int64))
        if steps.size < 2:
            raise ConfigError(f"burn-in window [{burn_in}, {T}] holds fewer than 2 steps of size {cfg.dtau}")
        ens = self.run_ensemble(sys, x0, N, cfg, steps * cfg.dtau, workers=workers)
        per_time = [ens.actions(i) for i in range(len(ens.times))]
        pooled = EmpiricalDistribution(np.concatenate(per_time), tau=float(ens.times[-1]))
        half = len(per_time) // 2
        early = EmpiricalDistribution(np.concatenate(per_time[:half]))
        late = EmpiricalDistribution(np.concatenate(per_time[half:2 * half]))
        drift = self.wasserstein1(early, late).maximum
        floor = self.noise_floor(ens, float(ens.times[-1])).maximum
        if drift > NON_STATIONARY_FACTOR * floor:
            self._log_controller.log_warning(
                f"{sys.tag or 'system'} looks non-stationary after burn-in: "
                f"half-window distance {drift:.3g} > {NON_STATIONARY_FACTOR:g} x noise floor {floor:.3g}"
            )
        if np.all(np.ptp(pooled.samples, axis=0) <= 1e-12 * (1.0 + np.abs(pooled.samples[-1]))):
            self._log_controller.log_warning(
                f"{sys.tag or 'system'} stationary estimate is degenerate (no spread in the actions)"
            )
        return pooled
