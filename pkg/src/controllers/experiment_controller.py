from dataclasses import dataclass, field
from typing import Dict, List, Optional
import numpy as np
from injector import singleton, inject
from controllers.averaging_controller import AveragingController, QuadratureRule
from controllers.config_controller import ExperimentConfig
from controllers.core_controller import CoreController, DomainBox, actions_of
from controllers.display_controller import DisplayController
from controllers.ensemble_controller import Ensemble, EnsembleController
from controllers.equation_controller import EquationController
from controllers.export_controller import SNAPSHOT_FIELDS, ExportController
from controllers.log_controller import LogController
from controllers.model_controller import ModelController, ModelIngredients
from controllers.sde_controller import PathConfig, SdeSystem
from errors import ConfigError, NumericalError
from version import __version__

DIVERGENCE_LIMIT = 0.10
MIN_SWEEP_EPS = 3
NON_MONOTONE_FACTOR = 2.0
REFERENCE_SEED_OFFSET = 1
CONSTANT_FREQUENCY_TOLERANCE = 1e-12
NOT_APPLICABLE = "n/a"


@dataclass
class SweepResult:
    eps: List[float]
    rows: List[dict] = field(default_factory=list)
    flagged: bool = False


@dataclass
class CheckResult:
    items: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(i["status"] in ("pass", NOT_APPLICABLE) for i in self.items)


def _eps_label(eps: float) -> str:
    return f"{eps:g}".replace(".", "p")


@singleton
class ExperimentController:
    """Configuration-driven runs: simulate, sweep, exit-times and check"""

    @inject
    def __init__(
        self,
        core: CoreController,
        averaging: AveragingController,
        equations: EquationController,
        ensemble: EnsembleController,
        models: ModelController,
        export: ExportController,
        display: DisplayController,
        log_controller: LogController,
    ):
        self._core = core
        self._averaging = averaging
        self._equations = equations
        self._ensemble = ensemble
        self._models = models
        self._export = export
        self._display = display
        self._log_controller = log_controller

    def prepare(self, config: ExperimentConfig):
        model = self._models.build(config.model, config.params)
        kind = config.quadrature.get("kind")
        M = config.quadrature.get("M")
        if kind is None and M is None:
            rule = self._averaging.default_quadrature(model.n)
        else:
            kind = kind or ("tensor" if model.n <= 3 else "lattice")
            M = int(M or (32 if kind == "tensor" else 2**14))
            rule = self._averaging.make_quadrature(model.n, M, kind, seed=config.seed)
        return model, rule

    def initial_state(self, config: ExperimentConfig, model: ModelIngredients) -> np.ndarray:
        if config.x0 is None:
            return np.ones(model.n, dtype=np.complex128)
        if config.x0.shape != (model.n,):
            raise ConfigError(f"x0 must have {model.n} entries")
        return config.x0

    def path_config(
        self, config: ExperimentConfig, seed: Optional[int] = None, T: Optional[float] = None
    ) -> PathConfig:
        return PathConfig(
            dtau=config.dtau,
            T=config.T if T is None else T,
            seed=config.seed if seed is None else seed,
            scheme=config.scheme,
        )

    def build_system(
        self, name: str, model: ModelIngredients, rule: QuadratureRule, eps: Optional[float] = None
    ) -> SdeSystem:
        if name == "full":
            return self._equations.build_full(model.H, model.P, model.B, eps)
        if name == "averaged_action":
            return self._equations.build_averaged_action(model.P, model.B, rule)
        if name == "effective":
            return self._equations.build_effective(model.P, model.B, rule)
        if name == "effective_modified":
            if not model.P.has_split:
                raise ConfigError(f"model {model.key} has no Hamiltonian split for effective_modified")
            return self._equations.build_effective_modified(
                model.P.P1, model.P.h, model.B, rule, full=model.P, h_grad=model.P.h_grad
            )
        raise ConfigError(f"unknown system: {name}")

    def system_seed(self, config: ExperimentConfig, name: str) -> int:
        """Master seed offset by the position of `name` in config.systems"""
        return config.seed + list(config.systems).index(name)

    def run_system(self, sys: SdeSystem, x0: np.ndarray, config: ExperimentConfig, seed: int) -> Ensemble:
        start = actions_of(x0) if sys.state_space == "action" else x0
        ens = self._ensemble.run_ensemble(
            sys,
            start,
            config.N,
            self.path_config(config, seed=seed),
            config.snapshot_times,
            workers=config.workers,
            block_size=config.block_size,
        )
        if ens.diverged_count > DIVERGENCE_LIMIT * ens.N:
            raise NumericalError(f"{sys.tag}: {ens.diverged_count} of {ens.N} paths diverged")
        return ens

    def _metadata(self, config: ExperimentConfig, model: ModelIngredients, rule: QuadratureRule, **extra) -> dict:
        meta = {
            "version": __version__,
            "master_seed": config.seed,
            "model": model.key,
            "eps": config.eps,
            "dtau": config.dtau,
            "T": config.T,
            "N": config.N,
            "quadrature": {"kind": rule.kind, "size": rule.size},
            "config": config.resolved,
        }
        meta.update(extra)
        return meta

    def cmd_simulate(self, config: ExperimentConfig) -> Dict[str, str]:
        """Run every requested system and write one snapshot CSV per system (and eps) plus metadata"""
        model, rule = self.prepare(config)
        x0 = self.initial_state(config, model)
        out = config.output_dir
        written = {}
        diverged = {}
        seeds = {}
        for name in config.systems:
            if name == "deterministic":
                ode = self._equations.build_deterministic_averaged(model.P, rule)
                times, states = self._equations.solve_deterministic(ode, actions_of(x0), config.T, config.dtau)
                rows = (
                    (0, float(t), k, float(states[i, k]))
                    for i, t in enumerate(times)
                    for k in range(model.n)
                )
                path = self._export.write_csv(out / "deterministic.csv", SNAPSHOT_FIELDS, rows)
                written[name] = str(path)
                continue
            eps_values = config.eps if name == "full" else [None]
            # every eps of the full system shares one seed
            seed = self.system_seed(config, name)
            for eps in eps_values:
                sys = self.build_system(name, model, rule, eps)
                ens = self.run_system(sys, x0, config, seed)
                label = name if eps is None else f"{name}_eps{_eps_label(eps)}"
                seeds[label] = seed
                written[label] = str(self._export.write_snapshots(out / f"snapshots_{label}.csv", ens))
                diverged[label] = ens.diverged_count
                if config.burn_in is not None:
                    written[f"{label}_stationary"] = str(self._write_stationary(config, sys, x0, label, seed))
        meta = self._metadata(config, model, rule, outputs=written, diverged=diverged, seeds=seeds)
        self._export.write_json(out / "metadata.json", meta)
        return written

    def _write_stationary(self, config: ExperimentConfig, sys: SdeSystem, x0: np.ndarray, label: str, seed: int):
        start = actions_of(x0) if sys.state_space == "action" else x0
        pooled = self._ensemble.stationary_estimate(
            sys,
            start,
            config.burn_in,
            config.T,
            config.N,
            self.path_config(config, seed=seed),
            workers=config.workers,
        )
        rows = (
            (i, pooled.tau, k, float(pooled.samples[i, k]))
            for i in range(pooled.size)
            for k in range(pooled.n)
        )
        return self._export.write_csv(
            config.output_dir / f"stationary_{label}.csv", SNAPSHOT_FIELDS, rows
        )

    def cmd_epsilon_sweep(self, config: ExperimentConfig) -> SweepResult:
        """W1 between full-system and effective action laws for a decreasing eps sequence"""
        if len(config.eps) < MIN_SWEEP_EPS:
            raise ConfigError(f"an epsilon sweep needs at least {MIN_SWEEP_EPS} eps values")
        model, rule = self.prepare(config)
        x0 = self.initial_state(config, model)
        reference = self.run_system(
            self.build_system("effective", model, rule), x0, config, config.seed + REFERENCE_SEED_OFFSET
        )
        eps_sorted = sorted(config.eps, reverse=True)
        result = SweepResult(eps=eps_sorted)
        distances = {}
        floors = {}
        for eps in eps_sorted:
            full = self.run_system(self.build_system("full", model, rule, eps), x0, config, config.seed)
            for tau in reference.times:
                d_full = self._ensemble.action_distribution(full, tau)
                d_ref = self._ensemble.action_distribution(reference, tau)
                dist = self._ensemble.wasserstein1(d_full, d_ref).per_coordinate
                floor = np.maximum(
                    self._ensemble.noise_floor(full, tau).per_coordinate,
                    self._ensemble.noise_floor(reference, tau).per_coordinate,
                )
                for k in range(model.n):
                    distances.setdefault((float(tau), k), []).append(float(dist[k]))
                    floors.setdefault((float(tau), k), []).append(float(floor[k]))
        for (tau, k), seq in sorted(distances.items()):
            floor_seq = floors[(tau, k)]
            for i, eps in enumerate(eps_sorted):
                flag = ""
                if i > 0 and seq[i] > seq[i - 1] + NON_MONOTONE_FACTOR * max(floor_seq[i], floor_seq[i - 1]):
                    flag = "non-monotone"
                    result.flagged = True
                result.rows.append(
                    {
                        "eps": eps,
                        "tau": tau,
                        "coordinate": k,
                        "distance": seq[i],
                        "noise_floor": floor_seq[i],
                        "flag": flag,
                    }
                )
        if result.flagged:
            self._log_controller.log_warning("distance sequence is not monotone beyond 2x the noise floor")
        out = config.output_dir
        self._export.write_csv(
            out / "sweep.csv",
            ["eps", "tau", "coordinate", "distance", "noise_floor", "flag"],
            ([r["eps"], r["tau"], r["coordinate"], r["distance"], r["noise_floor"], r["flag"]] for r in result.rows),
        )
        self._export.write_json(
            out / "sweep.json", self._metadata(config, model, rule, rows=result.rows, flagged=result.flagged)
        )
        self._log_controller.log_message(self._display.sweep_table(result.rows))
        return result

    def cmd_exit_times(self, config: ExperimentConfig):
        """Exit-time CDF of the full system at the first eps"""
        if config.box is None:
            raise ConfigError("exit-times needs a box")
        model, rule = self.prepare(config)
        x0 = self.initial_state(config, model)
        box = DomainBox(config.box if len(config.box) > 1 else config.box * model.n)
        sys = self.build_system("full", model, rule, config.eps[0])
        report = self._ensemble.exit_time_stats(
            sys, x0, box, config.N, self.path_config(config), workers=config.workers, block_size=config.block_size
        )
        out = config.output_dir
        self._export.write_exit_cdf(out / "exit_cdf.csv", report)
        fit = {
            "exits": report.exits,
            "paths": report.N,
            "exponent": report.exponent,
            "constant": report.constant,
            "fit_points": report.fit_points,
            "max_ratio": report.max_ratio,
        }
        self._export.write_json(out / "exit_fit.json", self._metadata(config, model, rule, exit_fit=fit))
        self._log_controller.log_message(self._display.exit_table(report))
        return report

    def cmd_check(self, config: ExperimentConfig) -> CheckResult:
        """Report-only run of the assumption checkers"""
        model, rule = self.prepare(config)
        n = model.n
        settings = config.check
        rng = np.random.default_rng(config.seed)
        radius = float(settings.radius)
        z = rng.standard_normal((int(settings.samples), n, 2))
        v_samples = radius * (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2 * n)
        I_samples = rng.uniform(0.0, 0.5 * radius**2, (int(settings.samples), n))
        result = CheckResult()

        def add(assumption, check, passed, detail, fail_status="warn", status=None):
            result.items.append(
                {
                    "assumption": assumption,
                    "check": check,
                    "status": status or ("pass" if passed else fail_status),
                    "detail": detail,
                }
            )

        scan = self._core.resonance_scan(model.H, I_samples, int(settings.S))
        add("nonresonance", "resonance scan", scan.passed,
            f"{scan.near_resonant.size} near-resonant samples, min ratio {np.min(scan.min_ratio):.3g}")
        omega = np.asarray(model.H.frequencies(I_samples))
        if np.all(np.ptp(omega, axis=0) <= CONSTANT_FREQUENCY_TOLERANCE * (1.0 + np.max(np.abs(omega)))):
            # the determinant vanishes identically for action-independent frequencies
            add("nonresonance", "Kolmogorov det", True, "not applicable: constant frequencies",
                status=NOT_APPLICABLE)
        else:
            kolmogorov = self._core.kolmogorov_check(model.H, I_samples)
            add("nonresonance", "Kolmogorov det", kolmogorov.passed,
                f"{kolmogorov.degenerate.size} degenerate samples")
        if model.H.H is not None and model.H.gradH is not None:
            error = self._core.check_frequency_gradient(model.H, I_samples + 0.1)
            add("smoothness", "frequency gradient", error <= 1e-5, f"max relative error {error:.3g}")
        rank = self._core.check_rank(model.B, v_samples)
        add("noise rank", "dispersion rank", rank.passed, f"{rank.flagged.size} rank-deficient samples", "fail")
        coercive = self._core.check_coercivity(model.P, v_samples, float(settings.alpha1), float(settings.alpha2))
        add("dissipation", "coercivity", coercive.passed, f"max excess {coercive.max_excess:.3g}")
        if model.P.has_split:
            residual = self._core.check_hamiltonian_split(model.P, v_samples)
            add("dissipation", "hamiltonian split", residual <= 1e-8, f"residual {residual:.3g}")
        add("moments", "moment growth", *self._moment_growth(config, model, rule))
        out = config.output_dir
        self._export.write_json(out / "check.json", self._metadata(config, model, rule, checks=result.items))
        self._log_controller.log_message(self._display.check_table(result.items))
        return result

    def _moment_growth(self, config: ExperimentConfig, model: ModelIngredients, rule: QuadratureRule):
        T = float(config.check.moment_T)
        cfg = self.path_config(config, T=T)
        times = [T * j / 4 for j in range(1, 5)]
        sys = self.build_system("full", model, rule, config.eps[0])
        try:
            ens = self._ensemble.run_ensemble(
                sys, self.initial_state(config, model), int(config.check.moment_N), cfg,
                [round(t / cfg.dtau) * cfg.dtau for t in times], workers=config.workers,
            )
        except NumericalError as e:
            return False, f"moment run failed: {e}"
        report = self._ensemble.moment_report(ens)
        if ens.diverged_count:
            return False, f"{ens.diverged_count} diverged paths"
        slopes = ", ".join(f"m={m}: {s:.3g}" for m, s in zip(report.orders, report.slopes))
        self._log_controller.log_message(self._display.moment_table(report))
        return not report.growing, f"log-moment slopes {slopes}"
