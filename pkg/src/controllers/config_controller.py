from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional
import copy
import numpy as np
import yaml
from easydict import EasyDict
from injector import singleton, inject
from controllers.core_controller import complex_vector
from errors import ConfigError

SYSTEMS = ("full", "averaged_action", "effective", "effective_modified", "deterministic")
MIN_COMPARISON_PATHS = 100

DEFAULTS = {
    "model": {"key": "damped_driven", "params": {}},
    "eps": [0.01],
    "T": 1.0,
    "dtau": 1e-3,
    "N": 1000,
    "seed": 0,
    "snapshot_times": None,
    "systems": ["full"],
    "x0": None,
    "scheme": "auto",
    "quadrature": {"kind": None, "M": None},
    "box": None,
    "burn_in": None,
    "workers": None,
    "block_size": 256,
    "output_dir": "output",
    "check": {"samples": 200, "S": 10, "alpha1": 0.0, "alpha2": 0.0, "radius": 3.0, "moment_N": 200, "moment_T": 5.0},
}


@dataclass
class ExperimentConfig:
    model: str
    params: EasyDict
    eps: List[float]
    T: float
    dtau: float
    N: int
    seed: int
    snapshot_times: List[float]
    systems: List[str]
    x0: Optional[np.ndarray]
    scheme: str
    quadrature: EasyDict
    box: Optional[List[float]]
    burn_in: Optional[float]
    workers: Optional[int]
    block_size: int
    output_dir: Path
    check: EasyDict
    resolved: dict = field(default_factory=dict)


def _merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@singleton
class ConfigController:
    """Loads YAML experiment files into validated ExperimentConfig objects"""

    @inject
    def __init__(self):
        pass

    def load(self, path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            with path.open("r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a mapping at top level")
        return self.from_dict(raw)

    def from_dict(self, raw: dict) -> ExperimentConfig:
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        resolved = _merge(DEFAULTS, raw)
        if isinstance(resolved["model"], str):
            resolved["model"] = {"key": resolved["model"], "params": {}}
        try:
            eps = [float(e) for e in np.atleast_1d(resolved["eps"])]
            T = float(resolved["T"])
            dtau = float(resolved["dtau"])
            N = int(resolved["N"])
            seed = int(resolved["seed"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid numeric config value: {e}") from e
        if any(not e > 0 for e in eps) or len(set(eps)) != len(eps):
            raise ConfigError("eps values must be positive and distinct")
        if not (T > 0 and dtau > 0 and dtau <= T):
            raise ConfigError("need T > 0 and 0 < dtau <= T")
        if N < 2:
            raise ConfigError("N must be at least 2")
        systems = list(resolved["systems"])
        for s in systems:
            if s not in SYSTEMS:
                raise ConfigError(f"unknown system {s!r}; choose from {', '.join(SYSTEMS)}")
        if len(systems) > 1 and N < MIN_COMPARISON_PATHS:
            raise ConfigError(f"comparison runs need N >= {MIN_COMPARISON_PATHS}")
        snapshots = resolved["snapshot_times"]
        snapshot_times = [T] if snapshots is None else sorted(float(t) for t in snapshots)
        if any(t < 0 or t > T for t in snapshot_times):
            raise ConfigError("snapshot times must lie in [0, T]")
        resolved["snapshot_times"] = snapshot_times
        x0 = None if resolved["x0"] is None else complex_vector(resolved["x0"])
        box = resolved["box"]
        if box is not None:
            box = [float(c) for c in np.atleast_1d(box)]
        return ExperimentConfig(
            model=str(resolved["model"]["key"]),
            params=EasyDict(resolved["model"].get("params") or {}),
            eps=eps,
            T=T,
            dtau=dtau,
            N=N,
            seed=seed,
            snapshot_times=snapshot_times,
            systems=systems,
            x0=x0,
            scheme=str(resolved["scheme"]),
            quadrature=EasyDict(resolved["quadrature"]),
            box=box,
            burn_in=None if resolved["burn_in"] is None else float(resolved["burn_in"]),
            workers=None if resolved["workers"] is None else int(resolved["workers"]),
            block_size=int(resolved["block_size"]),
            output_dir=Path(resolved["output_dir"]),
            check=EasyDict(resolved["check"]),
            resolved=resolved,
        )
