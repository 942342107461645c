from pathlib import Path
from typing import Any, Iterable, Sequence
import csv
import json
import os
import tempfile
import numpy as np
from injector import singleton, inject
from controllers.display_controller import DisplayController
from controllers.ensemble_controller import Ensemble, ExitReport
from controllers.log_controller import LogController

SNAPSHOT_FIELDS = ["path_id", "tau", "coordinate", "value"]


def _plain(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@singleton
class ExportController:
    """Atomic CSV and JSON output"""

    @inject
    def __init__(self, display: DisplayController, log_controller: LogController):
        self._display = display
        self._log_controller = log_controller

    def _atomic(self, path: Path, write):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                write(f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        self._log_controller.log_message(
            f"wrote {path} ({self._display.format_file_size(path.stat().st_size)})"
        )
        return path

    def write_csv(self, path, fieldnames: Sequence[str], rows: Iterable[Sequence]) -> Path:
        def write(f):
            w = csv.writer(f, lineterminator="\n")
            w.writerow(fieldnames)
            for row in rows:
                w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])

        return self._atomic(path, write)

    def write_json(self, path, obj: Any) -> Path:
        def write(f):
            f.write(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")

        return self._atomic(path, write)

    def snapshot_rows(self, ens: Ensemble):
        """One row per (path, snapshot, coordinate) with the action as value; diverged paths are skipped"""
        paths = np.flatnonzero(~ens.diverged)
        for i in range(len(ens.times)):
            actions = ens.actions(i)
            tau = float(ens.times[i])
            for row, path_id in enumerate(paths):
                for k in range(ens.n):
                    yield int(path_id), tau, k, float(actions[row, k])

    def write_snapshots(self, path, ens: Ensemble) -> Path:
        return self.write_csv(path, SNAPSHOT_FIELDS, self.snapshot_rows(ens))

    def write_exit_cdf(self, path, report: ExitReport) -> Path:
        return self.write_csv(path, ["lambda", "cdf"], zip(report.lambdas.tolist(), report.cdf.tolist()))
