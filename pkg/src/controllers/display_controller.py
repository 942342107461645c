from typing import List, Sequence
import numpy as np
from injector import singleton, inject
from prettytable import PrettyTable


@singleton
class DisplayController:
    """Controller for human-readable report tables"""

    @inject
    def __init__(self):
        pass

    def format_file_size(self, size: float) -> str:
        """
        Convert a byte count to a human readable string

        Args:
            size: size in bytes

        Returns:
            Formatted string with a B, KB, MB, GB or TB unit
        """
        for unit in ["B", "KB", "MB", "GB"]:
            if size < 1024:
                return f"{size:.2f} {unit}"
            size /= 1024
        return f"{size:.2f} TB"

    def format_number(self, value) -> str:
        if value is None or (isinstance(value, float) and np.isnan(value)):
            return "-"
        return f"{float(value):.4g}"

    def table(self, fields: Sequence[str], rows: List[Sequence], title: str = "") -> str:
        table = PrettyTable()
        table.field_names = list(fields)
        for row in rows:
            table.add_row([cell if isinstance(cell, str) else self.format_number(cell) for cell in row])
        table.align = "r"
        if title:
            table.title = title
        return table.get_string()

    def sweep_table(self, rows: List[dict]) -> str:
        return self.table(
            ["eps", "tau", "k", "W1(full, effective)", "noise floor", "flag"],
            [
                [r["eps"], r["tau"], str(r["coordinate"]), r["distance"], r["noise_floor"], r["flag"]]
                for r in rows
            ],
            title="epsilon sweep",
        )

    def check_table(self, items: List[dict]) -> str:
        return self.table(
            ["assumption", "check", "status", "detail"],
            [[i["assumption"], i["check"], i["status"], i["detail"]] for i in items],
            title="assumption checks",
        )

    def moment_table(self, report) -> str:
        rows = []
        for i, tau in enumerate(report.times):
            rows.append([tau] + [report.moments[i, j] for j in range(len(report.orders))])
        rows.append(["slope"] + [report.slopes[j] for j in range(len(report.orders))])
        return self.table(
            ["tau"] + [f"E|{'v' if report.quantity == 'state' else 'I'}|^{m}" for m in report.orders],
            rows,
            title="moments",
        )

    def exit_table(self, report) -> str:
        rows = [
            ["paths", report.N],
            ["exits", report.exits],
            ["exponent p", report.exponent],
            ["constant C", report.constant],
            ["fit points", report.fit_points],
            ["max P/sqrt(lambda)", report.max_ratio],
        ]
        return self.table(["quantity", "value"], rows, title="exit times")
