import argparse
import sys
from typing import Dict, Optional
from injector import Injector
from tqdm import tqdm
from di.app_module import DynamicAppModule
from controllers.config_controller import ConfigController
from controllers.experiment_controller import ExperimentController
from controllers.log_controller import LogController
from errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ProgressBars:
    """One tqdm bar per progress task, written to stderr"""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._bars: Dict[str, tqdm] = {}

    def update(self, task: str, done: int, total: int):
        if not self.enabled:
            return
        bar = self._bars.get(task)
        if bar is None:
            bar = tqdm(total=total, desc=task, file=sys.stderr, leave=False)
            self._bars[task] = bar
        bar.update(max(0, done - bar.n))
        if done >= total:
            bar.close()
            del self._bars[task]

    def close(self):
        for bar in self._bars.values():
            bar.close()
        self._bars.clear()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="averaging-lab",
        description="Averaging experiments for stochastically perturbed integrable systems",
    )
    parser.add_argument("--quiet", action="store_true", help="no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "run the configured systems and write snapshot CSVs"),
        ("sweep", "epsilon sweep of full-vs-effective action distances"),
        ("exit-times", "exit-time CDF from the configured box"),
        ("check", "report on the model assumptions"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="YAML experiment file")
    return parser


def main(argv: Optional[list] = None, injector: Optional[Injector] = None) -> int:
    args = build_parser().parse_args(argv)
    injector = injector or Injector([DynamicAppModule()])
    log_controller = injector.get(LogController)
    bars = ProgressBars(enabled=not args.quiet)

    def write_message(message: str):
        tqdm.write(message, file=sys.stderr)

    log_controller.add_listener(write_message)
    log_controller.add_progress_listener(bars.update)
    try:
        config = injector.get(ConfigController).load(args.config)
        experiments = injector.get(ExperimentController)
        if args.command == "simulate":
            experiments.cmd_simulate(config)
        elif args.command == "sweep":
            experiments.cmd_epsilon_sweep(config)
        elif args.command == "exit-times":
            experiments.cmd_exit_times(config)
        else:
            experiments.cmd_check(config)
    except ConfigError as e:
        write_message(f"config error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        write_message(f"numerical failure: {e}")
        return EXIT_NUMERICAL
    finally:
        bars.close()
        log_controller.remove_listener(write_message)
        log_controller.remove_progress_listener(bars.update)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
